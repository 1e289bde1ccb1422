//! Ensemble robustness experiments: bounded error signals, worst-case
//! fidelity and mean objective over noise levels, and random-model sweeps.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{optimize_protocol, optimize_qaoa, stream_rng, CostSpec, OptimizeReport, OptimizerOptions, Schedule};
use crate::dynamics::{fidelity, fidelity_lower_bound, lipschitz_bound_segments, propagate_segments, ErrorSignal, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::operators::{build_ising, ground_state_of_b, HamiltonianPair, IsingModel, NormKind};

/// Stream offset separating model draws from ensemble draws.
const MODEL_STREAM: u64 = 1 << 32;
const OPTIMIZER_STREAM: u64 = 2 << 32;

/// A fixed set of unit-amplitude error signals; levels are applied by scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnsemble {
    signals: Vec<ErrorSignal>,
    seed: u64,
}

impl ErrorEnsemble {
    pub fn signals(&self) -> &[ErrorSignal] {
        &self.signals
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }
}

/// `n_signals` signals of `n_sections` amplitudes, i.i.d. uniform on `[-1, 1]`.
pub fn generate_ensemble(n_signals: usize, n_sections: usize, seed: u64) -> Result<ErrorEnsemble> {
    if n_signals == 0 || n_sections == 0 {
        return Err(Error::Config("ensemble needs at least one signal and one section".into()));
    }
    let signals = (0..n_signals)
        .map(|j| {
            let mut rng = stream_rng(seed, j as u64);
            let amps = (0..n_sections).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            ErrorSignal::new(amps, 1.0)
        })
        .collect::<Result<_>>()?;
    Ok(ErrorEnsemble { signals, seed })
}

/// `0, 0.01, ..., 0.2`.
pub fn default_eps_levels() -> Vec<f64> {
    (0..=20).map(|i| 0.01 * i as f64).collect()
}

/// Noisy final states of `schedule` for every signal at level `eps_hat`.
fn noisy_finals(ham: &HamiltonianPair, schedule: &Schedule, ensemble: &ErrorEnsemble, eps_hat: f64) -> Result<Vec<DVector<C64>>> {
    let x0 = ground_state_of_b(ham);
    ensemble
        .signals
        .par_iter()
        .map(|s| {
            let scaled = s.scaled(eps_hat);
            let traj = propagate_segments(ham, &schedule.segments(Some(&scaled)), &x0)?;
            Ok(traj.states.into_iter().last().expect("trajectory is non-empty"))
        })
        .collect()
}

fn noiseless_final(ham: &HamiltonianPair, schedule: &Schedule) -> Result<DVector<C64>> {
    let traj = propagate_segments(ham, &schedule.segments(None), &ground_state_of_b(ham))?;
    Ok(traj.states.into_iter().last().expect("trajectory is non-empty"))
}

/// Worst fidelity and mean objective at one level, from a single pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub worst_fidelity: f64,
    pub mean_objective: f64,
}

pub fn level_stats(ham: &HamiltonianPair, schedule: &Schedule, ensemble: &ErrorEnsemble, eps_hat: f64) -> Result<LevelStats> {
    let reference = noiseless_final(ham, schedule)?;
    stats_against(ham, schedule, ensemble, eps_hat, &reference)
}

fn stats_against(
    ham: &HamiltonianPair,
    schedule: &Schedule,
    ensemble: &ErrorEnsemble,
    eps_hat: f64,
    reference: &DVector<C64>,
) -> Result<LevelStats> {
    let finals = noisy_finals(ham, schedule, ensemble, eps_hat)?;
    let worst_fidelity = finals.iter().map(|x| fidelity(x, reference)).fold(1.0, f64::min);
    let mean_objective = finals.iter().map(|x| ham.energy(x.as_slice())).sum::<f64>() / finals.len() as f64;
    Ok(LevelStats {
        worst_fidelity,
        mean_objective,
    })
}

/// `min_j |⟨x_{ε̂ s_j}(T)|x_0(T)⟩|` over the ensemble.
pub fn worst_fidelity(ham: &HamiltonianPair, schedule: &Schedule, ensemble: &ErrorEnsemble, eps_hat: f64) -> Result<f64> {
    Ok(level_stats(ham, schedule, ensemble, eps_hat)?.worst_fidelity)
}

/// Mean of `⟨x_{ε̂ s_j}(T)|C|x_{ε̂ s_j}(T)⟩` over the ensemble.
pub fn mean_objective(ham: &HamiltonianPair, schedule: &Schedule, ensemble: &ErrorEnsemble, eps_hat: f64) -> Result<f64> {
    Ok(level_stats(ham, schedule, ensemble, eps_hat)?.mean_objective)
}

/// A schedule with the name it is reported under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSchedule {
    pub name: String,
    pub schedule: Schedule,
}

/// One approach's columns in a [`RobustnessCurve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachCurve {
    pub name: String,
    /// `L = Σ ‖H(u)‖₂ Δτ` of the schedule.
    pub lipschitz: f64,
    pub worst_fidelity: Vec<f64>,
    pub mean_objective: Vec<f64>,
    pub fidelity_lower_bound: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve {
    pub eps_levels: Vec<f64>,
    pub approaches: Vec<ApproachCurve>,
}

impl RobustnessCurve {
    pub fn approach(&self, name: &str) -> Option<&ApproachCurve> {
        self.approaches.iter().find(|a| a.name == name)
    }
}

/// Tabulates every schedule against the same ensemble at every level.
pub fn robustness_curve(
    ham: &HamiltonianPair,
    schedules: &[NamedSchedule],
    ensemble: &ErrorEnsemble,
    eps_levels: &[f64],
) -> Result<RobustnessCurve> {
    if let Some(e) = eps_levels.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::Config(format!("noise level {e} must be finite and non-negative")));
    }
    let approaches = schedules
        .iter()
        .map(|named| {
            let reference = noiseless_final(ham, &named.schedule)?;
            let lipschitz = lipschitz_bound_segments(ham, &named.schedule.segments(None), NormKind::SPECTRAL)?;
            let stats = eps_levels
                .iter()
                .map(|&eps| stats_against(ham, &named.schedule, ensemble, eps, &reference))
                .collect::<Result<Vec<_>>>()?;
            Ok(ApproachCurve {
                name: named.name.clone(),
                lipschitz,
                worst_fidelity: stats.iter().map(|s| s.worst_fidelity).collect(),
                mean_objective: stats.iter().map(|s| s.mean_objective).collect(),
                fidelity_lower_bound: eps_levels.iter().map(|&e| fidelity_lower_bound(lipschitz, e)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessCurve {
        eps_levels: eps_levels.to_vec(),
        approaches,
    })
}

/// How one named approach is optimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Piecewise-constant control on the grid with regularization weight `zeta`.
    Grid { zeta: f64, norm: NormKind },
    /// Bang-bang control with `n_bangs` free durations.
    Qaoa { n_bangs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Approach {
    pub name: String,
    #[serde(flatten)]
    pub method: Method,
}

impl Approach {
    pub fn grid(name: &str, zeta: f64, norm: NormKind) -> Self {
        Self {
            name: name.into(),
            method: Method::Grid { zeta, norm },
        }
    }

    pub fn qaoa(name: &str, n_bangs: usize) -> Self {
        Self {
            name: name.into(),
            method: Method::Qaoa { n_bangs },
        }
    }

    /// Nominal, QAOA with 8 bangs, and spectral- and Frobenius-regularized
    /// protocols at weight `zeta`.
    pub fn standard_set(zeta: f64) -> Vec<Approach> {
        vec![
            Approach::grid("nominal", 0.0, NormKind::SPECTRAL),
            Approach::qaoa("qaoa", 8),
            Approach::grid("spectral", zeta, NormKind::SPECTRAL),
            Approach::grid("frobenius", zeta, NormKind::FROBENIUS),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::Grid { zeta, .. } if !(zeta.is_finite() && zeta >= 0.0) => {
                Err(Error::Config(format!("approach {:?}: zeta must be finite and non-negative", self.name)))
            }
            Method::Qaoa { n_bangs } if n_bangs < 2 => {
                Err(Error::Config(format!("approach {:?}: at least 2 bangs are required", self.name)))
            }
            _ => Ok(()),
        }
    }

    pub fn solve(&self, ham: &HamiltonianPair, grid: TimeGrid, options: &OptimizerOptions) -> Result<OptimizeReport> {
        self.validate()?;
        match self.method {
            Method::Grid { zeta, norm } => optimize_protocol(ham, &CostSpec::robust(zeta, norm), grid, None, options),
            Method::Qaoa { n_bangs } => optimize_qaoa(ham, grid, n_bangs, None, options),
        }
    }
}

/// Parameters of a random-model sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub n_models: usize,
    pub n_qubits: usize,
    pub horizon: f64,
    pub n_steps: usize,
    pub approaches: Vec<Approach>,
    pub options: OptimizerOptions,
}

/// One model's outcome, persisted as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub index: usize,
    pub couplings: Vec<Vec<f64>>,
    /// `|λ_min(C)|`, the normalization of objective values.
    pub normalization: f64,
    /// `None` when every approach optimized successfully.
    pub failure: Option<String>,
    pub approaches: Vec<ModelApproach>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelApproach {
    pub name: String,
    pub worst_fidelity: Vec<f64>,
    /// Mean objective divided by `|λ_min(C)|`.
    pub normalized_objective: Vec<f64>,
}

/// Per-level averages over the completed models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSweepResult {
    pub eps_levels: Vec<f64>,
    pub n_models: usize,
    pub n_failed: usize,
    pub approaches: Vec<SweepAverages>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAverages {
    pub name: String,
    pub worst_fidelity: Vec<f64>,
    pub normalized_objective: Vec<f64>,
}

/// The random model with index `index` in the sweep seeded by `seed`.
pub fn sweep_model(seed: u64, index: usize, n_qubits: usize) -> IsingModel {
    IsingModel::random(n_qubits, &mut stream_rng(seed, MODEL_STREAM + index as u64))
}

/// Optimizes every approach on model `index` and evaluates its curves.
pub fn run_sweep_model(
    spec: &SweepSpec,
    ensemble: &ErrorEnsemble,
    eps_levels: &[f64],
    seed: u64,
    index: usize,
) -> Result<ModelRecord> {
    let model = sweep_model(seed, index, spec.n_qubits);
    let ham = build_ising(&model)?;
    let grid = TimeGrid::new(spec.horizon, spec.n_steps)?;
    let normalization = ham.c_min().abs();
    let mut record = ModelRecord {
        index,
        couplings: model.couplings().to_vec(),
        normalization,
        failure: None,
        approaches: Vec::new(),
    };
    if normalization == 0.0 {
        record.failure = Some("cost Hamiltonian has zero ground energy".into());
        return Ok(record);
    }
    let options = OptimizerOptions {
        seed: stream_rng(seed, OPTIMIZER_STREAM + index as u64).gen(),
        ..spec.options
    };
    let mut schedules = Vec::new();
    for approach in &spec.approaches {
        match approach.solve(&ham, grid, &options) {
            Ok(report) => schedules.push(NamedSchedule {
                name: approach.name.clone(),
                schedule: report.schedule(),
            }),
            Err(e @ (Error::NonFiniteCost | Error::InvalidSchedule(_))) => {
                record.failure = Some(format!("{}: {e}", approach.name));
                return Ok(record);
            }
            Err(e) => return Err(e),
        }
    }
    let curve = robustness_curve(&ham, &schedules, ensemble, eps_levels)?;
    record.approaches = curve
        .approaches
        .into_iter()
        .map(|a| ModelApproach {
            name: a.name,
            worst_fidelity: a.worst_fidelity,
            normalized_objective: a.mean_objective.iter().map(|o| o / normalization).collect(),
        })
        .collect();
    Ok(record)
}

/// Runs every model index not yet in `done`, handing each finished record to
/// `sink` in index order, then aggregates all records.
pub fn random_ising_sweep<S>(
    spec: &SweepSpec,
    ensemble: &ErrorEnsemble,
    eps_levels: &[f64],
    seed: u64,
    done: Vec<ModelRecord>,
    mut sink: S,
) -> Result<EnsembleSweepResult>
where
    S: FnMut(&ModelRecord) -> Result<()>,
{
    let mut records = done;
    let pending: Vec<usize> = (0..spec.n_models)
        .filter(|i| !records.iter().any(|r| r.index == *i))
        .collect();
    let batch = rayon::current_num_threads().max(1);
    for chunk in pending.chunks(batch) {
        let finished = chunk
            .par_iter()
            .map(|&i| run_sweep_model(spec, ensemble, eps_levels, seed, i))
            .collect::<Result<Vec<_>>>()?;
        for r in finished {
            sink(&r)?;
            records.push(r);
        }
    }
    aggregate_sweep(&records, &spec.approaches, eps_levels)
}

/// Averages completed records in index order, so input order does not matter.
pub fn aggregate_sweep(records: &[ModelRecord], approaches: &[Approach], eps_levels: &[f64]) -> Result<EnsembleSweepResult> {
    let mut sorted: Vec<&ModelRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.index);
    let completed: Vec<&ModelRecord> = sorted.iter().copied().filter(|r| r.failure.is_none()).collect();
    let n = completed.len();
    let levels = eps_levels.len();
    let mut out = Vec::new();
    for approach in approaches {
        let mut wf = vec![0.0; levels];
        let mut obj = vec![0.0; levels];
        for r in &completed {
            let a = r
                .approaches
                .iter()
                .find(|a| a.name == approach.name)
                .ok_or_else(|| Error::Config(format!("model {} has no results for {:?}", r.index, approach.name)))?;
            if a.worst_fidelity.len() != levels || a.normalized_objective.len() != levels {
                return Err(Error::DimensionMismatch {
                    expected: levels,
                    got: a.worst_fidelity.len(),
                });
            }
            for l in 0..levels {
                wf[l] += a.worst_fidelity[l];
                obj[l] += a.normalized_objective[l];
            }
        }
        let scale = if n > 0 { 1.0 / n as f64 } else { f64::NAN };
        out.push(SweepAverages {
            name: approach.name.clone(),
            worst_fidelity: wf.into_iter().map(|v| v * scale).collect(),
            normalized_objective: obj.into_iter().map(|v| v * scale).collect(),
        });
    }
    Ok(EnsembleSweepResult {
        eps_levels: eps_levels.to_vec(),
        n_models: n,
        n_failed: sorted.len() - n,
        approaches: out,
    })
}
