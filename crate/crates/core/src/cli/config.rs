use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{stream_rng, CostSpec, OptimizerOptions};
use crate::dynamics::TimeGrid;
use crate::error::{Error, Result};
use crate::operators::{build_ising_with_budget, HamiltonianPair, IsingModel, DEFAULT_MAX_QUBITS};
use crate::robustness::{default_eps_levels, generate_ensemble, Approach, ErrorEnsemble};

const MODEL_STREAM: u64 = 11;
const ENSEMBLE_STREAM: u64 = 12;
const OPTIMIZER_STREAM: u64 = 13;

/// Where the couplings `J` come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// Upper-triangular entries uniform on `[-1, 1]`. Without an explicit
    /// seed one is derived from the master seed.
    Random {
        n_qubits: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// A JSON file holding the coupling matrix as an array of rows.
    File { path: PathBuf },
    Couplings { couplings: Vec<Vec<f64>> },
}

/// Control parametrization used by `optimize`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    Grid,
    Qaoa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_signals: usize,
    pub n_sections: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_signals: 20,
            n_sections: 20,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_models: usize,
    pub n_qubits: usize,
    /// Per-model optimizer budget.
    pub optimizer: OptimizerOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_models: 10,
            n_qubits: 4,
            optimizer: OptimizerOptions {
                max_iters: 1500,
                restarts: 3,
                ..OptimizerOptions::default()
            },
        }
    }
}

/// Everything a run needs. Every field has a default, so `{}` is a valid
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every other random stream is derived from it.
    pub seed: u64,
    pub model: ModelSource,
    pub horizon: f64,
    pub n_steps: usize,
    pub cost: CostSpec,
    pub control: ControlKind,
    pub qaoa_bangs: usize,
    pub optimizer: OptimizerOptions,
    pub ensemble: EnsembleConfig,
    pub eps_levels: Vec<f64>,
    pub approaches: Vec<Approach>,
    pub sweep: SweepConfig,
    pub max_qubits: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelSource::Random {
                n_qubits: 4,
                seed: None,
            },
            horizon: 2.0,
            n_steps: 200,
            cost: CostSpec::nominal(),
            control: ControlKind::Grid,
            qaoa_bangs: 8,
            optimizer: OptimizerOptions::default(),
            ensemble: EnsembleConfig::default(),
            eps_levels: default_eps_levels(),
            approaches: Approach::standard_set(0.1),
            sweep: SweepConfig::default(),
            max_qubits: DEFAULT_MAX_QUBITS,
            output_dir: None,
        }
    }
}

fn derive_seed(master: u64, stream: u64) -> u64 {
    stream_rng(master, stream).gen()
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite and positive, got {v}")))
    }
}

fn check_options(name: &str, o: &OptimizerOptions) -> Result<()> {
    positive(&format!("{name}.tol"), o.tol)?;
    if !(o.armijo > 0.0 && o.armijo < 1.0) {
        return Err(Error::Config(format!("{name}.armijo must lie in (0, 1)")));
    }
    if !(o.shrink > 0.0 && o.shrink < 1.0) {
        return Err(Error::Config(format!("{name}.shrink must lie in (0, 1)")));
    }
    Ok(())
}

fn check_qubits(n: usize, max: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("n_qubits must be at least 1".into()));
    }
    if n > max {
        return Err(Error::DimensionOverflow {
            n_qubits: n,
            max_qubits: max,
        });
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("cannot parse config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        positive("horizon", self.horizon)?;
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if !(self.cost.zeta.is_finite() && self.cost.zeta >= 0.0) {
            return Err(Error::Config("cost.zeta must be finite and non-negative".into()));
        }
        if self.qaoa_bangs < 2 {
            return Err(Error::Config("qaoa_bangs must be at least 2".into()));
        }
        check_options("optimizer", &self.optimizer)?;
        check_options("sweep.optimizer", &self.sweep.optimizer)?;
        if self.ensemble.n_signals == 0 || self.ensemble.n_sections == 0 {
            return Err(Error::Config("ensemble needs at least one signal and one section".into()));
        }
        if self.eps_levels.is_empty() {
            return Err(Error::Config("eps_levels is empty".into()));
        }
        if let Some(e) = self.eps_levels.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::Config(format!("noise level {e} must be finite and non-negative")));
        }
        if self.approaches.is_empty() {
            return Err(Error::Config("approaches is empty".into()));
        }
        let mut names = HashSet::new();
        for a in &self.approaches {
            a.validate()?;
            if !names.insert(a.name.as_str()) {
                return Err(Error::Config(format!("duplicate approach name {:?}", a.name)));
            }
        }
        if self.sweep.n_models == 0 {
            return Err(Error::Config("sweep.n_models must be at least 1".into()));
        }
        check_qubits(self.sweep.n_qubits, self.max_qubits)?;
        match &self.model {
            ModelSource::Random { n_qubits, .. } => check_qubits(*n_qubits, self.max_qubits)?,
            ModelSource::Couplings { couplings } => check_qubits(couplings.len(), self.max_qubits)?,
            ModelSource::File { .. } => {}
        }
        Ok(())
    }

    /// Validates, loads model files and fills in every derived seed, so the
    /// result reproduces the run on its own.
    pub fn resolve(mut self) -> Result<Self> {
        self.validate()?;
        match &mut self.model {
            ModelSource::Random { seed, .. } => {
                seed.get_or_insert(derive_seed(self.seed, MODEL_STREAM));
            }
            ModelSource::File { path } => {
                let text = std::fs::read_to_string(&*path)?;
                let couplings: Vec<Vec<f64>> = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("cannot parse couplings in {}: {e}", path.display())))?;
                check_qubits(couplings.len(), self.max_qubits)?;
                self.model = ModelSource::Couplings { couplings };
            }
            ModelSource::Couplings { .. } => {}
        }
        self.ensemble.seed.get_or_insert(derive_seed(self.seed, ENSEMBLE_STREAM));
        Ok(self)
    }

    /// The Ising model; call on a resolved config.
    pub fn ising_model(&self) -> Result<IsingModel> {
        match &self.model {
            ModelSource::Random { n_qubits, seed } => {
                let seed = seed.unwrap_or_else(|| derive_seed(self.seed, MODEL_STREAM));
                Ok(IsingModel::random(*n_qubits, &mut ChaCha8Rng::seed_from_u64(seed)))
            }
            ModelSource::Couplings { couplings } => IsingModel::new(couplings.clone()),
            ModelSource::File { .. } => Err(Error::Config("model file not loaded; resolve the config first".into())),
        }
    }

    pub fn hamiltonian(&self) -> Result<HamiltonianPair> {
        build_ising_with_budget(&self.ising_model()?, self.max_qubits)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.n_steps)
    }

    pub fn error_ensemble(&self) -> Result<ErrorEnsemble> {
        let seed = self
            .ensemble
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, ENSEMBLE_STREAM));
        generate_ensemble(self.ensemble.n_signals, self.ensemble.n_sections, seed)
    }

    /// Optimizer settings with the random-start seed derived from the master seed.
    pub fn optimizer_options(&self) -> OptimizerOptions {
        OptimizerOptions {
            seed: derive_seed(self.seed, OPTIMIZER_STREAM),
            ..self.optimizer
        }
    }
}
