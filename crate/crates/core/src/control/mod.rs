//! Nominal, robust and QAOA optimal-control problems.
//!
//! Costs are `⟨x(T)|C|x(T)⟩ + ζ Σ_k q(u_k) dt`, with `|x(0)⟩` the ground state
//! of the mixer. Gradients of the terminal term are exact: each step's
//! propagator derivative is applied through the block-triangular Fréchet
//! identity, then contracted with the co-state.

mod qaoa;

pub use qaoa::{optimize_qaoa, qaoa_cost, qaoa_gradient, QaoaSchedule};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_segments, Protocol, Segment, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{cdot, expmv, expmv_frechet, C64};
use crate::operators::{ground_state_of_b, DirectionGenerator, HamiltonianPair, NormKind};

/// Regularization weight `ζ ≥ 0` and the norm used in `q(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub zeta: f64,
    pub norm: NormKind,
}

impl CostSpec {
    pub fn nominal() -> Self {
        Self {
            zeta: 0.0,
            norm: NormKind::SPECTRAL,
        }
    }

    pub fn robust(zeta: f64, norm: NormKind) -> Self {
        Self { zeta, norm }
    }
}

/// Terminal cost and the (unweighted) regularizer integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub terminal: f64,
    pub regularizer: f64,
}

impl CostBreakdown {
    pub fn total(&self, zeta: f64) -> f64 {
        self.terminal + zeta * self.regularizer
    }
}

/// Co-states `|λ(τ_k)⟩` at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub costates: Vec<DVector<C64>>,
}

/// A piecewise-constant control given either on a uniform grid or as a
/// bang-bang schedule with free switching times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Grid(Protocol),
    Bang(QaoaSchedule),
}

impl Schedule {
    pub fn horizon(&self) -> f64 {
        match self {
            Schedule::Grid(p) => p.grid().horizon(),
            Schedule::Bang(s) => s.horizon(),
        }
    }

    /// Evolution segments, with an optional error signal applied.
    pub fn segments(&self, error: Option<&crate::dynamics::ErrorSignal>) -> Vec<Segment> {
        match self {
            Schedule::Grid(p) => p.segments(error),
            Schedule::Bang(s) => s.segments_with_error(error),
        }
    }

    /// Representation on `grid` for tabulation (bang schedules are sampled at
    /// each step's left endpoint).
    pub fn to_protocol(&self, grid: TimeGrid) -> Protocol {
        match self {
            Schedule::Grid(p) => p.clone(),
            Schedule::Bang(s) => s.rasterize(grid),
        }
    }
}

impl From<Protocol> for Schedule {
    fn from(p: Protocol) -> Self {
        Schedule::Grid(p)
    }
}

/// Outcome of an optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub protocol: Protocol,
    /// Present for QAOA runs, whose switching times are not grid-aligned.
    pub schedule: Option<QaoaSchedule>,
    pub zeta: f64,
    pub cost_terminal: f64,
    pub cost_regularizer: f64,
    pub iterations: usize,
    pub gradient_norm_final: f64,
    pub converged: bool,
    /// Index of the winning start (0 is the deterministic start).
    pub start_index: usize,
    /// Total-cost value after every accepted iteration of the winning start.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl OptimizeReport {
    pub fn cost_total(&self) -> f64 {
        self.cost_terminal + self.zeta * self.cost_regularizer
    }

    pub fn schedule(&self) -> Schedule {
        match &self.schedule {
            Some(s) => Schedule::Bang(s.clone()),
            None => Schedule::Grid(self.protocol.clone()),
        }
    }
}

/// Projected gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    /// Stop once the projected-gradient norm falls below this.
    pub tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Random starts in addition to the deterministic one.
    pub restarts: usize,
    /// Seed of the random starts; set by the caller, never read from config.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-6,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            restarts: 5,
            seed: 0,
        }
    }
}

/// Forward trajectory from `|x^B⟩` through `segments`.
pub(crate) fn forward(ham: &HamiltonianPair, segments: &[Segment]) -> Result<Trajectory> {
    propagate_segments(ham, segments, &ground_state_of_b(ham))
}

/// `λ(T) = -C x(T)`, then `λ_k = U_k† λ_{k+1}`.
pub(crate) fn costates_for(ham: &HamiltonianPair, segments: &[Segment], traj: &Trajectory) -> AdjointTrajectory {
    let d = ham.dim();
    let mut lam = vec![C64::new(0.0, 0.0); d];
    ham.apply_c(traj.final_state().as_slice(), &mut lam);
    for z in lam.iter_mut() {
        *z = -*z;
    }
    let mut costates = vec![DVector::from_vec(lam)];
    for seg in segments.iter().rev() {
        let prev = expmv(&seg.generator(ham), -seg.duration, costates.last().unwrap().as_slice());
        costates.push(DVector::from_vec(prev));
    }
    costates.reverse();
    AdjointTrajectory { costates }
}

/// `∂⟨x(T)|C|x(T)⟩ / ∂u_k = -2 Re⟨λ_{k+1}| ∂U_k/∂u_k |x_k⟩` for every segment.
pub(crate) fn terminal_gradient(
    ham: &HamiltonianPair,
    segments: &[Segment],
    traj: &Trajectory,
    adj: &AdjointTrajectory,
) -> Vec<f64> {
    segments
        .par_iter()
        .enumerate()
        .map(|(k, seg)| {
            let dgen = DirectionGenerator {
                pair: ham,
                scale: seg.scale,
            };
            let (_, dx) = expmv_frechet(&seg.generator(ham), &dgen, seg.duration, traj.states[k].as_slice());
            -2.0 * cdot(adj.costates[k + 1].as_slice(), &dx).re
        })
        .collect()
}

/// Terminal cost and regularizer for `protocol` started from `|x^B⟩`.
pub fn total_cost(ham: &HamiltonianPair, protocol: &Protocol, spec: &CostSpec) -> Result<CostBreakdown> {
    let traj = forward(ham, &protocol.segments(None))?;
    let regularizer = crate::dynamics::lipschitz_bound(ham, protocol, spec.norm)?;
    Ok(CostBreakdown {
        terminal: traj.final_cost,
        regularizer,
    })
}

/// Co-state trajectory for a forward trajectory of `protocol`.
pub fn backward_costate(ham: &HamiltonianPair, protocol: &Protocol, trajectory: &Trajectory) -> Result<AdjointTrajectory> {
    let k = protocol.grid().n_steps();
    if trajectory.states.len() != k + 1 {
        return Err(Error::DimensionMismatch {
            expected: k + 1,
            got: trajectory.states.len(),
        });
    }
    Ok(costates_for(ham, &protocol.segments(None), trajectory))
}

/// Everything needed for one optimizer step at a given protocol.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub trajectory: Trajectory,
    pub adjoint: AdjointTrajectory,
    /// The regularizer is only evaluated when `ζ > 0` and is zero otherwise.
    pub cost: CostBreakdown,
    pub terminal_gradient: Vec<f64>,
    /// Midpoint of `∂q(u_k)` per step; empty when `ζ = 0`.
    pub subgradients: Vec<f64>,
}

impl Evaluation {
    pub fn gradient(&self, zeta: f64, dt: f64) -> Vec<f64> {
        if zeta == 0.0 {
            return self.terminal_gradient.clone();
        }
        self.terminal_gradient
            .iter()
            .zip(&self.subgradients)
            .map(|(g, s)| g + zeta * dt * s)
            .collect()
    }
}

fn regularizer_terms(ham: &HamiltonianPair, values: &[f64], spec: &CostSpec, with_subgradient: bool) -> Result<(f64, Vec<f64>)> {
    // Bang steps repeat the same few values, so each distinct u is solved once.
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    let solved: Vec<(f64, f64)> = distinct
        .par_iter()
        .map(|&u| {
            if with_subgradient {
                let (q, s) = ham.q_with_subgradient(u, spec.norm)?;
                Ok((q, s.midpoint()))
            } else {
                Ok((ham.q_value(u, spec.norm)?, 0.0))
            }
        })
        .collect::<Result<_>>()?;
    let lookup = |u: f64| solved[distinct.binary_search_by(|p| p.total_cmp(&u)).expect("value was inserted")];
    let q_sum = values.iter().map(|&u| lookup(u).0).sum();
    Ok((q_sum, values.iter().map(|&u| lookup(u).1).collect()))
}

/// Forward pass, co-states, terminal gradient and regularizer at `protocol`.
pub fn evaluate(ham: &HamiltonianPair, protocol: &Protocol, spec: &CostSpec) -> Result<Evaluation> {
    let segments = protocol.segments(None);
    let trajectory = forward(ham, &segments)?;
    let adjoint = costates_for(ham, &segments, &trajectory);
    let terminal_gradient = terminal_gradient(ham, &segments, &trajectory, &adjoint);
    let (q_sum, subgradients) = if spec.zeta != 0.0 {
        regularizer_terms(ham, protocol.values(), spec, true)?
    } else {
        (0.0, Vec::new())
    };
    let cost = CostBreakdown {
        terminal: trajectory.final_cost,
        regularizer: q_sum * protocol.grid().dt(),
    };
    Ok(Evaluation {
        trajectory,
        adjoint,
        cost,
        terminal_gradient,
        subgradients,
    })
}

/// `g_k = ∂J_terminal/∂u_k + ζ dt s_k`, with `s_k` the midpoint of `∂q(u_k)`.
pub fn gradient(ham: &HamiltonianPair, protocol: &Protocol, spec: &CostSpec) -> Result<Vec<f64>> {
    Ok(evaluate(ham, protocol, spec)?.gradient(spec.zeta, protocol.grid().dt()))
}

/// Total cost only (the regularizer is skipped at `ζ = 0`).
fn objective(ham: &HamiltonianPair, values: &[f64], grid: TimeGrid, spec: &CostSpec) -> Result<f64> {
    let protocol = Protocol::new(grid, values.to_vec())?;
    let traj = forward(ham, &protocol.segments(None))?;
    if spec.zeta == 0.0 {
        return Ok(traj.final_cost);
    }
    let (q_sum, _) = regularizer_terms(ham, values, spec, false)?;
    Ok(traj.final_cost + spec.zeta * q_sum * grid.dt())
}

/// `‖x - P(x - g)‖₂` for the box `[0, 1]^K`.
fn projected_gradient_norm(u: &[f64], g: &[f64]) -> f64 {
    u.iter()
        .zip(g)
        .map(|(&x, &gi)| {
            let r = x - (x - gi).clamp(0.0, 1.0);
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Outcome of a projected-gradient run over a generic feasible set.
pub(crate) struct DescentOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub stationarity: f64,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// Projected gradient descent with Barzilai-Borwein trial steps and Armijo
/// backtracking along the projection arc.
pub(crate) fn projected_descent<V, G, P, S>(
    x0: Vec<f64>,
    value: V,
    grad: G,
    project: P,
    stationarity: S,
    options: &OptimizerOptions,
) -> Result<DescentOutcome>
where
    V: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: Fn(&[f64]) -> Vec<f64>,
    S: Fn(&[f64], &[f64]) -> f64,
{
    let mut x = project(&x0);
    let (mut f, mut g) = grad(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    let mut history = vec![f];
    let g_max = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut step = if g_max > 0.0 { 0.1 / g_max } else { 1.0 };
    let mut iterations = 0;
    let mut station = stationarity(&x, &g);
    let mut converged = station < options.tol;
    while !converged && iterations < options.max_iters {
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..=options.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect();
            let trial = project(&trial);
            let decrease: f64 = trial.iter().zip(&x).zip(&g).map(|((t, xi), gi)| gi * (t - xi)).sum();
            let ft = value(&trial)?;
            if ft.is_finite() && ft <= f + options.armijo * decrease {
                accepted = Some(trial);
                break;
            }
            alpha *= options.shrink;
        }
        let Some(next) = accepted else {
            break;
        };
        let (f_next, g_next) = grad(&next)?;
        if !f_next.is_finite() {
            return Err(Error::NonFiniteCost);
        }
        let s: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { (alpha * 2.0).min(1e12) };
        x = next;
        f = f_next;
        g = g_next;
        iterations += 1;
        history.push(f);
        station = stationarity(&x, &g);
        converged = station < options.tol;
        if ss == 0.0 {
            break;
        }
    }
    Ok(DescentOutcome {
        x,
        iterations,
        stationarity: station,
        converged,
        history,
    })
}

/// Single-start projected gradient descent from `init`.
pub fn optimize_from(
    ham: &HamiltonianPair,
    spec: &CostSpec,
    init: &Protocol,
    options: &OptimizerOptions,
) -> Result<OptimizeReport> {
    let grid = init.grid();
    let dt = grid.dt();
    let outcome = projected_descent(
        init.values().to_vec(),
        |u| objective(ham, u, grid, spec),
        |u| {
            let p = Protocol::new(grid, u.to_vec())?;
            let ev = evaluate(ham, &p, spec)?;
            Ok((ev.cost.total(spec.zeta), ev.gradient(spec.zeta, dt)))
        },
        |u| u.iter().map(|x| x.clamp(0.0, 1.0)).collect(),
        projected_gradient_norm,
        options,
    )?;
    let protocol = Protocol::new(grid, outcome.x)?;
    let cost = total_cost(ham, &protocol, spec)?;
    Ok(OptimizeReport {
        protocol,
        schedule: None,
        zeta: spec.zeta,
        cost_terminal: cost.terminal,
        cost_regularizer: cost.regularizer,
        iterations: outcome.iterations,
        gradient_norm_final: outcome.stationarity,
        converged: outcome.converged,
        start_index: 0,
        history: outcome.history,
    })
}

/// A smooth random start: linear interpolation through six uniform knots.
pub fn random_start(grid: TimeGrid, rng: &mut impl Rng) -> Protocol {
    const KNOTS: usize = 6;
    let knots: Vec<f64> = (0..KNOTS).map(|_| rng.gen::<f64>()).collect();
    let k = grid.n_steps();
    let values = (0..k)
        .map(|i| {
            let pos = (i as f64 + 0.5) / k as f64 * (KNOTS - 1) as f64;
            let j = (pos.floor() as usize).min(KNOTS - 2);
            let w = pos - j as f64;
            (knots[j] * (1.0 - w) + knots[j + 1] * w).clamp(0.0, 1.0)
        })
        .collect();
    Protocol::new(grid, values).expect("knot interpolation stays inside [0, 1]")
}

/// Independent RNG stream `stream` derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Multi-start projected gradient descent: `init` (or the linear ramp `1 - τ/T`)
/// plus `options.restarts` random smooth starts; the lowest total cost wins,
/// ties broken by start index.
pub fn optimize_protocol(
    ham: &HamiltonianPair,
    spec: &CostSpec,
    grid: TimeGrid,
    init: Option<&Protocol>,
    options: &OptimizerOptions,
) -> Result<OptimizeReport> {
    let mut starts = vec![init.cloned().unwrap_or_else(|| Protocol::linear_ramp(grid))];
    for r in 0..options.restarts {
        let mut rng = stream_rng(options.seed, r as u64);
        starts.push(random_start(grid, &mut rng));
    }
    let runs: Vec<Result<OptimizeReport>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            optimize_from(ham, spec, start, options).map(|mut r| {
                r.start_index = i;
                r
            })
        })
        .collect();
    pick_best(runs)
}

pub(crate) fn pick_best(runs: Vec<Result<OptimizeReport>>) -> Result<OptimizeReport> {
    let mut best: Option<OptimizeReport> = None;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok(r) if r.cost_total().is_finite() => {
                if best.as_ref().is_none_or(|b| r.cost_total() < b.cost_total()) {
                    best = Some(r);
                }
            }
            Ok(_) => last_err = Some(Error::NonFiniteCost),
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::NonFiniteCost))
}
