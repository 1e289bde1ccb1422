//! Bang-bang schedules with free durations.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    costates_for, forward, pick_best, projected_descent, stream_rng, OptimizeReport, OptimizerOptions,
};
use crate::dynamics::{lipschitz_bound_segments, ErrorSignal, Protocol, Segment, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::{cdot, C64};
use crate::operators::{HamiltonianPair, NormKind};

const SUM_TOL: f64 = 1e-12;

/// `P` alternating bangs between 0 and 1, starting at `leading_value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaoaSchedule {
    durations: Vec<f64>,
    leading_value: u8,
}

impl QaoaSchedule {
    pub fn new(durations: Vec<f64>, leading_value: u8, horizon: f64) -> Result<Self> {
        if leading_value > 1 {
            return Err(Error::InvalidSchedule(format!("leading value {leading_value} is not 0 or 1")));
        }
        if durations.is_empty() {
            return Err(Error::InvalidSchedule("no bangs".into()));
        }
        if let Some(d) = durations.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::InvalidSchedule(format!("duration {d} is negative or not finite")));
        }
        let sum: f64 = durations.iter().sum();
        if (sum - horizon).abs() > SUM_TOL * horizon.max(1.0) {
            return Err(Error::InvalidSchedule(format!("durations sum to {sum}, expected {horizon}")));
        }
        Ok(Self {
            durations,
            leading_value,
        })
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn leading_value(&self) -> u8 {
        self.leading_value
    }

    pub fn n_bangs(&self) -> usize {
        self.durations.len()
    }

    pub fn horizon(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// Control value of bang `p`.
    pub fn bang_value(&self, p: usize) -> f64 {
        f64::from((self.leading_value as usize + p) as u8 % 2)
    }

    /// Switching times `t_1 < ... < t_{P-1}`.
    pub fn switching_times(&self) -> Vec<f64> {
        self.durations[..self.n_bangs() - 1]
            .iter()
            .scan(0.0, |t, d| {
                *t += d;
                Some(*t)
            })
            .collect()
    }

    fn bang_segments(&self) -> Vec<Segment> {
        self.durations
            .iter()
            .enumerate()
            .map(|(p, &duration)| Segment {
                duration,
                u: self.bang_value(p),
                scale: 1.0,
                shift: 0.0,
            })
            .collect()
    }

    /// Bangs split at every error-section boundary, so that each piece has a
    /// constant `(1 + ε) H(u)`.
    pub fn segments_with_error(&self, error: Option<&ErrorSignal>) -> Vec<Segment> {
        let Some(err) = error else {
            return self.bang_segments();
        };
        let horizon = self.horizon();
        let s = err.n_sections();
        let mut cuts: Vec<f64> = self.switching_times();
        cuts.extend((1..s).map(|j| horizon * j as f64 / s as f64));
        cuts.push(horizon);
        cuts.sort_by(|a, b| a.total_cmp(b));
        let mut out = Vec::with_capacity(cuts.len());
        let mut start = 0.0;
        for end in cuts {
            if end > start {
                let mid = 0.5 * (start + end);
                let u = self.value_at(mid);
                out.push(Segment {
                    duration: end - start,
                    u,
                    scale: 1.0 + err.value_at_time(mid, horizon),
                    shift: 0.0,
                });
                start = end;
            }
        }
        out
    }

    /// Control value at time `t` (right-continuous at switches).
    pub fn value_at(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for (p, d) in self.durations.iter().enumerate() {
            acc += d;
            if t < acc {
                return self.bang_value(p);
            }
        }
        self.bang_value(self.n_bangs() - 1)
    }

    /// Samples the schedule at each step's left endpoint.
    pub fn rasterize(&self, grid: TimeGrid) -> Protocol {
        let values = (0..grid.n_steps()).map(|k| self.value_at(grid.time(k))).collect();
        Protocol::new(grid, values).expect("bang values are 0 or 1")
    }
}

/// `⟨x(T)|C|x(T)⟩` under the exact bang-bang evolution.
pub fn qaoa_cost(ham: &HamiltonianPair, schedule: &QaoaSchedule) -> Result<f64> {
    Ok(forward(ham, &schedule.bang_segments())?.final_cost)
}

/// `∂J/∂d_p = -2 Im⟨λ(t_p)|H(u_p)|x(t_p)⟩`, evaluated at the end `t_p` of bang `p`.
pub fn qaoa_gradient(ham: &HamiltonianPair, schedule: &QaoaSchedule) -> Result<Vec<f64>> {
    Ok(cost_and_gradient(ham, schedule)?.1)
}

fn cost_and_gradient(ham: &HamiltonianPair, schedule: &QaoaSchedule) -> Result<(f64, Vec<f64>)> {
    let segments = schedule.bang_segments();
    let traj = forward(ham, &segments)?;
    let adj = costates_for(ham, &segments, &traj);
    let mut hx = vec![C64::new(0.0, 0.0); ham.dim()];
    let grad = segments
        .iter()
        .enumerate()
        .map(|(p, seg)| {
            ham.apply_h(seg.u, 1.0, 0.0, traj.states[p + 1].as_slice(), &mut hx);
            -2.0 * cdot(adj.costates[p + 1].as_slice(), &hx).im
        })
        .collect();
    Ok((traj.final_cost, grad))
}

/// Euclidean projection onto `{d ≥ 0, Σ d = total}`.
pub(crate) fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        acc += x;
        let t = (acc - total) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn simplex_stationarity(d: &[f64], g: &[f64], total: f64) -> f64 {
    let step: Vec<f64> = d.iter().zip(g).map(|(a, b)| a - b).collect();
    project_simplex(&step, total)
        .iter()
        .zip(d)
        .map(|(p, a)| (a - p) * (a - p))
        .sum::<f64>()
        .sqrt()
}

fn optimize_durations(
    ham: &HamiltonianPair,
    start: QaoaSchedule,
    options: &OptimizerOptions,
    grid: TimeGrid,
) -> Result<OptimizeReport> {
    let total = grid.horizon();
    let leading = start.leading_value;
    let build = |d: &[f64]| QaoaSchedule {
        durations: d.to_vec(),
        leading_value: leading,
    };
    let outcome = projected_descent(
        start.durations.clone(),
        |d| qaoa_cost(ham, &build(d)),
        |d| cost_and_gradient(ham, &build(d)),
        |d| project_simplex(d, total),
        |d, g| simplex_stationarity(d, g, total),
        options,
    )?;
    let mut durations = outcome.x;
    // Absorb the projection's rounding so the durations sum to T exactly.
    let drift = total - durations.iter().sum::<f64>();
    if let Some(longest) = durations.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *longest += drift;
    }
    let schedule = QaoaSchedule::new(durations, leading, total)?;
    let regularizer = lipschitz_bound_segments(ham, &schedule.bang_segments(), NormKind::SPECTRAL)?;
    Ok(OptimizeReport {
        protocol: schedule.rasterize(grid),
        cost_terminal: qaoa_cost(ham, &schedule)?,
        schedule: Some(schedule),
        zeta: 0.0,
        cost_regularizer: regularizer,
        iterations: outcome.iterations,
        gradient_norm_final: outcome.stationarity,
        converged: outcome.converged,
        start_index: 0,
        history: outcome.history,
    })
}

/// Minimizes the terminal cost over `n_bangs ≥ 2` bang durations on `[0, T]`.
///
/// Both leading values are tried from equal durations and from
/// `options.restarts` random splits each; the best result is returned.
pub fn optimize_qaoa(
    ham: &HamiltonianPair,
    grid: TimeGrid,
    n_bangs: usize,
    init: Option<&QaoaSchedule>,
    options: &OptimizerOptions,
) -> Result<OptimizeReport> {
    if n_bangs < 2 {
        return Err(Error::InvalidSchedule(format!("{n_bangs} bangs; at least 2 are required")));
    }
    let total = grid.horizon();
    let mut starts = Vec::new();
    if let Some(s) = init {
        if s.n_bangs() != n_bangs || (s.horizon() - total).abs() > SUM_TOL * total.max(1.0) {
            return Err(Error::InvalidSchedule("initial schedule does not match the bang count or horizon".into()));
        }
        starts.push(s.clone());
    }
    for leading in [1u8, 0] {
        starts.push(QaoaSchedule {
            durations: vec![total / n_bangs as f64; n_bangs],
            leading_value: leading,
        });
        for r in 0..options.restarts {
            let mut rng = stream_rng(options.seed, 1000 + 2 * r as u64 + u64::from(leading));
            let raw: Vec<f64> = (0..n_bangs).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            starts.push(QaoaSchedule {
                durations: raw.iter().map(|x| x * total / sum).collect(),
                leading_value: leading,
            });
        }
    }
    let runs: Vec<Result<OptimizeReport>> = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, s)| {
            optimize_durations(ham, s, options, grid).map(|mut r| {
                r.start_index = i;
                r
            })
        })
        .collect();
    pick_best(runs)
}
