//! Time-discretised Schrödinger propagation for piecewise-constant protocols,
//! with and without coherent control errors.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cdot, expmv, C64};
use crate::operators::{check_control, HamiltonianPair, NormKind, StepGenerator};

const NORM_TOL: f64 = 1e-10;

/// Uniform grid on `[0, T]` with `K` steps; `dt = T / K` is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("at least one step is required".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Grid node `τ_k = kT/K`, `k = 0..=K`.
    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.n_steps as f64
    }
}

/// A piecewise-constant annealing protocol `u_k ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl Protocol {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_steps() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_steps(),
                got: values.len(),
            });
        }
        for &u in &values {
            check_control(u)?;
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, u: f64) -> Result<Self> {
        Self::new(grid, vec![u; grid.n_steps()])
    }

    /// `u_k = 1 - τ_k / T`.
    pub fn linear_ramp(grid: TimeGrid) -> Self {
        let k = grid.n_steps();
        let values = (0..k).map(|i| 1.0 - i as f64 / k as f64).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// One segment per grid step, with the error signal resampled onto the grid.
    pub fn segments(&self, error: Option<&ErrorSignal>) -> Vec<Segment> {
        let dt = self.grid.dt();
        let k = self.grid.n_steps();
        self.values
            .iter()
            .enumerate()
            .map(|(i, &u)| Segment {
                duration: dt,
                u,
                scale: 1.0 + error.map_or(0.0, |e| e.value_at_step(i, k)),
                shift: 0.0,
            })
            .collect()
    }
}

/// Bounded piecewise-constant error `ε(τ)` on `S` uniform sections of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSignal {
    amplitudes: Vec<f64>,
    bound: f64,
}

impl ErrorSignal {
    pub fn new(amplitudes: Vec<f64>, bound: f64) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidGrid("error signal needs at least one section".into()));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidGrid(format!("error bound must be non-negative, got {bound}")));
        }
        if let Some(&a) = amplitudes.iter().find(|a| !(a.abs() <= bound)) {
            return Err(Error::ErrorSignalOutOfBound { amplitude: a, bound });
        }
        Ok(Self { amplitudes, bound })
    }

    pub fn constant(n_sections: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n_sections], value.abs())
    }

    pub fn n_sections(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Multiplies every amplitude and the bound by `factor ≥ 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            amplitudes: self.amplitudes.iter().map(|a| a * factor).collect(),
            bound: self.bound * factor,
        }
    }

    /// Value on grid step `k` of `n_steps`: the section containing the step's
    /// left endpoint, i.e. section `⌊kS/K⌋`.
    pub fn value_at_step(&self, k: usize, n_steps: usize) -> f64 {
        self.amplitudes[k * self.amplitudes.len() / n_steps]
    }

    /// Value at time `t ∈ [0, T)`; `t = T` maps to the last section.
    pub fn value_at_time(&self, t: f64, horizon: f64) -> f64 {
        let s = self.amplitudes.len();
        let idx = ((t / horizon) * s as f64).floor() as usize;
        self.amplitudes[idx.min(s - 1)]
    }

    /// Sup-norm distance between two signals on the same grid, as seen by
    /// grid propagation.
    pub fn grid_distance(&self, other: &Self, n_steps: usize) -> f64 {
        (0..n_steps)
            .map(|k| (self.value_at_step(k, n_steps) - other.value_at_step(k, n_steps)).abs())
            .fold(0.0, f64::max)
    }
}

/// One constant-generator piece of an evolution: `exp(-i·duration·(scale·H(u) + shift·I))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub u: f64,
    pub scale: f64,
    pub shift: f64,
}

impl Segment {
    pub(crate) fn generator<'a>(&self, ham: &'a HamiltonianPair) -> StepGenerator<'a> {
        StepGenerator {
            pair: ham,
            u: self.u,
            scale: self.scale,
            shift: self.shift,
        }
    }

    /// Applies this segment's exact propagator to `x`.
    pub fn apply(&self, ham: &HamiltonianPair, x: &[C64]) -> Vec<C64> {
        expmv(&self.generator(ham), self.duration, x)
    }
}

/// States at every segment boundary and the terminal cost `⟨x(T)|C|x(T)⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<C64>>,
    pub final_cost: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<C64> {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// Largest deviation of `‖x(τ_k)‖₂` from one along the trajectory.
    pub fn max_norm_deviation(&self) -> f64 {
        self.states.iter().map(|s| (s.norm() - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn check_initial(ham: &HamiltonianPair, initial: &DVector<C64>) -> Result<()> {
    if initial.len() != ham.dim() {
        return Err(Error::DimensionMismatch {
            expected: ham.dim(),
            got: initial.len(),
        });
    }
    let norm = initial.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized(norm));
    }
    Ok(())
}

/// Propagates through an arbitrary sequence of segments.
pub fn propagate_segments(
    ham: &HamiltonianPair,
    segments: &[Segment],
    initial: &DVector<C64>,
) -> Result<Trajectory> {
    check_initial(ham, initial)?;
    let mut states = Vec::with_capacity(segments.len() + 1);
    states.push(initial.clone());
    for seg in segments {
        check_control(seg.u)?;
        let next = seg.apply(ham, states.last().unwrap().as_slice());
        states.push(DVector::from_vec(next));
    }
    let final_cost = ham.energy(states.last().unwrap().as_slice());
    Ok(Trajectory { states, final_cost })
}

/// `x_{k+1} = exp(-i (1 + ε_k) dt H(u_k)) x_k`; no error means `ε ≡ 0`.
pub fn propagate(
    ham: &HamiltonianPair,
    protocol: &Protocol,
    initial: &DVector<C64>,
    error: Option<&ErrorSignal>,
) -> Result<Trajectory> {
    propagate_segments(ham, &protocol.segments(error), initial)
}

/// Propagates under `H(u_k) + φ_k I`.
pub fn phase_shifted_propagate(
    ham: &HamiltonianPair,
    protocol: &Protocol,
    initial: &DVector<C64>,
    phase: &[f64],
) -> Result<Trajectory> {
    if phase.len() != protocol.grid().n_steps() {
        return Err(Error::DimensionMismatch {
            expected: protocol.grid().n_steps(),
            got: phase.len(),
        });
    }
    let mut segments = protocol.segments(None);
    for (seg, &phi) in segments.iter_mut().zip(phase) {
        seg.shift = phi;
    }
    propagate_segments(ham, &segments, initial)
}

/// `|⟨a|b⟩|`, clamped to `[0, 1]`.
pub fn fidelity(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    cdot(a.as_slice(), b.as_slice()).norm().min(1.0)
}

/// `L = Σ_k q(u_k) dt`, exact for piecewise-constant protocols.
pub fn lipschitz_bound(ham: &HamiltonianPair, protocol: &Protocol, kind: NormKind) -> Result<f64> {
    let dt = protocol.grid().dt();
    protocol
        .values()
        .iter()
        .map(|&u| ham.q_value(u, kind).map(|q| q * dt))
        .sum()
}

/// `L` for an arbitrary segment list (error scales are ignored).
pub fn lipschitz_bound_segments(ham: &HamiltonianPair, segments: &[Segment], kind: NormKind) -> Result<f64> {
    segments
        .iter()
        .map(|s| ham.q_value(s.u, kind).map(|q| q * s.duration))
        .sum()
}

/// `1 - L² ε̂² / 2`; may be negative, in which case it is vacuous.
pub fn fidelity_lower_bound(lipschitz: f64, eps_hat: f64) -> f64 {
    1.0 - 0.5 * lipschitz * lipschitz * eps_hat * eps_hat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm_hermitian;
    use crate::operators::{build_ising, ground_state_of_b, IsingModel};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(n: usize, seed: u64) -> HamiltonianPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        build_ising(&IsingModel::random(n, &mut rng)).unwrap()
    }

    fn basis_state(d: usize, k: usize) -> DVector<C64> {
        DVector::from_fn(d, |i, _| C64::new(if i == k { 1.0 } else { 0.0 }, 0.0))
    }

    #[test]
    fn grid_basics() {
        let g = TimeGrid::new(3.0, 7).unwrap();
        assert_eq!(g.time(7), 3.0);
        assert_abs_diff_eq!(g.dt() * 7.0, 3.0, epsilon = 1e-15);
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn protocol_validation() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        assert!(Protocol::new(g, vec![0.0, 1.2, 0.5]).is_err());
        assert!(Protocol::new(g, vec![0.0, 0.5]).is_err());
        assert!(Protocol::new(g, vec![0.0, f64::NAN, 0.5]).is_err());
        assert_eq!(Protocol::linear_ramp(g).values(), &[1.0, 1.0 - 1.0 / 3.0, 1.0 - 2.0 / 3.0]);
    }

    #[test]
    fn error_signal_resampling() {
        let e = ErrorSignal::new(vec![0.1, -0.2, 0.3], 0.3).unwrap();
        // K = 7, S = 3: sections cover [0, 7/3), [7/3, 14/3), [14/3, 7).
        let got: Vec<f64> = (0..7).map(|k| e.value_at_step(k, 7)).collect();
        assert_eq!(got, vec![0.1, 0.1, 0.1, -0.2, -0.2, 0.3, 0.3]);
        assert!(ErrorSignal::new(vec![0.5], 0.4).is_err());
        assert_eq!(e.scaled(2.0).bound(), 0.6);
    }

    #[test]
    fn computational_state_under_cost_only() {
        let pair = random_pair(3, 1);
        let grid = TimeGrid::new(2.5, 20).unwrap();
        let p = Protocol::constant(grid, 0.0).unwrap();
        let x0 = basis_state(8, 5);
        let traj = propagate(&pair, &p, &x0, None).unwrap();
        let cz = pair.c_diagonal()[5];
        let expected = C64::from_polar(1.0, -cz * 2.5);
        assert!((traj.final_state()[5] - expected).norm() < 1e-12);
        assert_abs_diff_eq!(fidelity(traj.final_state(), &x0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_protocol_with_constant_error_matches_single_exponential() {
        let pair = random_pair(3, 4);
        let grid = TimeGrid::new(1.3, 25).unwrap();
        let p = Protocol::constant(grid, 0.37).unwrap();
        let eps = ErrorSignal::constant(4, 0.08).unwrap();
        let x0 = ground_state_of_b(&pair);
        let traj = propagate(&pair, &p, &x0, Some(&eps)).unwrap();
        let h = pair.hamiltonian_at(0.37).unwrap();
        let direct = expm_hermitian(&h, 1.08 * 1.3) * &x0;
        assert!((traj.final_state() - direct).norm() < 1e-10);
    }

    #[test]
    fn propagation_composes_over_half_horizons() {
        let pair = random_pair(3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let values: Vec<f64> = (0..40).map(|_| rng.gen()).collect();
        let full = Protocol::new(TimeGrid::new(2.0, 40).unwrap(), values.clone()).unwrap();
        let first = Protocol::new(TimeGrid::new(1.0, 20).unwrap(), values[..20].to_vec()).unwrap();
        let second = Protocol::new(TimeGrid::new(1.0, 20).unwrap(), values[20..].to_vec()).unwrap();
        let x0 = ground_state_of_b(&pair);
        let whole = propagate(&pair, &full, &x0, None).unwrap();
        let mid = propagate(&pair, &first, &x0, None).unwrap();
        let end = propagate(&pair, &second, mid.final_state(), None).unwrap();
        assert!((whole.final_state() - end.final_state()).norm() < 1e-13);
    }

    #[test]
    fn rejects_unnormalized_initial_state() {
        let pair = random_pair(2, 0);
        let p = Protocol::constant(TimeGrid::new(1.0, 4).unwrap(), 0.5).unwrap();
        let x = DVector::from_element(4, C64::new(1.0, 0.0));
        assert!(matches!(propagate(&pair, &p, &x, None), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn fidelity_cases() {
        let a = DVector::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
        assert_abs_diff_eq!(fidelity(&a, &a), 1.0, epsilon = 1e-15);
        let b = &a * C64::from_polar(1.0, 0.7);
        assert_abs_diff_eq!(fidelity(&a, &b), 1.0, epsilon = 1e-15);
        assert_eq!(fidelity(&basis_state(2, 0), &basis_state(2, 1)), 0.0);
    }

    #[test]
    fn lipschitz_bound_values() {
        for n in 1..=4 {
            let pair = random_pair(n, 10 + n as u64);
            let p = Protocol::constant(TimeGrid::new(1.0, 10).unwrap(), 1.0).unwrap();
            let l = lipschitz_bound(&pair, &p, NormKind::SPECTRAL).unwrap();
            assert_abs_diff_eq!(l, n as f64, epsilon = 1e-10);
        }
        let pair = build_ising(&IsingModel::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
        let p = Protocol::constant(TimeGrid::new(2.0, 10).unwrap(), 0.0).unwrap();
        assert_abs_diff_eq!(lipschitz_bound(&pair, &p, NormKind::SPECTRAL).unwrap(), 4.0, epsilon = 1e-12);
        let p2 = Protocol::constant(TimeGrid::new(4.0, 10).unwrap(), 0.0).unwrap();
        assert_abs_diff_eq!(lipschitz_bound(&pair, &p2, NormKind::SPECTRAL).unwrap(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn fidelity_bound_formula() {
        assert_eq!(fidelity_lower_bound(3.0, 0.0), 1.0);
        assert_eq!(fidelity_lower_bound(1.0, 1.0), 0.5);
        assert!(fidelity_lower_bound(10.0, 1.0) < 0.0);
    }

    #[test]
    fn phase_shift_fixtures() {
        let pair = random_pair(3, 12);
        let grid = TimeGrid::new(1.5, 30).unwrap();
        let x0 = ground_state_of_b(&pair);
        let p = Protocol::constant(grid, 0.4).unwrap();
        let plain = propagate(&pair, &p, &x0, None).unwrap();
        let zero = phase_shifted_propagate(&pair, &p, &x0, &[0.0; 30]).unwrap();
        assert_eq!(plain, zero);
        let shifted = phase_shifted_propagate(&pair, &p, &x0, &[0.9; 30]).unwrap();
        let want = plain.final_state() * C64::from_polar(1.0, -0.9 * 1.5);
        assert!((shifted.final_state() - want).norm() < 1e-10);
    }

    #[test]
    fn time_reversal_returns_initial_state() {
        let pair = random_pair(4, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let values: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        let p = Protocol::new(TimeGrid::new(3.0, 50).unwrap(), values).unwrap();
        let x0 = ground_state_of_b(&pair);
        let fwd = propagate(&pair, &p, &x0, None).unwrap();
        let mut back = p.segments(None);
        back.reverse();
        for s in &mut back {
            s.scale = -1.0;
        }
        let ret = propagate_segments(&pair, &back, fwd.final_state()).unwrap();
        assert!((ret.final_state() - &x0).norm() < 1e-9);
    }

    #[test]
    fn dense_generator_agrees_with_eigen_route_on_random_protocol() {
        let pair = random_pair(3, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let values: Vec<f64> = (0..15).map(|_| rng.gen()).collect();
        let p = Protocol::new(TimeGrid::new(2.0, 15).unwrap(), values.clone()).unwrap();
        let x0 = ground_state_of_b(&pair);
        let traj = propagate(&pair, &p, &x0, None).unwrap();
        let mut x = x0.clone();
        for &u in &values {
            let h: DMatrix<f64> = pair.hamiltonian_at(u).unwrap();
            x = expm_hermitian(&h, 2.0 / 15.0) * x;
        }
        assert!((traj.final_state() - x).norm() < 1e-11);
    }
}
