use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_anneal::cli::{fmt_f64, RunConfig};
use robust_anneal::control::CostSpec;
use robust_anneal::dynamics::{
    fidelity, fidelity_lower_bound, lipschitz_bound, phase_shifted_propagate, propagate, ErrorSignal, Protocol,
    TimeGrid,
};
use robust_anneal::linalg::C64;
use robust_anneal::operators::{build_ising, ground_state_of_b, HamiltonianPair, IsingModel, NormKind};
use robust_anneal::pmp::singular_band;

fn pair(n: usize, seed: u64) -> HamiltonianPair {
    build_ising(&IsingModel::random(n, &mut ChaCha8Rng::seed_from_u64(seed))).unwrap()
}

fn kind(i: usize) -> NormKind {
    [
        NormKind::SPECTRAL,
        NormKind::FROBENIUS,
        NormKind::SPECTRAL.with_phase_reduction(),
        NormKind::FROBENIUS.with_phase_reduction(),
    ][i]
}

fn random_protocol(grid: TimeGrid, rng: &mut impl Rng) -> Protocol {
    Protocol::new(grid, (0..grid.n_steps()).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn random_signal(sections: usize, eps: f64, rng: &mut impl Rng) -> ErrorSignal {
    let amps = (0..sections).map(|_| rng.gen_range(-eps..=eps)).collect();
    ErrorSignal::new(amps, eps).unwrap()
}

fn distance(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    (a - b).norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn regularizer_is_convex(n in 1usize..5, seed: u64, k in 0usize..4, u1 in 0.0..=1.0f64, u2 in 0.0..=1.0f64, t in 0.0..=1.0f64) {
        let h = pair(n, seed);
        let kind = kind(k);
        let mid = h.q_value(t * u1 + (1.0 - t) * u2, kind).unwrap();
        let chord = t * h.q_value(u1, kind).unwrap() + (1.0 - t) * h.q_value(u2, kind).unwrap();
        prop_assert!(mid <= chord + 1e-10, "{mid} > {chord}");
    }

    #[test]
    fn frobenius_regularizer_is_strictly_convex(n in 2usize..5, seed: u64) {
        let h = pair(n, seed);
        let step = 0.05;
        let q: Vec<f64> = (0..=20).map(|i| h.q_value(i as f64 * step, NormKind::FROBENIUS).unwrap()).collect();
        for w in q.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] > 0.0);
        }
    }

    #[test]
    fn subgradients_are_monotone(n in 1usize..5, seed: u64, k in 0usize..4, a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let h = pair(n, seed);
        let (lo, hi) = (a.min(b), a.max(b));
        let s_lo = h.q_subgradient(lo, kind(k)).unwrap();
        let s_hi = h.q_subgradient(hi, kind(k)).unwrap();
        prop_assert!(s_lo.lo <= s_lo.hi + 1e-12);
        prop_assert!(s_lo.hi <= s_hi.lo + 1e-9, "{s_lo:?} then {s_hi:?}");
    }

    #[test]
    fn subgradient_matches_finite_difference(n in 1usize..5, seed: u64, k in 0usize..4, u in 0.01..0.99f64) {
        let h = pair(n, seed);
        let kind = kind(k);
        let step = 1e-6;
        let widths: Vec<f64> = [u - step, u, u + step]
            .iter()
            .map(|&v| h.q_subgradient(v, kind).unwrap().width())
            .collect();
        prop_assume!(widths.iter().all(|w| *w < 1e-9));
        let s = h.q_subgradient(u, kind).unwrap().midpoint();
        let fd = (h.q_value(u + step, kind).unwrap() - h.q_value(u - step, kind).unwrap()) / (2.0 * step);
        prop_assert!((fd - s).abs() <= 1e-6 * s.abs().max(1.0), "fd {fd} vs {s}");
    }

    #[test]
    fn phase_reduction_never_increases_the_norm(n in 1usize..5, seed: u64, frob: bool, u in 0.0..=1.0f64) {
        let h = pair(n, seed);
        let kind = if frob { NormKind::FROBENIUS } else { NormKind::SPECTRAL };
        prop_assert!(h.q_value(u, kind.with_phase_reduction()).unwrap() <= h.q_value(u, kind).unwrap() + 1e-12);
    }

    #[test]
    fn band_is_ordered(n in 2usize..6, seed: u64, k in 0usize..4) {
        let band = singular_band(&pair(n, seed), kind(k)).unwrap();
        prop_assert!(band.m_lb <= band.m_ub + 1e-12);
    }

    #[test]
    fn propagation_preserves_norm(n in 1usize..5, seed: u64, steps in 1usize..40, horizon in 0.1..5.0f64, eps in 0.0..0.5f64) {
        let h = pair(n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let p = random_protocol(TimeGrid::new(horizon, steps).unwrap(), &mut rng);
        let e = random_signal(20, eps, &mut rng);
        let traj = propagate(&h, &p, &ground_state_of_b(&h), Some(&e)).unwrap();
        prop_assert!(traj.max_norm_deviation() < 1e-10);
    }

    #[test]
    fn lipschitz_and_fidelity_bounds_hold(n in 1usize..5, seed: u64, steps in 1usize..30, horizon in 0.1..4.0f64, eps in 0.0..0.3f64) {
        let h = pair(n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let p = random_protocol(TimeGrid::new(horizon, steps).unwrap(), &mut rng);
        let l = lipschitz_bound(&h, &p, NormKind::SPECTRAL).unwrap();
        let x0 = ground_state_of_b(&h);
        let nominal = propagate(&h, &p, &x0, None).unwrap();
        let a = random_signal(20, eps, &mut rng);
        let b = random_signal(20, eps, &mut rng);
        let xa = propagate(&h, &p, &x0, Some(&a)).unwrap();
        let xb = propagate(&h, &p, &x0, Some(&b)).unwrap();
        let gap = distance(xa.final_state(), xb.final_state());
        prop_assert!(gap <= l * a.grid_distance(&b, steps) + 1e-9);
        let f = fidelity(xa.final_state(), nominal.final_state());
        prop_assert!(f >= fidelity_lower_bound(l, eps) - 1e-12);
    }

    #[test]
    fn global_phase_only_rotates_the_state(n in 1usize..5, seed: u64, steps in 1usize..40, horizon in 0.1..4.0f64) {
        let h = pair(n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let grid = TimeGrid::new(horizon, steps).unwrap();
        let p = random_protocol(grid, &mut rng);
        let phase: Vec<f64> = (0..steps).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x0 = ground_state_of_b(&h);
        let plain = propagate(&h, &p, &x0, None).unwrap();
        let shifted = phase_shifted_propagate(&h, &p, &x0, &phase).unwrap();
        prop_assert!((fidelity(plain.final_state(), shifted.final_state()) - 1.0).abs() < 1e-10);
        let total: f64 = phase.iter().sum::<f64>() * grid.dt();
        let expected = plain.final_state() * C64::from_polar(1.0, -total);
        prop_assert!((shifted.final_state() - expected).iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn config_round_trips(seed: u64, horizon in 1e-3..1e3f64, steps in 1usize..10_000, zeta in 0.0..10.0f64, k in 0usize..4, levels in prop::collection::vec(0.0..1.0f64, 1..30)) {
        let config = RunConfig {
            seed,
            horizon,
            n_steps: steps,
            cost: CostSpec::robust(zeta, kind(k)),
            eps_levels: levels,
            ..RunConfig::default()
        };
        let back = RunConfig::from_json(&config.to_json()).unwrap();
        prop_assert_eq!(back, config);
    }

    #[test]
    fn csv_floats_round_trip(bits: u64) {
        let v = f64::from_bits(bits);
        prop_assume!(v.is_finite());
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }
}
