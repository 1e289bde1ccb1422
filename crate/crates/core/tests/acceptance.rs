//! Acceptance suite. Every criterion prints one PASS or FAIL line; the run
//! fails if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_anneal::cli::{cmd_robustness, ModelSource, RunConfig};
use robust_anneal::control::{
    gradient, optimize_protocol, total_cost, CostSpec, OptimizeReport, OptimizerOptions,
};
use robust_anneal::dynamics::{
    fidelity, fidelity_lower_bound, lipschitz_bound, phase_shifted_propagate, propagate, ErrorSignal, Protocol,
    TimeGrid,
};
use robust_anneal::linalg::C64;
use robust_anneal::operators::{build_ising, ground_state_of_b, HamiltonianPair, IsingModel, NormKind};
use robust_anneal::pmp::{diagnose, singular_band, singular_u_from_mu, sufficient_zeta, CaseLabel, PmpDiagnostics};
use robust_anneal::robustness::{default_eps_levels, generate_ensemble, Approach};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn random_pair(n: usize, seed: u64) -> HamiltonianPair {
    build_ising(&IsingModel::random(n, &mut ChaCha8Rng::seed_from_u64(seed))).unwrap()
}

fn random_protocol(grid: TimeGrid, rng: &mut impl Rng) -> Protocol {
    Protocol::new(grid, (0..grid.n_steps()).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn random_signal(sections: usize, eps: f64, rng: &mut impl Rng) -> ErrorSignal {
    ErrorSignal::new((0..sections).map(|_| rng.gen_range(-eps..=eps)).collect(), eps).unwrap()
}

fn near_bang(u: f64) -> bool {
    u < 0.01 || u > 0.99
}

/// The four-qubit model, horizon and grid shared by the structure criteria.
struct Study {
    ham: HamiltonianPair,
    nominal: (OptimizeReport, PmpDiagnostics),
    robust: Vec<(String, CostSpec, OptimizeReport, PmpDiagnostics)>,
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let ham = random_pair(4, 2);
        let grid = TimeGrid::new(1.5, 200).unwrap();
        let options = OptimizerOptions {
            restarts: 0,
            ..Default::default()
        };
        let solve = |spec: &CostSpec| {
            let r = optimize_protocol(&ham, spec, grid, None, &options).unwrap();
            let d = diagnose(&ham, &r.protocol, spec).unwrap();
            (r, d)
        };
        let nominal = solve(&CostSpec::nominal());
        let mut robust = Vec::new();
        for (name, norm) in [("spectral", NormKind::SPECTRAL), ("frobenius", NormKind::FROBENIUS)] {
            for zeta in [0.1, 0.2] {
                let spec = CostSpec::robust(zeta, norm);
                let (r, d) = solve(&spec);
                robust.push((format!("{name} zeta={zeta}"), spec, r, d));
            }
        }
        Study { ham, nominal, robust }
    })
}

fn unitarity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let ham = random_pair(1 + i % 8, rng.gen());
        let grid = TimeGrid::new(rng.gen_range(0.5..5.0), 200).unwrap();
        let p = random_protocol(grid, &mut rng);
        let e = random_signal(20, rng.gen_range(0.0..0.5), &mut rng);
        let traj = propagate(&ham, &p, &ground_state_of_b(&ham), Some(&e)).unwrap();
        worst = worst.max(traj.max_norm_deviation());
    }
    Verdict::new(worst < 1e-10, format!("max |‖x‖ - 1| = {worst:.2e} over 100 triples (limit 1e-10)"))
}

fn gradient_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..20 {
        let ham = random_pair(2 + i % 3, rng.gen());
        let k = 16;
        let grid = TimeGrid::new(rng.gen_range(0.5..3.0), k).unwrap();
        let p = Protocol::new(grid, (0..k).map(|_| rng.gen_range(0.05..0.95)).collect()).unwrap();
        let spec = match i % 3 {
            0 => CostSpec::nominal(),
            1 => CostSpec::robust(rng.gen_range(0.05..0.5), NormKind::SPECTRAL),
            _ => CostSpec::robust(rng.gen_range(0.05..0.5), NormKind::FROBENIUS),
        };
        let cost = |u: &[f64]| {
            total_cost(&ham, &Protocol::new(grid, u.to_vec()).unwrap(), &spec)
                .unwrap()
                .total(spec.zeta)
        };
        let g = gradient(&ham, &p, &spec).unwrap();
        for j in 0..k {
            let mut up = p.values().to_vec();
            let mut dn = up.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (cost(&up) - cost(&dn)) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / fd.abs().max(1e-3));
        }
    }
    Verdict::new(
        worst < 1e-5,
        format!("max relative error {worst:.2e} over 20 instances (limit 1e-5)"),
    )
}

fn lipschitz() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut violations = 0;
    let mut pairs = 0;
    let mut tightest = f64::INFINITY;
    let mut protocols: Vec<(HamiltonianPair, Protocol)> = (0..4)
        .map(|i| {
            let ham = random_pair(2 + i, rng.gen());
            let grid = TimeGrid::new(rng.gen_range(0.5..4.0), 200).unwrap();
            let p = random_protocol(grid, &mut rng);
            (ham, p)
        })
        .collect();
    let s = study();
    protocols.push((s.ham.clone(), s.nominal.0.protocol.clone()));
    for (ham, p) in &protocols {
        let l = lipschitz_bound(ham, p, NormKind::SPECTRAL).unwrap();
        let x0 = ground_state_of_b(ham);
        for _ in 0..100 {
            let eps = rng.gen_range(0.0..0.3);
            let a = random_signal(20, eps, &mut rng);
            let b = random_signal(20, eps, &mut rng);
            let xa = propagate(ham, p, &x0, Some(&a)).unwrap();
            let xb = propagate(ham, p, &x0, Some(&b)).unwrap();
            let gap = (xa.final_state() - xb.final_state()).norm();
            let bound = l * a.grid_distance(&b, p.grid().n_steps());
            if gap > bound + 1e-9 {
                violations += 1;
            }
            if bound > 0.0 {
                tightest = tightest.min(bound / gap.max(1e-300));
            }
            pairs += 1;
        }
    }
    Verdict::new(
        violations == 0,
        format!("{violations} violations over {pairs} pairs on 5 protocols; smallest bound/gap ratio {tightest:.2}"),
    )
}

fn fidelity_bound() -> Verdict {
    let ensemble = generate_ensemble(20, 20, 7).unwrap();
    let levels = default_eps_levels();
    let s = study();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let grid = TimeGrid::new(1.5, 200).unwrap();
    let protocols = [
        s.nominal.0.protocol.clone(),
        s.robust[0].2.protocol.clone(),
        Protocol::linear_ramp(grid),
        random_protocol(grid, &mut rng),
    ];
    let mut violations = 0;
    let mut checks = 0;
    let mut min_margin = f64::INFINITY;
    for p in &protocols {
        let l = lipschitz_bound(&s.ham, p, NormKind::SPECTRAL).unwrap();
        let x0 = ground_state_of_b(&s.ham);
        let reference = propagate(&s.ham, p, &x0, None).unwrap();
        for &eps in &levels {
            let bound = fidelity_lower_bound(l, eps);
            for sig in ensemble.signals() {
                let x = propagate(&s.ham, p, &x0, Some(&sig.scaled(eps))).unwrap();
                let f = fidelity(x.final_state(), reference.final_state());
                // Allow for round-off in the overlap itself.
                if f < bound - 1e-12 {
                    violations += 1;
                }
                min_margin = min_margin.min(f - bound);
                checks += 1;
            }
        }
    }
    Verdict::new(
        violations == 0,
        format!("{violations} violations over {checks} (protocol, signal, level) checks; min margin {min_margin:.2e}"),
    )
}

fn pmp_structure() -> Verdict {
    let s = study();
    let (r, d) = &s.nominal;
    let u = r.protocol.values();
    let ends = near_bang(u[0]) && near_bang(u[u.len() - 1]);
    let limit = 1e-3 * d.mu_scale;
    let interior_mu = u
        .iter()
        .zip(&d.mu_step)
        .filter(|(u, _)| !near_bang(**u))
        .map(|(_, m)| m.abs())
        .fold(0.0, f64::max);
    let spread = d.hamiltonian_spread();
    let spread_limit = 1e-3 * (1.0 + d.hamiltonian_mean().abs());
    let pass = r.converged && ends && interior_mu < limit && spread < spread_limit;
    Verdict::new(
        pass,
        format!(
            "converged={} after {} iterations; u_0={:.3e} u_K-1={:.3e}; max interior |mu|={interior_mu:.2e} (limit {limit:.2e}); H spread={spread:.2e} (limit {spread_limit:.2e})",
            r.converged,
            r.iterations,
            u[0],
            u[u.len() - 1]
        ),
    )
}

fn singular_band_behavior() -> Verdict {
    let s = study();
    let base = s.nominal.1.singular_fraction;
    let mut pass = true;
    let mut parts = vec![format!("zeta=0: {base:.3}")];
    for (name, _, r, d) in &s.robust {
        let violated = d.count(CaseLabel::Violated);
        pass &= r.converged && violated == 0 && d.singular_fraction >= base;
        parts.push(format!(
            "{name}: fraction {:.3}, violated {violated}, converged {}",
            d.singular_fraction, r.converged
        ));
    }
    Verdict::new(pass, parts.join("; "))
}

fn all_singular_threshold() -> Verdict {
    let qubit = HamiltonianPair::new(
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]),
        DVector::from_vec(vec![1.0, -1.0]),
    )
    .unwrap();
    let threshold = singular_band(&qubit, NormKind::SPECTRAL).unwrap().zeta_threshold;
    let fixture_err = (threshold - 2.0 * 2f64.sqrt()).abs();
    let mut pass = fixture_err < 1e-12;
    let mut parts = vec![format!("qubit threshold {threshold:.15} (error {fixture_err:.1e})")];
    let grid = TimeGrid::new(1.5, 200).unwrap();
    let options = OptimizerOptions {
        restarts: 0,
        ..Default::default()
    };
    for seed in [11, 12, 13] {
        let ham = random_pair(4, seed);
        let zeta = 1.05 * sufficient_zeta(&ham, NormKind::SPECTRAL).unwrap();
        let spec = CostSpec::robust(zeta, NormKind::SPECTRAL);
        let r = optimize_protocol(&ham, &spec, grid, None, &options).unwrap();
        let d = diagnose(&ham, &r.protocol, &spec).unwrap();
        pass &= d.singular_fraction >= 0.99;
        parts.push(format!("model {seed}: zeta={zeta:.3} fraction {:.3}", d.singular_fraction));
    }
    Verdict::new(pass, parts.join("; "))
}

fn analytic_singular_control() -> Verdict {
    let s = study();
    let mut worst = 0.0f64;
    let mut steps = 0;
    for (_, spec, r, d) in &s.robust {
        for (k, &u) in r.protocol.values().iter().enumerate() {
            if d.case_labels[k] == CaseLabel::Singular && !near_bang(u) {
                let analytic = singular_u_from_mu(d.mu_step[k], &s.ham, spec.norm, spec.zeta).unwrap();
                worst = worst.max((analytic - u).abs());
                steps += 1;
            }
        }
    }
    Verdict::new(
        steps > 0 && worst < 1e-2,
        format!("max |u_analytic - u_numeric| = {worst:.2e} over {steps} singular steps (limit 1e-2)"),
    )
}

fn artifacts_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn qualitative_robustness() -> Verdict {
    let model = IsingModel::random(8, &mut ChaCha8Rng::seed_from_u64(8));
    let mut config = RunConfig {
        seed: 8,
        model: ModelSource::Couplings {
            couplings: model.couplings().to_vec(),
        },
        horizon: 2.0,
        n_steps: 200,
        optimizer: OptimizerOptions {
            max_iters: 300,
            restarts: 0,
            ..Default::default()
        },
        approaches: Approach::standard_set(0.1),
        output_dir: Some(artifacts_dir("robustness")),
        ..RunConfig::default()
    };
    config.ensemble.seed = Some(1);
    let out = cmd_robustness(&config).unwrap();
    let curve = &out.curve;
    let n = curve.eps_levels.len();
    let get = |name: &str| curve.approach(name).unwrap();
    let (nominal, qaoa) = (get("nominal"), get("qaoa"));
    let mut fidelity_ok = true;
    let mut objective_ok = true;
    let mut parts = Vec::new();
    for name in ["spectral", "frobenius"] {
        let a = get(name);
        let f_bad = (n / 2..n)
            .filter(|&l| a.worst_fidelity[l] < nominal.worst_fidelity[l] || a.worst_fidelity[l] < qaoa.worst_fidelity[l])
            .count();
        let o_bad = (3 * n / 4..n)
            .filter(|&l| a.mean_objective[l] > nominal.mean_objective[l])
            .count();
        fidelity_ok &= f_bad == 0;
        objective_ok &= o_bad == 0;
        parts.push(format!(
            "{name}: fidelity below a baseline at {f_bad}/{} upper levels, objective above nominal at {o_bad}/{} top levels (at eps={}: F={:.4} vs nominal {:.4}, qaoa {:.4}; J={:.4} vs nominal {:.4})",
            n - n / 2,
            n - 3 * n / 4,
            curve.eps_levels[n - 1],
            a.worst_fidelity[n - 1],
            nominal.worst_fidelity[n - 1],
            qaoa.worst_fidelity[n - 1],
            a.mean_objective[n - 1],
            nominal.mean_objective[n - 1]
        ));
    }
    let dir = config.output_dir.unwrap();
    let csvs = dir.join("curves.csv").exists() && dir.join("bounds.csv").exists();
    parts.push(format!("worst-fidelity part {}", if fidelity_ok { "holds" } else { "fails" }));
    parts.push(format!("mean-objective part {}", if objective_ok { "holds" } else { "fails" }));
    parts.push(format!("CSVs in {}", dir.display()));
    Verdict::new(fidelity_ok && objective_ok && csvs, parts.join("; "))
}

fn global_phase() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let ham = random_pair(4, 3);
    let grid = TimeGrid::new(2.0, 200).unwrap();
    let p = random_protocol(grid, &mut rng);
    let x0 = ground_state_of_b(&ham);
    let plain = propagate(&ham, &p, &x0, None).unwrap();
    let (mut fid_err, mut phase_err) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let phase: Vec<f64> = (0..200).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let shifted = phase_shifted_propagate(&ham, &p, &x0, &phase).unwrap();
        fid_err = fid_err.max((fidelity(plain.final_state(), shifted.final_state()) - 1.0).abs());
        let rotation = C64::from_polar(1.0, -phase.iter().sum::<f64>() * grid.dt());
        let expected = plain.final_state() * rotation;
        let dev = (shifted.final_state() - expected).iter().map(|z| z.norm()).fold(0.0, f64::max);
        phase_err = phase_err.max(dev);
    }
    Verdict::new(
        fid_err < 1e-10 && phase_err < 1e-9,
        format!("max fidelity error {fid_err:.1e} (limit 1e-10), max phase error {phase_err:.1e} (limit 1e-9)"),
    )
}

fn determinism() -> Verdict {
    let root = artifacts_dir("determinism");
    fs::create_dir_all(&root).unwrap();
    let config = serde_json::json!({
        "seed": 21,
        "model": {"source": "random", "n_qubits": 3},
        "horizon": 1.5,
        "n_steps": 50,
        "optimizer": {"max_iters": 300, "restarts": 2},
        "ensemble": {"n_signals": 8, "n_sections": 10},
        "approaches": [
            {"name": "nominal", "method": "grid", "zeta": 0.0, "norm": {"norm": "spectral"}},
            {"name": "qaoa", "method": "qaoa", "n_bangs": 4},
            {"name": "spectral", "method": "grid", "zeta": 0.1, "norm": {"norm": "spectral"}},
            {"name": "frobenius", "method": "grid", "zeta": 0.1, "norm": {"norm": "frobenius"}}
        ],
        "sweep": {"n_models": 3, "n_qubits": 3, "optimizer": {"max_iters": 150, "restarts": 1}}
    });
    let cfg = root.join("config.json");
    fs::write(&cfg, config.to_string()).unwrap();
    let run = |cmd: &str, out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_robust-anneal"))
            .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap()
            .status;
        assert!(status.success(), "{cmd} failed: {status}");
    };
    let mut compared = 0;
    let mut differing = Vec::new();
    for cmd in ["optimize", "robustness", "sweep"] {
        let a = root.join(format!("{cmd}-a"));
        let b = root.join(format!("{cmd}-b"));
        run(cmd, &a);
        run(cmd, &b);
        let mut names: Vec<_> = fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            compared += 1;
            if fs::read(a.join(&name)).unwrap() != fs::read(b.join(&name)).unwrap() {
                differing.push(format!("{cmd}/{}", name.to_string_lossy()));
            }
        }
    }
    Verdict::new(
        differing.is_empty() && compared >= 10,
        format!("{compared} output files (CSV, JSON, JSONL) compared across reruns, differing: {differing:?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("unitarity", unitarity),
        ("gradient oracle", gradient_oracle),
        ("Lipschitz bound", lipschitz),
        ("fidelity bound", fidelity_bound),
        ("PMP structure at zeta=0", pmp_structure),
        ("singular-band behavior", singular_band_behavior),
        ("all-singular threshold", all_singular_threshold),
        ("analytic vs numeric singular control", analytic_singular_control),
        ("qualitative robustness curves", qualitative_robustness),
        ("global-phase identity", global_phase),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let status = if verdict.pass { "PASS" } else { "FAIL" };
        if !verdict.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {status} {name} [{:.1}s]: {}",
            start.elapsed().as_secs_f64(),
            verdict.detail
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
