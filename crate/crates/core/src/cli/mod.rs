//! Command-line driver: JSON configuration in, CSV and JSON artifacts out.
//!
//! Exit codes are `0` on success, `2` for configuration or input errors, `3`
//! for numerical failures and `4` for I/O errors.

mod config;
mod output;

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{ControlKind, EnsembleConfig, ModelSource, RunConfig, SweepConfig};
pub use output::fmt_f64;
use output::{write_csv, write_json, Metadata};

use crate::control::{optimize_protocol, optimize_qaoa, total_cost, CostBreakdown, CostSpec, OptimizeReport};
use crate::dynamics::{Protocol, TimeGrid};
use crate::error::{Error, Result};
use crate::pmp::{diagnose, CaseLabel, PmpDiagnostics, SingularBand};
use crate::robustness::{
    aggregate_sweep, random_ising_sweep, robustness_curve, EnsembleSweepResult, ModelRecord, NamedSchedule,
    RobustnessCurve, SweepSpec,
};
use crate::VERSION;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Json(j) if j.is_io() => EXIT_IO,
        Error::Csv(c) if c.is_io_error() => EXIT_IO,
        Error::NonFiniteCost
        | Error::ZeroMatrixSubgradient
        | Error::OutOfBand { .. }
        | Error::NotNormalized(_)
        | Error::NotHermitian(_) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

const LABELS: [CaseLabel; 4] = [
    CaseLabel::Singular,
    CaseLabel::BangZero,
    CaseLabel::BangOne,
    CaseLabel::Violated,
];

/// One protocol with its per-step diagnostics, as written to `protocol.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRecord {
    pub grid: TimeGrid,
    pub u: Vec<f64>,
    /// Step-averaged switching function.
    pub mu: Vec<f64>,
    pub control_hamiltonian: Vec<f64>,
    pub case_labels: Vec<CaseLabel>,
    pub zeta: f64,
    pub cost: CostBreakdown,
}

impl ProtocolRecord {
    pub fn new(protocol: &Protocol, diag: &PmpDiagnostics, cost: CostBreakdown) -> Self {
        let k = protocol.values().len();
        Self {
            grid: protocol.grid(),
            u: protocol.values().to_vec(),
            mu: diag.mu_step.clone(),
            control_hamiltonian: diag.control_hamiltonian[..k].to_vec(),
            case_labels: diag.case_labels.clone(),
            zeta: diag.zeta,
            cost,
        }
    }

    pub const COLUMNS: [&'static str; 6] = ["step", "t", "u", "mu", "control_hamiltonian", "case_label"];

    pub fn write_csv(&self, path: &Path, header: &str) -> Result<()> {
        let header = format!(
            "{header}# cost: terminal={} regularizer={} zeta={}\n",
            fmt_f64(self.cost.terminal),
            fmt_f64(self.cost.regularizer),
            fmt_f64(self.zeta)
        );
        let rows = (0..self.u.len()).map(|k| {
            vec![
                k.to_string(),
                fmt_f64(self.grid.time(k)),
                fmt_f64(self.u[k]),
                fmt_f64(self.mu[k]),
                fmt_f64(self.control_hamiltonian[k]),
                self.case_labels[k].to_string(),
            ]
        });
        write_csv(path, &header, &Self::COLUMNS, rows)
    }
}

/// Reads controls from a `protocol.csv`, a JSON array, or whitespace- or
/// comma-separated numbers. Returns `u` and, for CSV input, the `t` column.
pub fn read_controls(path: &Path) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let malformed = |msg: String| Error::Config(format!("malformed protocol file {}: {msg}", path.display()));
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| malformed("no data".into()))?;

    if first.starts_with('[') {
        let u: Vec<f64> = serde_json::from_str(text.trim()).map_err(|e| malformed(e.to_string()))?;
        return Ok((u, None));
    }
    if first.chars().any(|c| c.is_ascii_alphabetic() && c != 'e' && c != 'E') {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| malformed(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let ui = col("u").ok_or_else(|| malformed("no `u` column".into()))?;
        let ti = col("t");
        let (mut u, mut t) = (Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| malformed(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                let field = rec.get(i).unwrap_or("");
                field
                    .trim()
                    .parse()
                    .map_err(|_| malformed(format!("row {}: {field:?} is not a number", line + 1)))
            };
            u.push(num(ui)?);
            if let Some(i) = ti {
                t.push(num(i)?);
            }
        }
        return Ok((u, ti.map(|_| t)));
    }
    let u = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split(|c: char| c.is_whitespace() || c == ','))
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| malformed(format!("{s:?} is not a number"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((u, None))
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_resolved(dir: &Path, meta: &Metadata) -> Result<()> {
    write_json(&dir.join("config.resolved.json"), &meta.config)
}

fn band_json(band: &SingularBand) -> Value {
    json!({
        "m_lb": band.m_lb,
        "m_ub": band.m_ub,
        "zeta_threshold": band.has_threshold().then_some(band.zeta_threshold),
        "warning": band.warning(),
    })
}

fn counts_json(diag: &PmpDiagnostics) -> Value {
    LABELS
        .iter()
        .map(|l| (l.as_str().to_string(), json!(diag.count(*l))))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

/// Result of [`cmd_optimize`].
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub config: RunConfig,
    pub report: OptimizeReport,
    pub diagnostics: PmpDiagnostics,
    pub record: ProtocolRecord,
}

/// Optimizes one protocol and writes `protocol.csv`, `report.json` and
/// `config.resolved.json`.
pub fn cmd_optimize(config: &RunConfig) -> Result<OptimizeOutcome> {
    let config = config.clone().resolve()?;
    let ham = config.hamiltonian()?;
    let grid = config.grid()?;
    let options = config.optimizer_options();
    let (report, spec) = match config.control {
        ControlKind::Grid => (
            optimize_protocol(&ham, &config.cost, grid, None, &options)?,
            config.cost,
        ),
        ControlKind::Qaoa => (
            optimize_qaoa(&ham, grid, config.qaoa_bangs, None, &options)?,
            CostSpec::nominal(),
        ),
    };
    let diagnostics = diagnose(&ham, &report.protocol, &spec)?;
    let cost = CostBreakdown {
        terminal: report.cost_terminal,
        regularizer: report.cost_regularizer,
    };
    let record = ProtocolRecord::new(&report.protocol, &diagnostics, cost);

    let dir = out_dir(&config)?;
    let meta = Metadata::new(&config);
    record.write_csv(&dir.join("protocol.csv"), &meta.csv_header())?;
    let mut doc = meta.json();
    doc["couplings"] = json!(config.ising_model()?.couplings());
    doc["cost"] = json!({
        "terminal": report.cost_terminal,
        "regularizer": report.cost_regularizer,
        "total": report.cost_total(),
        "zeta": spec.zeta,
        "norm": spec.norm,
    });
    doc["optimizer"] = json!({
        "iterations": report.iterations,
        "converged": report.converged,
        "gradient_norm_final": report.gradient_norm_final,
        "start_index": report.start_index,
    });
    doc["qaoa_schedule"] = json!(report.schedule);
    doc["band"] = band_json(&diagnostics.band);
    doc["pmp"] = json!({
        "singular_fraction": diagnostics.singular_fraction,
        "hamiltonian_mean": diagnostics.hamiltonian_mean(),
        "hamiltonian_spread": diagnostics.hamiltonian_spread(),
        "counts": counts_json(&diagnostics),
        "tolerance": diagnostics.tolerance,
        "mu_scale": diagnostics.mu_scale,
    });
    write_json(&dir.join("report.json"), &doc)?;
    write_resolved(&dir, &meta)?;
    Ok(OptimizeOutcome {
        config,
        report,
        diagnostics,
        record,
    })
}

/// Result of [`cmd_robustness`].
#[derive(Debug, Clone)]
pub struct RobustnessOutcome {
    pub config: RunConfig,
    pub reports: Vec<(String, OptimizeReport)>,
    pub curve: RobustnessCurve,
}

/// Optimizes every configured approach, evaluates all of them against one
/// error ensemble and writes `curves.csv`, `bounds.csv`, `protocols.csv`,
/// `report.json` and `config.resolved.json`.
pub fn cmd_robustness(config: &RunConfig) -> Result<RobustnessOutcome> {
    let config = config.clone().resolve()?;
    let ham = config.hamiltonian()?;
    let grid = config.grid()?;
    let options = config.optimizer_options();
    let ensemble = config.error_ensemble()?;
    let reports = config
        .approaches
        .iter()
        .map(|a| Ok((a.name.clone(), a.solve(&ham, grid, &options)?)))
        .collect::<Result<Vec<_>>>()?;
    let schedules: Vec<NamedSchedule> = reports
        .iter()
        .map(|(name, r)| NamedSchedule {
            name: name.clone(),
            schedule: r.schedule(),
        })
        .collect();
    let curve = robustness_curve(&ham, &schedules, &ensemble, &config.eps_levels)?;

    let dir = out_dir(&config)?;
    let meta = Metadata::new(&config);
    let header = meta.csv_header();
    let mut curve_rows = Vec::new();
    let mut bound_rows = Vec::new();
    for (l, &eps) in curve.eps_levels.iter().enumerate() {
        for a in &curve.approaches {
            curve_rows.push(vec![
                fmt_f64(eps),
                a.name.clone(),
                fmt_f64(a.worst_fidelity[l]),
                fmt_f64(a.mean_objective[l]),
            ]);
            bound_rows.push(vec![
                fmt_f64(eps),
                a.name.clone(),
                fmt_f64(a.lipschitz),
                fmt_f64(a.fidelity_lower_bound[l]),
            ]);
        }
    }
    write_csv(
        &dir.join("curves.csv"),
        &header,
        &["eps_hat", "approach", "worst_fidelity", "mean_objective"],
        curve_rows,
    )?;
    write_csv(
        &dir.join("bounds.csv"),
        &header,
        &["eps_hat", "approach", "lipschitz_L", "fidelity_lower_bound"],
        bound_rows,
    )?;
    let protocol_rows = reports.iter().flat_map(|(name, r)| {
        r.protocol.values().iter().enumerate().map(move |(k, u)| {
            vec![name.clone(), k.to_string(), fmt_f64(grid.time(k)), fmt_f64(*u)]
        })
    });
    write_csv(&dir.join("protocols.csv"), &header, &["approach", "step", "t", "u"], protocol_rows)?;

    let mut doc = meta.json();
    doc["couplings"] = json!(config.ising_model()?.couplings());
    doc["approaches"] = reports
        .iter()
        .zip(&curve.approaches)
        .map(|((name, r), c)| {
            json!({
                "name": name,
                "cost_terminal": r.cost_terminal,
                "cost_regularizer": r.cost_regularizer,
                "zeta": r.zeta,
                "iterations": r.iterations,
                "converged": r.converged,
                "gradient_norm_final": r.gradient_norm_final,
                "lipschitz_L": c.lipschitz,
                "qaoa_schedule": r.schedule,
            })
        })
        .collect();
    write_json(&dir.join("report.json"), &doc)?;
    write_resolved(&dir, &meta)?;
    Ok(RobustnessOutcome { config, reports, curve })
}

/// How `cmd_sweep` treats an existing `models.jsonl`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResumeMode {
    /// Refuse to touch existing per-model records.
    #[default]
    Fresh,
    /// Keep valid records and run only the missing models.
    Resume,
    /// Discard existing records.
    Restart,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SweepLine {
    Header { version: String, fingerprint: Value },
    Model(ModelRecord),
}

fn sweep_spec(config: &RunConfig) -> SweepSpec {
    SweepSpec {
        n_models: config.sweep.n_models,
        n_qubits: config.sweep.n_qubits,
        horizon: config.horizon,
        n_steps: config.n_steps,
        approaches: config.approaches.clone(),
        options: config.sweep.optimizer,
    }
}

fn sweep_fingerprint(config: &RunConfig) -> Value {
    json!({
        "seed": config.seed,
        "horizon": config.horizon,
        "n_steps": config.n_steps,
        "sweep": config.sweep,
        "approaches": config.approaches,
        "eps_levels": config.eps_levels,
        "ensemble": config.ensemble,
        "max_qubits": config.max_qubits,
    })
}

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)? + "\n")
}

/// Parses a partial `models.jsonl`. A truncated final line is dropped; any
/// other defect is an error. Returns the records and the byte length of the
/// intact prefix, or `None` when not even the header survived.
fn load_partial(path: &Path, fingerprint: &Value, n_models: usize) -> Result<Option<(Vec<ModelRecord>, u64)>> {
    let bytes = fs::read(path)?;
    let end = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if end == 0 {
        return Ok(None);
    }
    let corrupt = |line: usize, msg: &str| {
        Error::Config(format!(
            "{} is corrupt at line {line}: {msg}; rerun with --restart to discard it",
            path.display()
        ))
    };
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| corrupt(0, "not UTF-8"))?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().expect("at least one complete line");
    match serde_json::from_str::<SweepLine>(first) {
        Ok(SweepLine::Header { fingerprint: fp, .. }) if &fp == fingerprint => {}
        Ok(SweepLine::Header { .. }) => {
            return Err(Error::Config(format!(
                "{} was written by a different configuration; rerun with --restart to discard it",
                path.display()
            )))
        }
        _ => return Err(corrupt(1, "missing header")),
    }
    let mut records: Vec<ModelRecord> = Vec::new();
    for (i, line) in lines {
        match serde_json::from_str::<SweepLine>(line) {
            Ok(SweepLine::Model(r)) if r.index < n_models && !records.iter().any(|o| o.index == r.index) => {
                records.push(r)
            }
            Ok(SweepLine::Model(r)) => return Err(corrupt(i + 1, &format!("unexpected model index {}", r.index))),
            Ok(SweepLine::Header { .. }) => return Err(corrupt(i + 1, "repeated header")),
            Err(e) => return Err(corrupt(i + 1, &e.to_string())),
        }
    }
    Ok(Some((records, end as u64)))
}

/// Runs the random-model sweep, appending every finished model to
/// `models.jsonl` and writing `aggregate.csv` and `config.resolved.json`.
pub fn cmd_sweep(config: &RunConfig, mode: ResumeMode) -> Result<EnsembleSweepResult> {
    let config = config.clone().resolve()?;
    let spec = sweep_spec(&config);
    let ensemble = config.error_ensemble()?;
    let dir = out_dir(&config)?;
    let jsonl = dir.join("models.jsonl");
    let fingerprint = sweep_fingerprint(&config);

    let mut done = Vec::new();
    let existing = jsonl.exists() && fs::metadata(&jsonl)?.len() > 0;
    let partial = match (mode, existing) {
        (ResumeMode::Fresh, true) => {
            return Err(Error::Config(format!(
                "{} already exists; pass --resume to continue it or --restart to discard it",
                jsonl.display()
            )))
        }
        (ResumeMode::Resume, true) => load_partial(&jsonl, &fingerprint, spec.n_models)?,
        _ => None,
    };
    let mut file = match partial {
        Some((records, len)) => {
            done = records;
            let f = OpenOptions::new().write(true).open(&jsonl)?;
            f.set_len(len)?;
            OpenOptions::new().append(true).open(&jsonl)?
        }
        None => {
            let mut f = fs::File::create(&jsonl)?;
            f.write_all(
                json_line(&SweepLine::Header {
                    version: VERSION.into(),
                    fingerprint,
                })?
                .as_bytes(),
            )?;
            f
        }
    };

    let result = random_ising_sweep(&spec, &ensemble, &config.eps_levels, config.seed, done, |r| {
        file.write_all(json_line(&SweepLine::Model(r.clone()))?.as_bytes())?;
        file.flush()?;
        Ok(())
    })?;

    let meta = Metadata::new(&config);
    let header = format!(
        "{}# models: completed={} failed={}\n",
        meta.csv_header(),
        result.n_models,
        result.n_failed
    );
    let mut rows = Vec::new();
    for (l, &eps) in result.eps_levels.iter().enumerate() {
        for a in &result.approaches {
            rows.push(vec![
                fmt_f64(eps),
                a.name.clone(),
                fmt_f64(a.worst_fidelity[l]),
                fmt_f64(a.normalized_objective[l]),
            ]);
        }
    }
    write_csv(
        &dir.join("aggregate.csv"),
        &header,
        &["eps_hat", "approach", "worst_fidelity", "normalized_objective"],
        rows,
    )?;
    write_resolved(&dir, &meta)?;
    Ok(result)
}

/// Re-aggregates a finished or partial `models.jsonl` without running anything.
pub fn aggregate_jsonl(config: &RunConfig, path: &Path) -> Result<EnsembleSweepResult> {
    let config = config.clone().resolve()?;
    let (records, _) = load_partial(path, &sweep_fingerprint(&config), config.sweep.n_models)?
        .ok_or_else(|| Error::Config(format!("{} holds no records", path.display())))?;
    aggregate_sweep(&records, &config.approaches, &config.eps_levels)
}

/// Outcome of [`cmd_pmp_check`].
#[derive(Debug, Clone, Serialize)]
pub struct PmpCheckReport {
    pub n_steps: usize,
    pub zeta: f64,
    pub cost_terminal: f64,
    pub cost_regularizer: f64,
    pub singular_fraction: f64,
    pub hamiltonian_mean: f64,
    pub hamiltonian_spread: f64,
    /// `1e-3 (1 + |mean 𝕳|)`.
    pub spread_tolerance: f64,
    pub band: SingularBand,
    pub band_tolerance: f64,
    pub counts: Value,
    pub violated_steps: Vec<usize>,
    pub passed: bool,
    #[serde(skip)]
    pub diagnostics: Option<PmpDiagnostics>,
}

impl std::fmt::Display for PmpCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "steps: {}", self.n_steps)?;
        writeln!(f, "zeta: {}", self.zeta)?;
        writeln!(f, "cost: terminal={} regularizer={}", self.cost_terminal, self.cost_regularizer)?;
        writeln!(f, "band: [{}, {}] (tolerance {:e})", self.band.m_lb, self.band.m_ub, self.band_tolerance)?;
        if self.band.has_threshold() {
            writeln!(f, "zeta_threshold: {}", self.band.zeta_threshold)?;
        } else {
            writeln!(f, "zeta_threshold: none")?;
        }
        if let Some(w) = self.band.warning() {
            writeln!(f, "warning: {w}")?;
        }
        writeln!(f, "singular_fraction: {}", self.singular_fraction)?;
        writeln!(f, "labels: {}", self.counts)?;
        writeln!(
            f,
            "control_hamiltonian: mean={} spread={:e} (tolerance {:e})",
            self.hamiltonian_mean, self.hamiltonian_spread, self.spread_tolerance
        )?;
        if !self.violated_steps.is_empty() {
            writeln!(f, "violated_steps: {:?}", self.violated_steps)?;
        }
        write!(f, "result: {}", if self.passed { "PASS" } else { "FAIL" })
    }
}

/// Recomputes the maximum-principle diagnostics of a protocol read from
/// `protocol`. The grid has the configured horizon and one step per control
/// value; passing requires no violated step and a flat `𝕳`.
pub fn cmd_pmp_check(config: &RunConfig, protocol: &Path) -> Result<PmpCheckReport> {
    let config = config.clone().resolve()?;
    let (u, t) = read_controls(protocol)?;
    if u.is_empty() {
        return Err(Error::Config(format!("{} holds no controls", protocol.display())));
    }
    let grid = TimeGrid::new(config.horizon, u.len())?;
    if let Some(t) = t {
        let tol = 1e-9 * config.horizon.max(1.0);
        if let Some(k) = (0..t.len()).find(|&k| (t[k] - grid.time(k)).abs() > tol) {
            return Err(Error::Config(format!(
                "step {k} of {} starts at t={} but the configured grid puts it at {}",
                protocol.display(),
                t[k],
                grid.time(k)
            )));
        }
    }
    let ham = config.hamiltonian()?;
    let protocol = Protocol::new(grid, u)?;
    let diag = diagnose(&ham, &protocol, &config.cost)?;
    let cost = total_cost(&ham, &protocol, &config.cost)?;
    let mean = diag.hamiltonian_mean();
    let spread = diag.hamiltonian_spread();
    let spread_tolerance = 1e-3 * (1.0 + mean.abs());
    let violated_steps: Vec<usize> = diag
        .case_labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == CaseLabel::Violated)
        .map(|(k, _)| k)
        .collect();
    Ok(PmpCheckReport {
        n_steps: grid.n_steps(),
        zeta: config.cost.zeta,
        cost_terminal: cost.terminal,
        cost_regularizer: cost.regularizer,
        singular_fraction: diag.singular_fraction,
        hamiltonian_mean: mean,
        hamiltonian_spread: spread,
        spread_tolerance,
        band: diag.band,
        band_tolerance: diag.tolerance.band,
        counts: counts_json(&diag),
        passed: violated_steps.is_empty() && spread < spread_tolerance,
        violated_steps,
        diagnostics: Some(diag),
    })
}

#[derive(Debug, Parser)]
#[command(name = "robust-anneal", version, about = "Optimal and robust quantum annealing protocols")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding the configured one.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Master seed, overriding the configured one.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize one protocol and report its maximum-principle diagnostics.
    Optimize(CommonArgs),
    /// Compare approaches over a grid of noise levels.
    Robustness(CommonArgs),
    /// Average robustness curves over random Ising models.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Continue from an existing models.jsonl.
        #[arg(long)]
        resume: bool,
        /// Discard an existing models.jsonl.
        #[arg(long, conflicts_with = "resume")]
        restart: bool,
    },
    /// Check the maximum-principle conditions of a given protocol.
    PmpCheck {
        #[command(flatten)]
        common: CommonArgs,
        /// protocol.csv, a JSON array, or a list of numbers.
        #[arg(long)]
        protocol: PathBuf,
    },
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = Some(out.clone());
    }
    Ok(config)
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(f),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Optimize(args) => {
            let config = load_config(&args)?;
            let o = with_jobs(args.jobs, || cmd_optimize(&config))?;
            if !o.report.converged {
                eprintln!(
                    "warning: optimizer stopped after {} iterations with projected gradient {:e}",
                    o.report.iterations, o.report.gradient_norm_final
                );
            }
            println!(
                "cost {} after {} iterations, singular fraction {}",
                o.report.cost_total(),
                o.report.iterations,
                o.diagnostics.singular_fraction
            );
        }
        Command::Robustness(args) => {
            let config = load_config(&args)?;
            let o = with_jobs(args.jobs, || cmd_robustness(&config))?;
            for a in &o.curve.approaches {
                println!(
                    "{}: L={} worst fidelity at eps={} is {}",
                    a.name,
                    a.lipschitz,
                    o.curve.eps_levels.last().copied().unwrap_or(0.0),
                    a.worst_fidelity.last().copied().unwrap_or(f64::NAN)
                );
            }
        }
        Command::Sweep { common, resume, restart } => {
            let config = load_config(&common)?;
            let mode = match (resume, restart) {
                (true, _) => ResumeMode::Resume,
                (_, true) => ResumeMode::Restart,
                _ => ResumeMode::Fresh,
            };
            let r = with_jobs(common.jobs, || cmd_sweep(&config, mode))?;
            println!("{} models completed, {} failed", r.n_models, r.n_failed);
        }
        Command::PmpCheck { common, protocol } => {
            let config = load_config(&common)?;
            let r = with_jobs(common.jobs, || cmd_pmp_check(&config, &protocol))?;
            println!("{r}");
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
