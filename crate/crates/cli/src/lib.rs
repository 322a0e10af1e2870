//! Command implementations behind the `mapk` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mapk_core::error::render_diagnostics;
use mapk_core::metrics::{self, MetricsReport};
use mapk_core::model_io::{self, ModelSpec, UnknownKeys};
use mapk_core::simulator::{self, EstimateSet};
use mapk_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_COMPARE_FAIL: i32 = 4;

/// |z| above this fails a comparison.
pub const Z_LIMIT: f64 = 3.0;

#[derive(Debug, Parser)]
#[command(name = "mapk", version, about = "MAP_k|G_k|inf queues in a semi-Markov environment with catastrophes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the analytic engine and write report.json plus CSV curves.
    Analyze(Flags),
    /// Run the discrete-event simulator and write estimates.json.
    Simulate(Flags),
    /// Run both pipelines and compare every shared metric by z-score.
    Compare(Flags),
    /// Write the canonical serialization of a model to model.json.
    ExportModel(Flags),
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    /// Model file (JSON).
    #[arg(long, value_name = "PATH", required_unless_present = "canonical", conflicts_with = "canonical")]
    pub model: Option<PathBuf>,
    /// Use a built-in model instead of a file: mg1inf-poisson, mmpp2, marked2, env2-cat, poisson-product.
    #[arg(long, value_name = "NAME")]
    pub canonical: Option<String>,
    /// Output directory for machine-readable artifacts.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Grid step h of the analytic engine.
    #[arg(long, value_name = "H")]
    pub grid_step: Option<f64>,
    /// Grid horizon T of the analytic engine.
    #[arg(long, value_name = "T")]
    pub horizon: Option<f64>,
    /// Simulation replications.
    #[arg(long, value_name = "R")]
    pub replications: Option<usize>,
    /// Simulation seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Comma-separated observation times.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub t_points: Option<Vec<f64>>,
    /// Comma-separated PGF arguments in [0, 1].
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub z_points: Option<Vec<f64>>,
    /// Per-type cutoff for explicit distributions and histograms.
    #[arg(long, value_name = "N")]
    pub cutoff: Option<usize>,
    /// Reject unknown keys in the model file (default).
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Warn about unknown keys instead of rejecting them.
    #[arg(long)]
    pub lenient: bool,
    /// Write the event trace of the first replication to trace.csv.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Serialize)]
pub struct Parameters {
    pub analysis: model_io::AnalysisDoc,
    pub simulation: model_io::SimulationDoc,
    pub unknown_keys: &'static str,
    pub trace: bool,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub model: String,
    pub parameters: Parameters,
    pub tool_version: String,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
    pub exit_code: i32,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub analytic: f64,
    pub simulated: f64,
    pub stderr: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub pass: bool,
    pub rows: Vec<ComparisonRow>,
    /// Structural checks (normalization, conservation) that failed.
    pub invariant_failures: Vec<String>,
}

#[derive(Debug, Serialize)]
struct SimulationOutput<'a> {
    transient: &'a EstimateSet,
    stationary: &'a EstimateSet,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invalid(d) => Failure {
                code: EXIT_VALIDATION,
                message: format!("validation failed:\n{}", render_diagnostics(&d)),
            },
            Error::Lookup(m) => Failure {
                code: EXIT_VALIDATION,
                message: m,
            },
            other => Failure {
                code: EXIT_NUMERICAL,
                message: other.to_string(),
            },
        }
    }
}

/// Collects artifacts in the output directory and writes the manifest last.
struct Outputs {
    dir: Option<PathBuf>,
    written: Vec<String>,
}

impl Outputs {
    fn open(dir: Option<&Path>) -> Result<Self, Failure> {
        if let Some(d) = dir {
            fs::create_dir_all(d).map_err(|e| Failure::io(d, e))?;
            let manifest = d.join("manifest.json");
            if manifest.exists() {
                fs::remove_file(&manifest).map_err(|e| Failure::io(&manifest, e))?;
            }
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        if let Some(d) = &self.dir {
            let path = d.join(name);
            fs::write(&path, contents).map_err(|e| Failure::io(&path, e))?;
            self.written.push(name.to_string());
        }
        Ok(())
    }
}

fn load(flags: &Flags) -> Result<(ModelSpec, String), Failure> {
    let mode = if flags.lenient { UnknownKeys::Warn } else { UnknownKeys::Reject };
    let (text, label) = match (&flags.model, &flags.canonical) {
        (Some(p), _) => (
            fs::read_to_string(p).map_err(|e| Failure::io(p, e))?,
            p.display().to_string(),
        ),
        (None, Some(name)) => (model_io::canonical_text(name)?.to_string(), format!("canonical:{name}")),
        (None, None) => {
            return Err(Failure {
                code: EXIT_VALIDATION,
                message: "either --model or --canonical is required".into(),
            })
        }
    };
    let mut spec = model_io::parse_model_with(&text, mode)?;
    for w in &spec.warnings {
        eprintln!("warning: {w}");
    }
    let a = &mut spec.doc.analysis;
    if let Some(h) = flags.grid_step {
        a.grid_step = h;
    }
    if let Some(t) = flags.horizon {
        a.horizon = t;
    }
    if let Some(t) = &flags.t_points {
        a.t_points = t.clone();
    }
    if let Some(z) = &flags.z_points {
        a.z_points = z.clone();
    }
    if let Some(n) = flags.cutoff {
        a.cutoff = n;
    }
    let s = &mut spec.doc.simulation;
    if let Some(r) = flags.replications {
        s.replications = r;
    }
    if let Some(seed) = flags.seed {
        s.seed = seed;
    }
    Ok((spec.revalidate()?, label))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Diagnostics go to stderr, tables to stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(command: &Command) -> Result<i32, Failure> {
    let started = unix_now();
    let clock = Instant::now();
    let (name, flags) = match command {
        Command::Analyze(f) => ("analyze", f),
        Command::Simulate(f) => ("simulate", f),
        Command::Compare(f) => ("compare", f),
        Command::ExportModel(f) => ("export-model", f),
    };
    let (spec, label) = load(flags)?;
    let mut out = Outputs::open(flags.out.as_deref())?;
    let mut stdout = String::new();
    let code = match command {
        Command::Analyze(_) => {
            let report = metrics::analyze(&spec.model, &spec.analysis())?;
            write_report(&report, &mut out)?;
            stdout.push_str(&analysis_table(&report));
            EXIT_OK
        }
        Command::Simulate(f) => {
            let (tr, st) = simulate(&spec, f.trace)?;
            write_estimates(&tr, &st, &mut out)?;
            stdout.push_str(&estimate_table(&tr));
            stdout.push_str(&estimate_table(&st));
            EXIT_OK
        }
        Command::Compare(f) => {
            let mut cfg = spec.analysis();
            cfg.enforce_tolerance = false;
            let report = metrics::analyze(&spec.model, &cfg)?;
            let (tr, st) = simulate(&spec, f.trace)?;
            let cmp = compare(&report, &tr, &st);
            write_report(&report, &mut out)?;
            write_estimates(&tr, &st, &mut out)?;
            out.write("comparison.json", &to_json(&cmp))?;
            out.write("comparison.csv", &comparison_csv(&cmp))?;
            stdout.push_str(&comparison_table(&cmp));
            if cmp.pass {
                EXIT_OK
            } else {
                for row in cmp.rows.iter().filter(|r| !r.pass) {
                    eprintln!("FAIL {}: z = {:.3}", row.metric, row.z);
                }
                for f in &cmp.invariant_failures {
                    eprintln!("FAIL invariant: {f}");
                }
                EXIT_COMPARE_FAIL
            }
        }
        Command::ExportModel(_) => {
            let text = spec.to_json();
            out.write("model.json", &text)?;
            if out.dir.is_none() {
                stdout.push_str(&text);
            }
            EXIT_OK
        }
    };
    print!("{stdout}");
    if let Some(dir) = out.dir.clone() {
        let manifest = RunManifest {
            command: name.to_string(),
            model: label,
            parameters: Parameters {
                analysis: spec.doc.analysis.clone(),
                simulation: spec.doc.simulation.clone(),
                unknown_keys: if flags.lenient { "warn" } else { "reject" },
                trace: flags.trace,
            },
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: started,
            wall_clock_seconds: clock.elapsed().as_secs_f64(),
            exit_code: code,
            outputs: out.written.clone(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, to_json(&manifest)).map_err(|e| Failure::io(&path, e))?;
    }
    Ok(code)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn simulate(spec: &ModelSpec, trace: bool) -> Result<(EstimateSet, EstimateSet), Failure> {
    let mut cfg = spec.simulation();
    cfg.trace = trace;
    let tr = simulator::simulate_transient(&spec.model, &cfg)?;
    cfg.trace = false;
    let st = simulator::simulate_stationary(&spec.model, &cfg)?;
    Ok((tr, st))
}

fn write_report(report: &MetricsReport, out: &mut Outputs) -> Result<(), Failure> {
    out.write("report.json", &report.to_json())?;
    for (name, csv) in report.curve_csvs() {
        out.write(&name, &csv)?;
    }
    Ok(())
}

/// Splits `name@t=x` keys into per-metric `t,value,stderr` CSV files.
fn estimate_csvs(set: &EstimateSet) -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = Vec::new();
    for e in &set.estimates {
        let Some((metric, t)) = e.key.split_once("@t=") else { continue };
        let name = format!("sim_{}.csv", metric.replace(['.', '='], "_"));
        let line = format!("{t},{},{}\n", e.mean, e.stderr);
        match files.iter_mut().find(|(n, _)| *n == name) {
            Some((_, body)) => body.push_str(&line),
            None => files.push((name, format!("t,value,stderr\n{line}"))),
        }
    }
    files
}

fn write_estimates(tr: &EstimateSet, st: &EstimateSet, out: &mut Outputs) -> Result<(), Failure> {
    out.write(
        "estimates.json",
        &to_json(&SimulationOutput {
            transient: tr,
            stationary: st,
        }),
    )?;
    for (name, csv) in estimate_csvs(tr) {
        out.write(&name, &csv)?;
    }
    if !tr.trace.is_empty() {
        out.write("trace.csv", &tr.trace_csv())?;
    }
    Ok(())
}

/// Matches every analytic metric with a simulated estimate of the same key.
pub fn compare(report: &MetricsReport, transient: &EstimateSet, stationary: &EstimateSet) -> Comparison {
    let mut rows = Vec::new();
    for (key, analytic) in report.metric_values() {
        let Some(est) = transient.get(&key).or_else(|| stationary.get(&key)) else { continue };
        let diff = analytic - est.mean;
        let z = if est.stderr > 0.0 {
            diff / est.stderr
        } else if diff.abs() <= 1e-9 * analytic.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        };
        rows.push(ComparisonRow {
            metric: key,
            analytic,
            simulated: est.mean,
            stderr: est.stderr,
            z,
            pass: z.abs() <= Z_LIMIT,
        });
    }
    let mut invariant_failures = Vec::new();
    let d = &report.diagnostics;
    let tol = 1e-6;
    if d.normalization_transient > tol {
        invariant_failures.push(format!("transient normalization off by {:.3e}", d.normalization_transient));
    }
    if d.normalization_stationary > tol {
        invariant_failures.push(format!("stationary normalization off by {:.3e}", d.normalization_stationary));
    }
    for set in [transient, stationary] {
        if set.conservation_checks == 0 {
            invariant_failures.push(format!("{} run performed no conservation checks", set.mode));
        }
    }
    for tm in &report.per_type {
        if tm.variance.at.iter().chain([&tm.variance.limit]).any(|v| *v < 0.0) {
            invariant_failures.push(format!("negative variance for type {}", tm.customer_type));
        }
    }
    let pass = !rows.is_empty() && rows.iter().all(|r| r.pass) && invariant_failures.is_empty();
    Comparison {
        pass,
        rows,
        invariant_failures,
    }
}

fn comparison_csv(cmp: &Comparison) -> String {
    let mut s = String::from("metric,analytic,simulated,stderr,z,pass\n");
    for r in &cmp.rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.metric, r.analytic, r.simulated, r.stderr, r.z, r.pass);
    }
    s
}

pub fn analysis_table(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<40} {:>14}", "metric", "value");
    for (k, v) in report.metric_values() {
        let _ = writeln!(s, "{k:<40} {v:>14.8}");
    }
    for (k, v) in [
        ("L_q", report.totals.l_q),
        ("L_los", report.totals.l_los),
        ("max ODE error", report.diagnostics.max_ode_error),
    ] {
        let _ = writeln!(s, "{k:<40} {v:>14.8}");
    }
    s
}

pub fn estimate_table(set: &EstimateSet) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} simulation: {} replications, seed {}, {} cycles",
        set.mode, set.replications, set.seed, set.cycles
    );
    let _ = writeln!(s, "{:<40} {:>14} {:>12}", "metric", "estimate", "stderr");
    for e in &set.estimates {
        let _ = writeln!(s, "{:<40} {:>14.8} {:>12.3e}", e.key, e.mean, e.stderr);
    }
    s
}

pub fn comparison_table(cmp: &Comparison) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<40} {:>14} {:>14} {:>12} {:>8}  status",
        "metric", "analytic", "simulated", "stderr", "z"
    );
    for r in &cmp.rows {
        let _ = writeln!(
            s,
            "{:<40} {:>14.8} {:>14.8} {:>12.3e} {:>8.3}  {}",
            r.metric,
            r.analytic,
            r.simulated,
            r.stderr,
            r.z,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    for f in &cmp.invariant_failures {
        let _ = writeln!(s, "invariant failed: {f}");
    }
    let _ = writeln!(s, "overall: {}", if cmp.pass { "PASS" } else { "FAIL" });
    s
}
