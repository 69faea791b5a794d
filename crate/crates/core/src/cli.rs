//! Command-line front end.
//!
//! [`render`] turns a validated configuration into in-memory output files so
//! that the binary and the determinism check share one code path. Exit codes:
//! 0 success, 1 verification failed, 2 invalid configuration or usage,
//! 3 run or I/O failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::acceptance::{self, AcceptanceOptions};
use crate::filters::Algorithm;
use crate::model::{derive_context, generate_scenario, InputDist, Scenario, ScenarioParams, ScenarioRecord};
use crate::montecarlo::{
    self, run_ensemble_with, stderr_db, sweep, theory_for, to_db, write_curves_csv, write_sweep_csv, Execution,
    RunConfig, SweepAxis,
};
use crate::numerics::Mat;
use crate::theory::{self, PredictionReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Mismatch level treated as exact constraint satisfaction.
pub const CONSTRAINT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Run(#[from] montecarlo::MonteCarloError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// `scenario` section: either generated from a seed or given explicitly
/// through `h`, `C`, `f` and `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub taps: Option<usize>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub n_constraints: Option<usize>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub input_dist: InputDist,
    #[serde(default)]
    pub consistent_constraints: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Mat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<f64>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Mat>,
}

fn default_lambda() -> f64 {
    0.995
}

fn default_mu() -> f64 {
    1e3
}

fn default_eta() -> f64 {
    0.1
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            seed: None,
            taps: None,
            n_constraints: None,
            lambda: default_lambda(),
            mu: default_mu(),
            eta: default_eta(),
            input_dist: InputDist::Gaussian,
            consistent_constraints: false,
            h: None,
            c: None,
            f: None,
            r: None,
        }
    }
}

pub const DEFAULT_SCENARIO_SEED: u64 = 1;

impl ScenarioSection {
    fn is_explicit(&self) -> bool {
        self.h.is_some() || self.c.is_some() || self.f.is_some() || self.r.is_some()
    }

    pub fn build(&self, seed_override: Option<u64>) -> Result<Scenario, CliError> {
        let seed = seed_override.or(self.seed);
        if self.is_explicit() {
            let missing: Vec<&str> = [
                ("h", self.h.is_none()),
                ("C", self.c.is_none()),
                ("f", self.f.is_none()),
                ("R", self.r.is_none()),
            ]
            .iter()
            .filter(|(_, m)| *m)
            .map(|(k, _)| *k)
            .collect();
            if !missing.is_empty() {
                return Err(config_err(format!("scenario: explicit scenario is missing {}", missing.join(", "))));
            }
            if self.consistent_constraints {
                return Err(config_err("scenario: consistent_constraints applies to generated scenarios only"));
            }
            let record = ScenarioRecord {
                seed,
                h: self.h.clone().unwrap_or_default(),
                c: self.c.clone().unwrap_or_else(|| Mat::zeros(0, 0)),
                f: self.f.clone().unwrap_or_default(),
                r: self.r.clone().unwrap_or_else(|| Mat::zeros(0, 0)),
                eta: self.eta,
                lambda: self.lambda,
                mu: self.mu,
                input_dist: self.input_dist,
            };
            let s = Scenario::try_from(record).map_err(|e| config_err(format!("scenario: {e}")))?;
            if self.taps.is_some_and(|l| l != s.taps()) {
                return Err(config_err(format!("scenario: L does not match the length of h ({})", s.taps())));
            }
            if self.n_constraints.is_some_and(|k| k != s.n_constraints()) {
                return Err(config_err(format!("scenario: K does not match the columns of C ({})", s.n_constraints())));
            }
            return Ok(s);
        }
        let taps = self.taps.unwrap_or(7);
        let params = ScenarioParams {
            seed: seed.unwrap_or(DEFAULT_SCENARIO_SEED),
            taps,
            n_constraints: self.n_constraints.unwrap_or(taps.saturating_sub(1) / 2),
            lambda: self.lambda,
            mu: self.mu,
            eta: self.eta,
            input_dist: self.input_dist,
            consistent_constraints: self.consistent_constraints,
        };
        generate_scenario(&params).map_err(|e| config_err(format!("scenario: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_axis")]
    pub axis: SweepAxis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
}

fn default_axis() -> SweepAxis {
    SweepAxis::Mu
}

impl SweepSection {
    pub fn values(&self) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(|| self.axis.default_grid())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_true")]
    pub emit_curves: bool,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: default_directory(), emit_curves: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config_err(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks the scenario, run lengths and sweep grid without running.
    pub fn validate(&self, seed_override: Option<u64>) -> Result<Scenario, CliError> {
        let scenario = self.scenario.build(seed_override)?;
        self.run.resolve(scenario.lambda()).map_err(|e| config_err(format!("run: {e}")))?;
        if let Some(sw) = &self.sweep {
            let values = sw.values();
            if values.is_empty() {
                return Err(config_err("sweep: grid is empty"));
            }
            for &v in &values {
                let s = sw.axis.apply(&scenario, v).map_err(|e| config_err(format!("sweep: {e}")))?;
                self.run.resolve(s.lambda()).map_err(|e| config_err(format!("run: {e}")))?;
            }
        }
        Ok(scenario)
    }

    /// Small configuration used by the determinism check.
    pub fn determinism_probe() -> Self {
        Self {
            run: RunConfig {
                n_trials: 40,
                n_iters: Some(600),
                warmup: Some(300),
                steady_window: 300,
                master_seed: 5,
                ..RunConfig::default()
            },
            sweep: Some(SweepSection { axis: SweepAxis::Mu, grid: Some(vec![1.0, 100.0]) }),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Predict,
    Simulate,
    Sweep,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Predict => "predict",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub execution: Execution,
    pub seed_override: Option<u64>,
    pub tolerance_scale: f64,
    pub only: Option<Vec<u8>>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { execution: Execution::Parallel, seed_override: None, tolerance_scale: 1.0, only: None }
    }
}

/// Output of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    /// File names relative to the output directory, with contents.
    pub files: Vec<(String, Vec<u8>)>,
    pub stdout: String,
    pub success: bool,
}

/// A dB value; serializes as the string `-inf` at the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Db(pub f64);

impl Db {
    pub fn of(linear: f64) -> Self {
        Db(to_db(linear))
    }
}

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

fn db_delta(a: f64, b: f64) -> Option<f64> {
    let d = to_db(a) - to_db(b);
    d.is_finite().then_some(d)
}

#[derive(Debug, Serialize)]
struct PredictOutput<'a> {
    scenario_seed: Option<u64>,
    taps: usize,
    n_constraints: usize,
    lambda: f64,
    mu: f64,
    eta: f64,
    msd_rcls_db: Db,
    msm_rcls_db: Db,
    msd_cls_db: Db,
    msm_cls_db: Db,
    stable_cls: bool,
    #[serde(flatten)]
    report: &'a PredictionReport,
}

fn predict_csv(scenario: &Scenario, rep: &PredictionReport) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Run(e.into());
    w.write_record([
        "seed",
        "lambda",
        "mu",
        "eta",
        "msd_rcls",
        "msd_rcls_db",
        "msm_rcls",
        "msm_rcls_db",
        "msd_cls",
        "msd_cls_db",
        "msm_cls",
        "msm_cls_db",
        "stability_lhs_rcls",
        "stable_rcls",
        "rho_s",
        "lambda_lower_bound_cls",
        "approximation_warning",
    ])
    .map_err(csv_err)?;
    w.write_record([
        scenario.seed().map(|s| s.to_string()).unwrap_or_default(),
        scenario.lambda().to_string(),
        scenario.mu().to_string(),
        scenario.eta().to_string(),
        rep.msd_rcls.to_string(),
        montecarlo::db_field(rep.msd_rcls),
        rep.msm_rcls.to_string(),
        montecarlo::db_field(rep.msm_rcls),
        rep.msd_cls.to_string(),
        montecarlo::db_field(rep.msd_cls),
        rep.msm_cls.to_string(),
        montecarlo::db_field(rep.msm_cls),
        rep.stability_lhs_rcls.to_string(),
        rep.stable_rcls.to_string(),
        rep.rho_s.to_string(),
        rep.lambda_lower_bound_cls.to_string(),
        rep.approximation_warning.to_string(),
    ])
    .map_err(csv_err)?;
    w.into_inner().map_err(|e| CliError::Run(csv::Error::from(e.into_error()).into()))
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    algorithm: Algorithm,
    scenario_seed: Option<u64>,
    master_seed: u64,
    n_trials: usize,
    n_iters: usize,
    warmup: usize,
    steady_window: usize,
    lambda: f64,
    mu: f64,
    eta: f64,
    steady_msd: f64,
    steady_msd_db: Db,
    stderr_msd: f64,
    stderr_msd_db: f64,
    steady_msm: f64,
    steady_msm_db: Db,
    stderr_msm: f64,
    stderr_msm_db: f64,
    theory_msd: f64,
    theory_msd_db: Db,
    theory_msm: f64,
    theory_msm_db: Db,
    delta_msd_db: Option<f64>,
    delta_msm_db: Option<f64>,
    max_mismatch_inf: f64,
    constraint_satisfied: bool,
    mean_dev: Vec<f64>,
    mean_mis: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_updates: Option<f64>,
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn fmt_db(x: Option<f64>) -> String {
    x.map(|v| format!("{v:+.3} dB")).unwrap_or_else(|| "n/a".into())
}

/// Runs `command` and collects its outputs without touching the filesystem.
pub fn render(command: Command, config: &ConfigFile, opts: &RenderOptions) -> Result<Rendered, CliError> {
    let scenario = config.validate(opts.seed_override)?;
    let mut run = config.run.clone();
    if let Some(seed) = opts.seed_override {
        run.master_seed = seed;
    }
    let mut stdout = String::new();
    let mut files = Vec::new();
    let mut success = true;
    match command {
        Command::Predict => {
            let rep = theory::predict(&scenario).map_err(config_err)?;
            let out = PredictOutput {
                scenario_seed: scenario.seed(),
                taps: scenario.taps(),
                n_constraints: scenario.n_constraints(),
                lambda: scenario.lambda(),
                mu: scenario.mu(),
                eta: scenario.eta(),
                msd_rcls_db: Db::of(rep.msd_rcls),
                msm_rcls_db: Db::of(rep.msm_rcls),
                msd_cls_db: Db::of(rep.msd_cls),
                msm_cls_db: Db::of(rep.msm_cls),
                stable_cls: scenario.lambda() > rep.lambda_lower_bound_cls,
                report: &rep,
            };
            let json = to_json_bytes(&out)?;
            stdout.push_str(std::str::from_utf8(&json).expect("json is utf-8"));
            files.push(("prediction.json".to_string(), json));
            files.push(("prediction.csv".to_string(), predict_csv(&scenario, &rep)?));
        }
        Command::Simulate => {
            let ctx = derive_context(&scenario).map_err(config_err)?;
            let len = run.resolve(scenario.lambda())?;
            let curves = run_ensemble_with(&scenario, &ctx, &run, opts.execution)?;
            let (theory_msd, theory_msm) = theory_for(&ctx, &scenario, run.algorithm);
            let summary = SimulateSummary {
                algorithm: run.algorithm,
                scenario_seed: scenario.seed(),
                master_seed: run.master_seed,
                n_trials: run.n_trials,
                n_iters: len.n_iters,
                warmup: len.warmup,
                steady_window: len.steady_window,
                lambda: scenario.lambda(),
                mu: scenario.mu(),
                eta: scenario.eta(),
                steady_msd: curves.steady_msd,
                steady_msd_db: Db::of(curves.steady_msd),
                stderr_msd: curves.stderr_msd,
                stderr_msd_db: stderr_db(curves.steady_msd, curves.stderr_msd),
                steady_msm: curves.steady_msm,
                steady_msm_db: Db::of(curves.steady_msm),
                stderr_msm: curves.stderr_msm,
                stderr_msm_db: stderr_db(curves.steady_msm, curves.stderr_msm),
                theory_msd,
                theory_msd_db: Db::of(theory_msd),
                theory_msm,
                theory_msm_db: Db::of(theory_msm),
                delta_msd_db: db_delta(curves.steady_msd, theory_msd),
                delta_msm_db: db_delta(curves.steady_msm, theory_msm),
                max_mismatch_inf: curves.max_mismatch_inf,
                constraint_satisfied: curves.max_mismatch_inf <= CONSTRAINT_TOL,
                mean_dev: curves.mean_dev.clone(),
                mean_mis: curves.mean_mis.clone(),
                mean_updates: curves.mean_updates,
            };
            writeln!(
                stdout,
                "{}: MSD {} dB (theory {} dB, delta {}), MSM {} dB (theory {} dB, delta {})",
                run.algorithm.name(),
                montecarlo::db_field(curves.steady_msd),
                montecarlo::db_field(theory_msd),
                fmt_db(summary.delta_msd_db),
                montecarlo::db_field(curves.steady_msm),
                montecarlo::db_field(theory_msm),
                fmt_db(summary.delta_msm_db),
            )
            .expect("write to string");
            files.push(("summary.json".to_string(), to_json_bytes(&summary)?));
            if config.output.emit_curves {
                let mut buf = Vec::new();
                write_curves_csv(&mut buf, &curves)?;
                files.push(("curves.csv".to_string(), buf));
            }
        }
        Command::Sweep => {
            let section = config.sweep.clone().ok_or_else(|| config_err("sweep: section missing"))?;
            let rows = sweep(&scenario, &run, section.axis, &section.values(), opts.execution)?;
            let mut buf = Vec::new();
            write_sweep_csv(&mut buf, &rows)?;
            stdout.push_str(std::str::from_utf8(&buf).expect("csv is utf-8"));
            files.push((format!("sweep_{}.csv", section.axis.name()), buf));
        }
        Command::Verify => {
            let n_trials = config.run.n_trials;
            let acc = AcceptanceOptions {
                scenario_seed: opts.seed_override.or(config.scenario.seed).unwrap_or(DEFAULT_SCENARIO_SEED),
                master_seed: run.master_seed,
                n_trials,
                large_trials: (n_trials / 10).max(1),
                tolerance_scale: opts.tolerance_scale,
                execution: opts.execution,
            };
            let report = acceptance::run_all(acc, opts.only.as_deref());
            for c in &report.criteria {
                writeln!(stdout, "{}", c.summary()).expect("write to string");
            }
            success = report.pass;
            files.push(("verify.json".to_string(), to_json_bytes(&report)?));
        }
    }
    Ok(Rendered { files, stdout, success })
}

#[derive(Debug, Parser)]
#[command(name = "clse", version, about = "Constrained RLS estimators, steady-state theory and Monte Carlo checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Evaluate the closed-form predictions.
    Predict(CommonArgs),
    /// Run one ensemble and compare it with theory.
    Simulate(CommonArgs),
    /// Run ensembles over the configured grid.
    Sweep(CommonArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides output.directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run trials on the calling thread only.
    #[arg(long)]
    pub serial: bool,
    /// Overrides scenario.seed and run.master_seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated criterion ids to run.
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<u8>>,
    #[arg(long, hide = true, default_value_t = 1.0)]
    pub tolerance_scale: f64,
}

fn write_outputs(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.to_path_buf(), source: e })?;
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io { path, source: e })?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let (command, common, only, tolerance_scale) = match cli.command {
        Sub::Predict(a) => (Command::Predict, a, None, 1.0),
        Sub::Simulate(a) => (Command::Simulate, a, None, 1.0),
        Sub::Sweep(a) => (Command::Sweep, a, None, 1.0),
        Sub::Verify(v) => (Command::Verify, v.common, v.only, v.tolerance_scale),
    };
    if let Some(ids) = &only {
        if let Some(bad) = ids.iter().find(|id| !acceptance::CRITERIA.contains(id)) {
            return Err(config_err(format!("--only: no criterion {bad}")));
        }
    }
    if !(tolerance_scale >= 0.0 && tolerance_scale.is_finite()) {
        return Err(config_err("--tolerance-scale must be finite and >= 0"));
    }
    let config = match &common.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let opts = RenderOptions {
        execution: if common.serial { Execution::Serial } else { Execution::Parallel },
        seed_override: common.seed,
        tolerance_scale,
        only,
    };
    let rendered = render(command, &config, &opts)?;
    let dir = common.out.unwrap_or_else(|| config.output.directory.clone());
    write_outputs(&dir, &rendered.files)?;
    print!("{}", rendered.stdout);
    Ok(rendered.success)
}

/// Entry point of the `clse` binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_VERIFY_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_sections() {
        let c = ConfigFile::parse("{}").unwrap();
        assert_eq!(c, ConfigFile::default());
        let s = c.validate(None).unwrap();
        assert_eq!((s.taps(), s.n_constraints(), s.seed()), (7, 3, Some(1)));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ConfigFile::parse(r#"{"scenario": {"lamda": 0.9}}"#).unwrap_err().to_string();
        assert!(err.contains("lamda"), "{err}");
        let err = ConfigFile::parse(r#"{"run": {"dcd": {"H": 2, "M": 15, "N": 8}}}"#).unwrap_err().to_string();
        assert!(err.contains("`N`"), "{err}");
        let err = ConfigFile::parse(r#"{"plot": true}"#).unwrap_err().to_string();
        assert!(err.contains("plot"), "{err}");
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = ConfigFile::parse("{\n  \"run\": {\n    \"n_trials\": ,\n  }\n}").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn roundtrip_is_identity() {
        let text = r#"{
            "scenario": {"seed": 4, "L": 9, "K": 4, "lambda": 0.99, "mu": 100.0, "eta": 0.05,
                         "input_dist": "uniform", "consistent_constraints": true},
            "run": {"n_trials": 50, "n_iters": 900, "warmup": 400, "steady_window": 500,
                    "master_seed": 3, "algorithm": "dcd_rcls", "dcd": {"H": 4.0, "M": 12, "N_u": 16}},
            "sweep": {"axis": "eta", "grid": [0.01, 0.1]},
            "output": {"directory": "res", "emit_curves": false}
        }"#;
        let first = ConfigFile::parse(text).unwrap();
        first.validate(None).unwrap();
        let second = ConfigFile::parse(&first.to_json()).unwrap();
        assert_eq!(first, second);
        assert_eq!(second.validate(None).unwrap(), first.validate(None).unwrap());
    }

    #[test]
    fn explicit_scenario_roundtrip() {
        let generated = ConfigFile::default().validate(None).unwrap();
        let section = ScenarioSection {
            h: Some(generated.h().to_vec()),
            c: Some(generated.c().clone()),
            f: Some(generated.f().to_vec()),
            r: Some(generated.r().as_mat().clone()),
            ..ScenarioSection::default()
        };
        let config = ConfigFile { scenario: section, ..ConfigFile::default() };
        let back = ConfigFile::parse(&config.to_json()).unwrap();
        let s = back.validate(Some(1)).unwrap();
        assert_eq!(s, generated);

        let mut partial = config.clone();
        partial.scenario.r = None;
        let err = partial.validate(None).unwrap_err().to_string();
        assert!(err.contains("missing R"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected_before_running() {
        let c = ConfigFile::parse(r#"{"scenario": {"lambda": 1.5}}"#).unwrap();
        assert!(matches!(c.validate(None), Err(CliError::Config(_))));
        let c = ConfigFile::parse(r#"{"run": {"n_iters": 100, "warmup": 50, "steady_window": 100}}"#).unwrap();
        assert!(c.validate(None).is_err());
        let c = ConfigFile::parse(r#"{"sweep": {"axis": "lambda", "grid": [0.9, 1.0]}}"#).unwrap();
        assert!(c.validate(None).is_err());
        let c = ConfigFile::parse(r#"{"sweep": {"grid": []}}"#).unwrap();
        assert!(c.validate(None).is_err());
        let c = ConfigFile::parse(r#"{"scenario": {"L": 7, "K": 7}}"#).unwrap();
        assert!(c.validate(None).is_err());
    }

    #[test]
    fn predict_reference_is_stable() {
        let r = render(Command::Predict, &ConfigFile::default(), &RenderOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&r.files[0].1).unwrap();
        assert_eq!(v["stable_rcls"], serde_json::Value::Bool(true));
        assert_eq!(v["msm_cls_db"], "-inf");
        let csv = String::from_utf8(r.files[1].1.clone()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }

    #[test]
    fn predict_at_zero_weight_reports_raw_mismatch() {
        let c = ConfigFile::parse(r#"{"scenario": {"mu": 0.0}}"#).unwrap();
        let s = c.validate(None).unwrap();
        let r = render(Command::Predict, &c, &RenderOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&r.files[0].1).unwrap();
        let got: Vec<f64> = serde_json::from_value(v["mean_mismatch_rcls"].clone()).unwrap();
        let expected = s.mismatch(s.h());
        assert!(got.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn seed_override_reaches_scenario_and_run() {
        let c = ConfigFile::determinism_probe();
        let opts = RenderOptions { seed_override: Some(9), execution: Execution::Serial, ..Default::default() };
        let r = render(Command::Simulate, &c, &opts).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&r.files[0].1).unwrap();
        assert_eq!(v["scenario_seed"], 9);
        assert_eq!(v["master_seed"], 9);
    }

    #[test]
    fn cls_simulation_reports_exact_constraints() {
        let mut c = ConfigFile::determinism_probe();
        c.run.algorithm = Algorithm::Cls;
        let r = render(Command::Simulate, &c, &RenderOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&r.files[0].1).unwrap();
        assert_eq!(v["steady_msm_db"], "-inf");
        assert_eq!(v["constraint_satisfied"], true);
        assert!(v["delta_msm_db"].is_null());
        assert!(r.stdout.contains("cls: MSD"));
    }

    #[test]
    fn db_serialization() {
        assert_eq!(serde_json::to_string(&Db::of(0.0)).unwrap(), "\"-inf\"");
        assert_eq!(serde_json::to_string(&Db::of(10.0)).unwrap(), "10.0");
    }
}
