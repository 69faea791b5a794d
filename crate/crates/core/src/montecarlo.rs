//! Seeded ensemble experiments.
//!
//! Trials are grouped into fixed chunks of [`CHUNK_TRIALS`]. Each chunk is
//! accumulated serially and chunks are combined in index order, so the
//! parallel and serial paths produce bit-identical results.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::{build_estimator, Algorithm, DcdParams, FilterError, DEFAULT_DELTA};
use crate::model::{derive_context, DataStream, DerivedContext, ModelError, Scenario};
use crate::numerics::{self, LinalgError};
use crate::theory;

pub const DEFAULT_TRIALS: usize = 2000;
pub const DEFAULT_STEADY_WINDOW: usize = 1000;
pub const CHUNK_TRIALS: usize = 32;

/// Linear values at or below this are reported as `-inf` dB.
pub const DB_FLOOR: f64 = 1e-18;

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("trial {trial} failed at iteration {iteration}: {source}")]
    Trial {
        trial: usize,
        iteration: usize,
        #[source]
        source: FilterError,
    },
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Whether trials may run on the rayon pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Serial,
}

/// Ensemble settings. `n_iters` and `warmup` default per forgetting factor
/// (see [`RunConfig::resolve`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    #[serde(default = "default_window")]
    pub steady_window: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dcd: Option<DcdParams>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_window() -> usize {
    DEFAULT_STEADY_WINDOW
}

fn default_algorithm() -> Algorithm {
    Algorithm::Rcls
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_trials: DEFAULT_TRIALS,
            n_iters: None,
            warmup: None,
            steady_window: DEFAULT_STEADY_WINDOW,
            master_seed: 0,
            algorithm: Algorithm::Rcls,
            dcd: None,
            delta: DEFAULT_DELTA,
        }
    }
}

/// Concrete run lengths for one forgetting factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLength {
    pub n_iters: usize,
    pub warmup: usize,
    pub steady_window: usize,
}

/// `⌈10/(1−λ)⌉`.
pub fn default_warmup(lambda: f64) -> usize {
    (10.0 / (1.0 - lambda) - 1e-9).ceil() as usize
}

impl RunConfig {
    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    pub fn dcd_params(&self) -> DcdParams {
        self.dcd.unwrap_or_default()
    }

    /// Fills in the λ-dependent defaults and checks
    /// `warmup + steady_window ≤ n_iters`.
    pub fn resolve(&self, lambda: f64) -> Result<RunLength, MonteCarloError> {
        let bad = |m: String| Err(MonteCarloError::InvalidConfig(m));
        if self.n_trials == 0 {
            return bad("n_trials must be positive".into());
        }
        if self.steady_window == 0 {
            return bad("steady_window must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if let Some(dcd) = &self.dcd {
            dcd.validate()?;
        }
        let warmup = match (self.warmup, self.n_iters) {
            (Some(w), _) => w,
            (None, Some(n)) => n.saturating_sub(self.steady_window),
            (None, None) => default_warmup(lambda),
        };
        let n_iters = self.n_iters.unwrap_or(warmup + self.steady_window);
        if warmup == 0 {
            return bad("warmup must be positive".into());
        }
        if warmup + self.steady_window > n_iters {
            return bad(format!(
                "warmup ({warmup}) + steady_window ({}) exceeds n_iters ({n_iters})",
                self.steady_window
            ));
        }
        Ok(RunLength { n_iters, warmup, steady_window: self.steady_window })
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Data-stream seed of trial `index`: SplitMix64 applied to
/// `mix64(master) + (index + 1)·φ64`, φ64 the 64-bit golden-ratio constant.
pub fn trial_seed(master_seed: u64, index: usize) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    mix64(mix64(master_seed).wrapping_add((index as u64).wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Everything recorded for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutput {
    /// First recorded iteration; earlier steps had no solvable system.
    pub first_iter: usize,
    /// `‖dₙ‖²` for `n ∈ first_iter..n_iters`.
    pub msd: Vec<f64>,
    /// `‖mₙ‖²` for the same iterations.
    pub msm: Vec<f64>,
    pub final_deviation: Vec<f64>,
    pub final_mismatch: Vec<f64>,
    /// Averages of `‖dₙ‖²`, `‖mₙ‖²`, `dₙ` and `mₙ` over the steady window.
    pub window_msd: f64,
    pub window_msm: f64,
    pub window_deviation: Vec<f64>,
    pub window_mismatch: Vec<f64>,
    /// Largest `‖mₙ‖∞` over recorded steps.
    pub max_mismatch_inf: f64,
    /// Mean DCD updates per step, for DCD runs.
    pub mean_updates: Option<f64>,
}

fn trial_error(trial: usize, iteration: usize, source: FilterError) -> MonteCarloError {
    MonteCarloError::Trial { trial, iteration, source }
}

fn is_unsolvable(err: &FilterError) -> bool {
    matches!(err, FilterError::Linalg(LinalgError::NotPositiveDefinite { .. }))
}

/// Runs one trial. The reference for `dₙ` is the constrained optimum `g`.
pub fn run_trial(
    scenario: &Scenario,
    ctx: &DerivedContext,
    config: &RunConfig,
    len: RunLength,
    index: usize,
) -> Result<TrialOutput, MonteCarloError> {
    let taps = scenario.taps();
    let k = scenario.n_constraints();
    let mut est = build_estimator(scenario, config.algorithm, config.delta, config.dcd_params())?;
    let mut stream = DataStream::new(scenario, trial_seed(config.master_seed, index));
    let mut x = vec![0.0; taps];
    let mut d = vec![0.0; taps];
    let mut m = vec![0.0; k];
    let window_start = len.n_iters - len.steady_window;

    let mut out = TrialOutput {
        first_iter: 0,
        msd: Vec::with_capacity(len.n_iters),
        msm: Vec::with_capacity(len.n_iters),
        final_deviation: vec![0.0; taps],
        final_mismatch: vec![0.0; k],
        window_msd: 0.0,
        window_msm: 0.0,
        window_deviation: vec![0.0; taps],
        window_mismatch: vec![0.0; k],
        max_mismatch_inf: 0.0,
        mean_updates: None,
    };
    let mut updates = 0usize;
    let mut started = false;
    for n in 0..len.n_iters {
        let (y, _) = stream.next_into(&mut x);
        let w = match est.update(&x, y) {
            Ok(w) => w,
            Err(e) if !started && n < len.warmup && is_unsolvable(&e) => {
                out.first_iter = n + 1;
                continue;
            }
            Err(e) => return Err(trial_error(index, n, e)),
        };
        started = true;
        for i in 0..taps {
            d[i] = w[i] - ctx.g[i];
        }
        scenario.c().tr_matvec_into(w, &mut m);
        for (mi, fi) in m.iter_mut().zip(scenario.f()) {
            *mi -= fi;
        }
        let dn = numerics::norm2_sq(&d);
        let mn = numerics::norm2_sq(&m);
        out.msd.push(dn);
        out.msm.push(mn);
        out.max_mismatch_inf = out.max_mismatch_inf.max(numerics::norm_inf(&m));
        if let Some(u) = est.last_updates_used() {
            updates += u;
        }
        if n >= window_start {
            out.window_msd += dn;
            out.window_msm += mn;
            out.window_deviation.iter_mut().zip(&d).for_each(|(a, v)| *a += v);
            out.window_mismatch.iter_mut().zip(&m).for_each(|(a, v)| *a += v);
        }
    }
    if out.first_iter > window_start {
        return Err(MonteCarloError::InvalidConfig(format!(
            "trial {index}: no solvable step before the steady window"
        )));
    }
    let inv = 1.0 / len.steady_window as f64;
    out.window_msd *= inv;
    out.window_msm *= inv;
    out.window_deviation.iter_mut().for_each(|v| *v *= inv);
    out.window_mismatch.iter_mut().for_each(|v| *v *= inv);
    out.final_deviation = d;
    out.final_mismatch = m;
    if config.algorithm == Algorithm::DcdRcls {
        out.mean_updates = Some(updates as f64 / out.msd.len().max(1) as f64);
    }
    Ok(out)
}

/// Ensemble statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurves {
    pub n_trials: usize,
    pub first_iter: usize,
    /// Ensemble `E‖dₙ‖²` for `n ∈ first_iter..n_iters`.
    pub msd: Vec<f64>,
    /// Ensemble `E‖mₙ‖²`.
    pub msm: Vec<f64>,
    /// Ensemble mean of `dₙ` over the steady window, with per-component
    /// standard errors across trials.
    pub mean_dev: Vec<f64>,
    pub stderr_mean_dev: Vec<f64>,
    pub mean_mis: Vec<f64>,
    pub stderr_mean_mis: Vec<f64>,
    pub steady_msd: f64,
    pub steady_msm: f64,
    pub stderr_msd: f64,
    pub stderr_msm: f64,
    pub max_mismatch_inf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_updates: Option<f64>,
}

/// Per-chunk running sums.
#[derive(Debug, Clone)]
struct Partial {
    first_iter: usize,
    msd: Vec<f64>,
    msm: Vec<f64>,
    max_mismatch_inf: f64,
    windows: Vec<WindowStats>,
}

#[derive(Debug, Clone)]
struct WindowStats {
    msd: f64,
    msm: f64,
    deviation: Vec<f64>,
    mismatch: Vec<f64>,
    updates: Option<f64>,
}

impl Partial {
    fn empty(n_iters: usize) -> Self {
        Self { first_iter: 0, msd: vec![0.0; n_iters], msm: vec![0.0; n_iters], max_mismatch_inf: 0.0, windows: Vec::new() }
    }

    /// Adds one trial whose curves start at `t.first_iter`.
    fn absorb(&mut self, t: TrialOutput) {
        self.first_iter = self.first_iter.max(t.first_iter);
        for (j, (a, b)) in t.msd.iter().zip(&t.msm).enumerate() {
            self.msd[t.first_iter + j] += a;
            self.msm[t.first_iter + j] += b;
        }
        self.max_mismatch_inf = self.max_mismatch_inf.max(t.max_mismatch_inf);
        self.windows.push(WindowStats {
            msd: t.window_msd,
            msm: t.window_msm,
            deviation: t.window_deviation,
            mismatch: t.window_mismatch,
            updates: t.mean_updates,
        });
    }

    fn merge(mut self, other: Partial) -> Self {
        self.first_iter = self.first_iter.max(other.first_iter);
        self.msd.iter_mut().zip(&other.msd).for_each(|(a, b)| *a += b);
        self.msm.iter_mut().zip(&other.msm).for_each(|(a, b)| *a += b);
        self.max_mismatch_inf = self.max_mismatch_inf.max(other.max_mismatch_inf);
        self.windows.extend(other.windows);
        self
    }
}

fn mean_and_stderr(values: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run_chunk(
    scenario: &Scenario,
    ctx: &DerivedContext,
    config: &RunConfig,
    len: RunLength,
    chunk: usize,
) -> Result<Partial, MonteCarloError> {
    let start = chunk * CHUNK_TRIALS;
    let end = (start + CHUNK_TRIALS).min(config.n_trials);
    let mut acc = Partial::empty(len.n_iters);
    for index in start..end {
        acc.absorb(run_trial(scenario, ctx, config, len, index)?);
    }
    Ok(acc)
}

/// Runs `config.n_trials` trials and reduces them in trial-index order.
pub fn run_ensemble(
    scenario: &Scenario,
    config: &RunConfig,
    execution: Execution,
) -> Result<LearningCurves, MonteCarloError> {
    let ctx = derive_context(scenario)?;
    run_ensemble_with(scenario, &ctx, config, execution)
}

pub fn run_ensemble_with(
    scenario: &Scenario,
    ctx: &DerivedContext,
    config: &RunConfig,
    execution: Execution,
) -> Result<LearningCurves, MonteCarloError> {
    let len = config.resolve(scenario.lambda())?;
    let chunks = config.n_trials.div_ceil(CHUNK_TRIALS);
    let partials: Vec<Partial> = match execution {
        Execution::Serial => (0..chunks).map(|c| run_chunk(scenario, ctx, config, len, c)).collect::<Result<_, _>>()?,
        Execution::Parallel => {
            (0..chunks).into_par_iter().map(|c| run_chunk(scenario, ctx, config, len, c)).collect::<Result<_, _>>()?
        }
    };
    // collect() preserves chunk order, so this fold is the serial order
    let total = partials.into_iter().fold(Partial::empty(len.n_iters), Partial::merge);
    Ok(finish(total, config.n_trials, len))
}

fn finish(total: Partial, n_trials: usize, len: RunLength) -> LearningCurves {
    let scale = 1.0 / n_trials as f64;
    let msd: Vec<f64> = total.msd[total.first_iter..].iter().map(|v| v * scale).collect();
    let msm: Vec<f64> = total.msm[total.first_iter..].iter().map(|v| v * scale).collect();
    let window = &msd[msd.len() - len.steady_window..];
    let steady_msd = window.iter().sum::<f64>() / len.steady_window as f64;
    let window = &msm[msm.len() - len.steady_window..];
    let steady_msm = window.iter().sum::<f64>() / len.steady_window as f64;

    let w = &total.windows;
    let (_, stderr_msd) = mean_and_stderr(w.iter().map(|s| s.msd));
    let (_, stderr_msm) = mean_and_stderr(w.iter().map(|s| s.msm));
    let taps = w[0].deviation.len();
    let k = w[0].mismatch.len();
    let (mean_dev, stderr_mean_dev) =
        (0..taps).map(|i| mean_and_stderr(w.iter().map(move |s| s.deviation[i]))).unzip();
    let (mean_mis, stderr_mean_mis) =
        (0..k).map(|i| mean_and_stderr(w.iter().map(move |s| s.mismatch[i]))).unzip();
    let mean_updates = w[0].updates.map(|_| w.iter().filter_map(|s| s.updates).sum::<f64>() * scale);

    LearningCurves {
        n_trials,
        first_iter: total.first_iter,
        msd,
        msm,
        mean_dev,
        stderr_mean_dev,
        mean_mis,
        stderr_mean_mis,
        steady_msd,
        steady_msm,
        stderr_msd,
        stderr_msm,
        max_mismatch_inf: total.max_mismatch_inf,
        mean_updates,
    }
}

/// Parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Mu,
    Lambda,
    Eta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Mu => "mu",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Eta => "eta",
        }
    }

    /// `10⁻¹…10⁶` for μ, `10⁻²…10⁰` (half-decade steps) for η and
    /// `{0.99, 0.995, 0.999}` for λ.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepAxis::Mu => (-1..=6).map(|p| 10f64.powi(p)).collect(),
            SweepAxis::Eta => (0..=4).map(|i| 10f64.powf(-2.0 + 0.5 * i as f64)).collect(),
            SweepAxis::Lambda => vec![0.99, 0.995, 0.999],
        }
    }

    pub fn apply(self, scenario: &Scenario, value: f64) -> Result<Scenario, ModelError> {
        let s = scenario.clone();
        match self {
            SweepAxis::Mu => s.with_mu(value),
            SweepAxis::Lambda => s.with_lambda(value),
            SweepAxis::Eta => s.with_eta(value),
        }
    }
}

/// One grid point of a sweep, linear values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub steady_msd: f64,
    pub steady_msm: f64,
    pub theory_msd: f64,
    pub theory_msm: f64,
    pub stderr_msd: f64,
    pub n_trials: usize,
    pub seed: u64,
}

/// Theory values matching `algorithm`: the Lagrangian limits for CLS and
/// the relaxed predictions otherwise.
pub fn theory_for(
    ctx: &DerivedContext,
    scenario: &Scenario,
    algorithm: Algorithm,
) -> (f64, f64) {
    match algorithm {
        Algorithm::Cls => (theory::predict_msd_cls(ctx, scenario), 0.0),
        Algorithm::Rcls | Algorithm::DcdRcls => {
            (theory::predict_msd_rcls(ctx, scenario), theory::predict_msm_rcls(ctx, scenario))
        }
    }
}

/// One ensemble and one prediction per grid value.
pub fn sweep(
    template: &Scenario,
    config: &RunConfig,
    axis: SweepAxis,
    grid: &[f64],
    execution: Execution,
) -> Result<Vec<SweepRow>, MonteCarloError> {
    if grid.is_empty() {
        return Err(MonteCarloError::InvalidConfig("sweep grid is empty".into()));
    }
    grid.iter()
        .map(|&value| {
            let scenario = axis.apply(template, value)?;
            let ctx = derive_context(&scenario)?;
            let curves = run_ensemble_with(&scenario, &ctx, config, execution)?;
            let (theory_msd, theory_msm) = theory_for(&ctx, &scenario, config.algorithm);
            Ok(SweepRow {
                axis_value: value,
                steady_msd: curves.steady_msd,
                steady_msm: curves.steady_msm,
                theory_msd,
                theory_msm,
                stderr_msd: curves.stderr_msd,
                n_trials: config.n_trials,
                seed: config.master_seed,
            })
        })
        .collect()
}

/// `10·log₁₀(x)`; `-∞` at or below [`DB_FLOOR`].
pub fn to_db(x: f64) -> f64 {
    if x <= DB_FLOOR {
        f64::NEG_INFINITY
    } else {
        10.0 * x.log10()
    }
}

/// dB value as written to files: `-inf` for the floor sentinel.
pub fn db_field(x: f64) -> String {
    let db = to_db(x);
    if db == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        db.to_string()
    }
}

/// Half-width of the `±1` standard-error band in dB: `10·log₁₀(1 + se/x)`.
pub fn stderr_db(x: f64, stderr: f64) -> f64 {
    if x <= DB_FLOOR {
        0.0
    } else {
        10.0 * (1.0 + stderr / x).log10()
    }
}

/// Curves as `iteration,msd,msm,msd_db,msm_db`.
pub fn write_curves_csv<W: Write>(out: W, curves: &LearningCurves) -> Result<(), MonteCarloError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["iteration", "msd", "msm", "msd_db", "msm_db"])?;
    for (j, (a, b)) in curves.msd.iter().zip(&curves.msm).enumerate() {
        let n = curves.first_iter + j;
        w.write_record([n.to_string(), a.to_string(), b.to_string(), db_field(*a), db_field(*b)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Sweep table with dB columns.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), MonteCarloError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record([
        "axis_value",
        "steady_msd_db",
        "steady_msm_db",
        "theory_msd_db",
        "theory_msm_db",
        "stderr_db",
        "n_trials",
        "seed",
    ])?;
    for r in rows {
        w.write_record([
            r.axis_value.to_string(),
            db_field(r.steady_msd),
            db_field(r.steady_msm),
            db_field(r.theory_msd),
            db_field(r.theory_msm),
            stderr_db(r.steady_msd, r.stderr_msd).to_string(),
            r.n_trials.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
