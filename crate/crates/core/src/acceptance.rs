//! The acceptance suite behind `clse verify`.
//!
//! Each criterion produces a list of checks with the measured value and the
//! threshold it was held to. Failures, including internal errors, are report
//! content rather than `Err`s.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::cli;
use crate::filters::{build_estimator, Algorithm, DcdParams, DEFAULT_DELTA};
use crate::model::{derive_context, generate_scenario, DataStream, InputDist, Scenario, ScenarioParams};
use crate::montecarlo::{self, run_ensemble_with, sweep, to_db, trial_seed, Execution, RunConfig, SweepAxis, SweepRow};
use crate::numerics::{self, spectral_radius, Mat};
use crate::theory;

/// Criterion identifiers in report order.
pub const CRITERIA: [u8; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

pub const MU_GRID: [f64; 7] = [1e-1, 1e0, 1e1, 1e2, 1e3, 1e4, 1e6];
pub const ETA_GRID: [f64; 5] = [0.01, 0.0316, 0.1, 0.316, 1.0];
pub const LAMBDAS: [f64; 2] = [0.995, 0.999];
/// Weight used for the DCD comparisons.
pub const DCD_MU: f64 = 10.0;

pub fn title(id: u8) -> &'static str {
    match id {
        1 => "rCLS converges to CLS as the weight grows",
        2 => "CLS satisfies the constraints exactly",
        3 => "CLS is asymptotically unbiased",
        4 => "rCLS mean deviation",
        5 => "rCLS steady-state MSD",
        6 => "rCLS steady-state MSM",
        7 => "CLS steady-state MSD",
        8 => "L=31 uniform-input scenario",
        9 => "stability conditions",
        10 => "DCD-rCLS fidelity",
        11 => "determinism",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    Below,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub measured: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u8,
    pub title: String,
    pub pass: bool,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl CriterionReport {
    /// One-line summary.
    pub fn summary(&self) -> String {
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        format!(
            "criterion {:>2} {}: {} ({} checks, {} failed)",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.checks.len(),
            failed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub scenario_seed: u64,
    pub master_seed: u64,
    pub n_trials: usize,
    pub large_trials: usize,
    pub tolerance_scale: f64,
    pub pass: bool,
    pub criteria: Vec<CriterionReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceOptions {
    /// Seed of the reference L=7 and L=31 scenarios; random-scenario
    /// criteria use consecutive seeds from here.
    pub scenario_seed: u64,
    pub master_seed: u64,
    /// Trials per L=7 ensemble.
    pub n_trials: usize,
    /// Trials per L=31 ensemble.
    pub large_trials: usize,
    /// Multiplies upper thresholds and divides lower ones. Only the
    /// harness self-test changes it.
    pub tolerance_scale: f64,
    pub execution: Execution,
}

impl Default for AcceptanceOptions {
    fn default() -> Self {
        Self {
            scenario_seed: 1,
            master_seed: 0,
            n_trials: montecarlo::DEFAULT_TRIALS,
            large_trials: montecarlo::DEFAULT_TRIALS / 10,
            tolerance_scale: 1.0,
            execution: Execution::Parallel,
        }
    }
}

type Grid = Result<Vec<(f64, Vec<SweepRow>)>, String>;

/// Runs criteria and caches the ensembles shared between them.
pub struct Bench {
    opts: AcceptanceOptions,
    rcls_small: OnceLock<Grid>,
    cls_small: OnceLock<Grid>,
    rcls_large: OnceLock<Grid>,
    cls_large: OnceLock<Grid>,
}

struct Checks {
    scale: f64,
    list: Vec<Check>,
    notes: Vec<String>,
}

impl Checks {
    fn new(scale: f64) -> Self {
        Self { scale, list: Vec::new(), notes: Vec::new() }
    }

    fn push(&mut self, label: impl Into<String>, measured: f64, relation: Relation, threshold: f64) {
        let threshold = match relation {
            Relation::AtMost | Relation::Below => threshold * self.scale,
            Relation::AtLeast => threshold / self.scale,
        };
        let pass = match relation {
            Relation::AtMost => measured <= threshold,
            Relation::Below => measured < threshold,
            Relation::AtLeast => measured >= threshold,
        };
        self.list.push(Check { label: label.into(), measured, relation, threshold, pass });
    }

    fn at_most(&mut self, label: impl Into<String>, measured: f64, threshold: f64) {
        self.push(label, measured, Relation::AtMost, threshold);
    }

    fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }
}

fn db_gap(experiment: f64, theory: f64) -> f64 {
    (to_db(experiment) - to_db(theory)).abs()
}

fn err_string(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl Bench {
    pub fn new(opts: AcceptanceOptions) -> Self {
        Self {
            opts,
            rcls_small: OnceLock::new(),
            cls_small: OnceLock::new(),
            rcls_large: OnceLock::new(),
            cls_large: OnceLock::new(),
        }
    }

    pub fn options(&self) -> &AcceptanceOptions {
        &self.opts
    }

    fn small(&self) -> Result<Scenario, String> {
        generate_scenario(&ScenarioParams::small(self.opts.scenario_seed)).map_err(err_string)
    }

    fn large(&self) -> Result<Scenario, String> {
        generate_scenario(&ScenarioParams::large(self.opts.scenario_seed)).map_err(err_string)
    }

    fn config(&self, n_trials: usize, algorithm: Algorithm) -> RunConfig {
        RunConfig { n_trials, master_seed: self.opts.master_seed, ..Default::default() }.with_algorithm(algorithm)
    }

    fn grid(&self, template: &Scenario, n_trials: usize, algorithm: Algorithm, axis: SweepAxis, values: &[f64]) -> Grid {
        LAMBDAS
            .iter()
            .map(|&lambda| {
                let s = template.clone().with_lambda(lambda).map_err(err_string)?;
                let rows = sweep(&s, &self.config(n_trials, algorithm), axis, values, self.opts.execution)
                    .map_err(err_string)?;
                Ok((lambda, rows))
            })
            .collect()
    }

    fn rcls_grid(&self, large: bool) -> Grid {
        let (cell, n) = if large {
            (&self.rcls_large, self.opts.large_trials)
        } else {
            (&self.rcls_small, self.opts.n_trials)
        };
        cell.get_or_init(|| {
            let s = if large { self.large()? } else { self.small()? };
            self.grid(&s, n, Algorithm::Rcls, SweepAxis::Mu, &MU_GRID)
        })
        .clone()
    }

    fn cls_grid(&self, large: bool) -> Grid {
        let (cell, n) = if large {
            (&self.cls_large, self.opts.large_trials)
        } else {
            (&self.cls_small, self.opts.n_trials)
        };
        cell.get_or_init(|| {
            let s = if large { self.large()? } else { self.small()? };
            self.grid(&s, n, Algorithm::Cls, SweepAxis::Eta, &ETA_GRID)
        })
        .clone()
    }

    /// Runs one criterion; errors become a failing report with a note.
    pub fn run(&self, id: u8) -> CriterionReport {
        let mut checks = Checks::new(self.opts.tolerance_scale);
        let outcome = match id {
            1 => self.weight_limit(&mut checks),
            2 => self.cls_exactness(&mut checks),
            3 => self.cls_unbiased(&mut checks),
            4 => self.rcls_mean_deviation(&mut checks),
            5 => self.rcls_msd(&mut checks, false, 1.0),
            6 => self.rcls_msm(&mut checks, false, 1.0),
            7 => self.cls_msd(&mut checks, false, 1.0),
            8 => self.large_scenario(&mut checks),
            9 => self.stability(&mut checks),
            10 => self.dcd_fidelity(&mut checks),
            11 => determinism(&mut checks),
            _ => Err(format!("no criterion {id}")),
        };
        if let Err(e) = outcome {
            checks.note(format!("error: {e}"));
        }
        let pass = outcome_pass(&checks);
        CriterionReport { id, title: title(id).to_string(), pass, checks: checks.list, notes: checks.notes }
    }

    fn weight_limit(&self, c: &mut Checks) -> Result<(), String> {
        let mut worst: f64 = 0.0;
        for k in 0..20u64 {
            let s = generate_scenario(&ScenarioParams::small(self.opts.scenario_seed + k))
                .and_then(|s| s.with_mu(1e8))
                .map_err(err_string)?;
            let dcd = DcdParams::default();
            let mut relaxed = build_estimator(&s, Algorithm::Rcls, DEFAULT_DELTA, dcd).map_err(err_string)?;
            let mut exact = build_estimator(&s, Algorithm::Cls, DEFAULT_DELTA, dcd).map_err(err_string)?;
            let mut stream = DataStream::new(&s, trial_seed(self.opts.master_seed, k as usize));
            let mut x = vec![0.0; s.taps()];
            for n in 1..=100 {
                let (y, _) = stream.next_into(&mut x);
                let wr = relaxed.update(&x, y).map_err(err_string)?.to_vec();
                let wc = exact.update(&x, y).map_err(err_string)?;
                if n >= s.taps() {
                    worst = worst.max(numerics::norm2(&numerics::sub(&wr, wc)) / numerics::norm2(wc));
                }
            }
        }
        c.at_most("max relative gap, mu=1e8, n >= L, 20 scenarios x 100 steps", worst, 1e-5);
        Ok(())
    }

    fn cls_exactness(&self, c: &mut Checks) -> Result<(), String> {
        let s = self.small()?;
        let ctx = derive_context(&s).map_err(err_string)?;
        let n = self.opts.large_trials;
        let e = run_ensemble_with(&s, &ctx, &self.config(n, Algorithm::Cls), self.opts.execution)
            .map_err(err_string)?;
        c.at_most("ensemble steady-state MSM", e.steady_msm, 1e-18);
        c.at_most("max per-step |C^T w - f|_inf", e.max_mismatch_inf, 1e-9);
        c.note(format!("{n} trials"));
        Ok(())
    }

    fn cls_unbiased(&self, c: &mut Checks) -> Result<(), String> {
        let s = self.small()?;
        let ctx = derive_context(&s).map_err(err_string)?;
        let e = run_ensemble_with(&s, &ctx, &self.config(self.opts.n_trials, Algorithm::Cls), self.opts.execution)
            .map_err(err_string)?;
        let z = max_z(&e.mean_dev, &vec![0.0; s.taps()], &e.stderr_mean_dev);
        c.at_most("max |mean deviation| / stderr", z, 4.0);
        Ok(())
    }

    fn rcls_mean_deviation(&self, c: &mut Checks) -> Result<(), String> {
        for mu in [1e1, 1e3] {
            let s = self.small()?.with_mu(mu).map_err(err_string)?;
            let ctx = derive_context(&s).map_err(err_string)?;
            let predicted = theory::predict_mean_deviation_rcls(&ctx, &s);
            let e =
                run_ensemble_with(&s, &ctx, &self.config(self.opts.n_trials, Algorithm::Rcls), self.opts.execution)
                    .map_err(err_string)?;
            let z = max_z(&e.mean_dev, &predicted, &e.stderr_mean_dev);
            c.at_most(format!("mu={mu:e}: max |mean deviation - ARe| / stderr"), z, 4.0);
        }
        Ok(())
    }

    fn rcls_msd(&self, c: &mut Checks, large: bool, tol: f64) -> Result<(), String> {
        for (lambda, rows) in self.rcls_grid(large)? {
            for r in &rows {
                c.at_most(
                    format!("lambda={lambda} mu={:e}: |MSD experiment - theory| dB", r.axis_value),
                    db_gap(r.steady_msd, r.theory_msd),
                    tol,
                );
            }
        }
        Ok(())
    }

    fn rcls_msm(&self, c: &mut Checks, large: bool, tol: f64) -> Result<(), String> {
        for (lambda, rows) in self.rcls_grid(large)? {
            for r in &rows {
                c.at_most(
                    format!("lambda={lambda} mu={:e}: |MSM experiment - theory| dB", r.axis_value),
                    db_gap(r.steady_msm, r.theory_msm),
                    tol,
                );
            }
            let first = rows.first().ok_or("empty grid")?;
            let last = rows.last().ok_or("empty grid")?;
            c.push(
                format!("lambda={lambda}: MSM(mu={:e}) below MSM(mu={:e}) by dB", first.axis_value, last.axis_value),
                to_db(first.steady_msm) - to_db(last.steady_msm),
                Relation::AtLeast,
                20.0,
            );
        }
        Ok(())
    }

    fn cls_msd(&self, c: &mut Checks, large: bool, tol: f64) -> Result<(), String> {
        for (lambda, rows) in self.cls_grid(large)? {
            for r in &rows {
                c.at_most(
                    format!("lambda={lambda} eta={}: |MSD experiment - theory| dB", r.axis_value),
                    db_gap(r.steady_msd, r.theory_msd),
                    tol,
                );
            }
        }
        let template = if large { self.large()? } else { self.small()? };
        let mut worst: f64 = 0.0;
        for lambda in LAMBDAS {
            for eta in ETA_GRID {
                let s = template
                    .clone()
                    .with_lambda(lambda)
                    .and_then(|s| s.with_eta(eta))
                    .and_then(|s| s.with_mu(1e10))
                    .map_err(err_string)?;
                let ctx = derive_context(&s).map_err(err_string)?;
                let relaxed = theory::predict_msd_rcls(&ctx, &s);
                let exact = theory::predict_msd_cls(&ctx, &s);
                worst = worst.max((relaxed - exact).abs() / exact);
            }
        }
        c.at_most("max relative gap between rCLS MSD at mu=1e10 and CLS MSD", worst, 1e-3);
        Ok(())
    }

    fn large_scenario(&self, c: &mut Checks) -> Result<(), String> {
        self.rcls_msd(c, true, 2.0)?;
        self.rcls_msm(c, true, 2.0)?;
        self.cls_msd(c, true, 2.0)?;
        let gaps = c.list.iter().filter(|k| k.label.contains("experiment - theory")).map(|k| k.measured);
        let worst = gaps.fold(0.0_f64, f64::max);
        c.note(format!(
            "{} trials per ensemble; largest theory gap {worst:.3} dB",
            self.opts.large_trials
        ));
        Ok(())
    }

    fn stability(&self, c: &mut Checks) -> Result<(), String> {
        const LAMBDA_GRID: [f64; 7] = [0.5, 0.7, 0.9, 0.95, 0.99, 0.995, 0.999];
        const WEIGHTS: [f64; 4] = [1e-1, 1e1, 1e3, 1e6];
        let mut stable = 0usize;
        let mut unstable = 0usize;
        let mut violations = 0usize;
        let mut worst_rho: f64 = 0.0;
        let mut bound_min = f64::INFINITY;
        let mut bound_max = f64::NEG_INFINITY;
        for k in 0..50u64 {
            let base = generate_scenario(&ScenarioParams::small(self.opts.scenario_seed + 100 + k)).map_err(err_string)?;
            for lambda in LAMBDA_GRID {
                for mu in WEIGHTS {
                    let s = base.clone().with_lambda(lambda).and_then(|s| s.with_mu(mu)).map_err(err_string)?;
                    let ctx = derive_context(&s).map_err(err_string)?;
                    let (_, ok) = theory::stability_check_rcls(&ctx, &s).map_err(err_string)?;
                    let rho = spectral_radius(&theory::build_s(&ctx, &s)).map_err(err_string)?;
                    if ok {
                        stable += 1;
                        worst_rho = worst_rho.max(rho);
                        if rho >= 1.0 {
                            violations += 1;
                        }
                    } else {
                        unstable += 1;
                    }
                    let b = theory::lambda_lower_bound_cls(&ctx, &s).map_err(err_string)?;
                    bound_min = bound_min.min(b);
                    bound_max = bound_max.max(b);
                }
            }
        }
        c.at_most("cases with LHS < 2 but rho{S} >= 1", violations as f64, 0.0);
        c.push("max rho{S} over cases with LHS < 2", worst_rho, Relation::Below, 1.0);
        c.push("min CLS lambda bound", bound_min, Relation::AtLeast, f64::MIN_POSITIVE);
        c.push("max CLS lambda bound", bound_max, Relation::Below, 1.0);
        c.note(format!("{stable} cases satisfy the sufficient condition, {unstable} do not"));

        let base = self.small()?;
        let s = Scenario::new(
            base.h().to_vec(),
            base.c().clone(),
            base.f().to_vec(),
            Mat::identity(base.taps()),
            base.eta(),
            base.lambda(),
            base.mu(),
            InputDist::Gaussian,
        )
        .map_err(err_string)?;
        let ctx = derive_context(&s).map_err(err_string)?;
        let bound = theory::lambda_lower_bound_cls(&ctx, &s).map_err(err_string)?;
        c.at_most("R = I, L=7, K=3: |bound - 5/7|", (bound - 5.0 / 7.0).abs(), 1e-9);
        Ok(())
    }

    fn dcd_fidelity(&self, c: &mut Checks) -> Result<(), String> {
        let s = self.small()?.with_mu(DCD_MU).map_err(err_string)?;
        let ctx = derive_context(&s).map_err(err_string)?;
        let n = self.opts.n_trials;
        let exact = run_ensemble_with(&s, &ctx, &self.config(n, Algorithm::Rcls), self.opts.execution)
            .map_err(err_string)?;
        let approx = run_ensemble_with(&s, &ctx, &self.config(n, Algorithm::DcdRcls), self.opts.execution)
            .map_err(err_string)?;
        c.at_most(
            format!("mu={DCD_MU}: |MSD DCD - MSD rCLS| dB, defaults"),
            db_gap(approx.steady_msd, exact.steady_msd),
            0.5,
        );

        let params = DcdParams { amplitude: 2.0, bits: 30, max_updates: 1000 };
        let len = RunConfig::default().resolve(s.lambda()).map_err(err_string)?;
        let mut steady: f64 = 0.0;
        let mut transient: f64 = 0.0;
        for k in 0..10 {
            let mut reference = build_estimator(&s, Algorithm::Rcls, DEFAULT_DELTA, params).map_err(err_string)?;
            let mut dcd = build_estimator(&s, Algorithm::DcdRcls, DEFAULT_DELTA, params).map_err(err_string)?;
            let mut stream = DataStream::new(&s, trial_seed(self.opts.master_seed, k));
            let mut x = vec![0.0; s.taps()];
            for step in 0..len.n_iters {
                let (y, _) = stream.next_into(&mut x);
                let wr = reference.update(&x, y).map_err(err_string)?.to_vec();
                let wd = dcd.update(&x, y).map_err(err_string)?;
                let gap = numerics::norm_inf(&numerics::sub(&wr, wd));
                if step >= len.warmup {
                    steady = steady.max(gap);
                } else if step + 1 >= s.taps() {
                    transient = transient.max(gap);
                }
            }
        }
        c.at_most(
            format!("mu={DCD_MU}, N_u=1000, M=30: max per-step |w_DCD - w_rCLS|_inf over the steady window"),
            steady,
            1e-6,
        );
        c.note(format!(
            "{n} trials; same run before the warm-up ends (n >= L) peaks at {transient:.2e}"
        ));

        let s3 = self.small()?;
        let ctx3 = derive_context(&s3).map_err(err_string)?;
        let short = |alg| RunConfig { n_trials: (n / 10).max(1), ..self.config(n, alg) };
        let e = run_ensemble_with(&s3, &ctx3, &short(Algorithm::Rcls), self.opts.execution).map_err(err_string)?;
        let d = run_ensemble_with(&s3, &ctx3, &short(Algorithm::DcdRcls), self.opts.execution).map_err(err_string)?;
        c.note(format!(
            "at mu=1e3 the default DCD budget leaves a {:.2} dB MSD gap ({} trials, not asserted)",
            to_db(d.steady_msd) - to_db(e.steady_msd),
            (n / 10).max(1)
        ));
        Ok(())
    }

    /// Runs `ids` in order.
    pub fn report(&self, ids: &[u8]) -> AcceptanceReport {
        let criteria: Vec<CriterionReport> = ids.iter().map(|&id| self.run(id)).collect();
        AcceptanceReport {
            scenario_seed: self.opts.scenario_seed,
            master_seed: self.opts.master_seed,
            n_trials: self.opts.n_trials,
            large_trials: self.opts.large_trials,
            tolerance_scale: self.opts.tolerance_scale,
            pass: criteria.iter().all(|c| c.pass),
            criteria,
        }
    }
}

fn outcome_pass(checks: &Checks) -> bool {
    !checks.list.is_empty() && checks.list.iter().all(|c| c.pass) && !checks.notes.iter().any(|n| n.starts_with("error:"))
}

/// Largest `|observed − expected| / stderr` over components.
fn max_z(observed: &[f64], expected: &[f64], stderr: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .zip(stderr)
        .map(|((o, e), s)| (o - e).abs() / s)
        .fold(0.0, f64::max)
}

/// Renders every command twice from a small serial config and compares the
/// produced files byte for byte.
fn determinism(c: &mut Checks) -> Result<(), String> {
    let config = cli::ConfigFile::determinism_probe();
    for command in [cli::Command::Predict, cli::Command::Simulate, cli::Command::Sweep] {
        let opts = cli::RenderOptions { execution: Execution::Serial, ..Default::default() };
        let a = cli::render(command, &config, &opts).map_err(err_string)?;
        let b = cli::render(command, &config, &opts).map_err(err_string)?;
        let differing = if a.files.len() != b.files.len() {
            a.files.len().max(b.files.len())
        } else {
            a.files.iter().zip(&b.files).filter(|(x, y)| x != y).count()
        };
        c.at_most(format!("{}: files differing between reruns", command.name()), differing as f64, 0.0);
    }
    Ok(())
}

/// Runs the criteria in `only` (all when `None`).
pub fn run_all(opts: AcceptanceOptions, only: Option<&[u8]>) -> AcceptanceReport {
    Bench::new(opts).report(only.unwrap_or(&CRITERIA))
}
