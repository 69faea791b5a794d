//! System model: scenarios, reproducible scenario generation, the
//! input/output data stream and the quantities derived once per scenario.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    self, symmetric_eigenvalues, trace, Cholesky, LinalgError, Mat, SpdMat,
};

/// Largest supported filter length.
pub const MAX_TAPS: usize = 64;

/// Regeneration attempts for a full-column-rank constraint matrix.
pub const MAX_RANK_ATTEMPTS: usize = 100;

const UNIT_NORM_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-8;
const R_RIDGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("constraint matrix is rank deficient (singular value ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("no full-rank constraint matrix after {attempts} attempts")]
    RankDeficiencyPersists { attempts: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Distribution of the whitened input components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputDist {
    #[default]
    Gaussian,
    /// Uniform on `[-√3, √3]`, i.e. zero mean and unit variance.
    Uniform,
}

/// Ground-truth system plus algorithm parameters.
///
/// Every constructor validates: `‖h‖ = 1`, `tr{R} = L`, `C` of full column
/// rank, `1 < K < L ≤ 64`, `0 < λ < 1`, `μ ≥ 0`, `η ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioRecord", into = "ScenarioRecord")]
pub struct Scenario {
    h: Vec<f64>,
    c: Mat,
    f: Vec<f64>,
    r: SpdMat,
    eta: f64,
    lambda: f64,
    mu: f64,
    input_dist: InputDist,
    seed: Option<u64>,
}

/// Plain serialized form of a [`Scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub h: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Mat,
    pub f: Vec<f64>,
    #[serde(rename = "R")]
    pub r: Mat,
    pub eta: f64,
    pub lambda: f64,
    pub mu: f64,
    #[serde(default)]
    pub input_dist: InputDist,
}

impl TryFrom<ScenarioRecord> for Scenario {
    type Error = ModelError;

    fn try_from(rec: ScenarioRecord) -> Result<Self, Self::Error> {
        let mut s = Scenario::new(rec.h, rec.c, rec.f, rec.r, rec.eta, rec.lambda, rec.mu, rec.input_dist)?;
        s.seed = rec.seed;
        Ok(s)
    }
}

impl From<Scenario> for ScenarioRecord {
    fn from(s: Scenario) -> Self {
        ScenarioRecord {
            seed: s.seed,
            h: s.h,
            c: s.c,
            f: s.f,
            r: s.r.into_mat(),
            eta: s.eta,
            lambda: s.lambda,
            mu: s.mu,
            input_dist: s.input_dist,
        }
    }
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h: Vec<f64>,
        c: Mat,
        f: Vec<f64>,
        r: Mat,
        eta: f64,
        lambda: f64,
        mu: f64,
        input_dist: InputDist,
    ) -> Result<Self, ModelError> {
        let taps = h.len();
        let k = c.cols();
        check_dimensions(taps, k)?;
        if c.rows() != taps {
            return Err(ModelError::InvalidDimensions(format!(
                "C has {} rows, expected L = {taps}",
                c.rows()
            )));
        }
        if f.len() != k {
            return Err(ModelError::InvalidDimensions(format!("f has length {}, expected K = {k}", f.len())));
        }
        if r.rows() != taps || r.cols() != taps {
            return Err(ModelError::InvalidDimensions(format!(
                "R is {}x{}, expected {taps}x{taps}",
                r.rows(),
                r.cols()
            )));
        }
        if h.iter().chain(&f).any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite.into());
        }
        check_parameters(lambda, mu, eta)?;
        let norm = numerics::norm2(&h);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(ModelError::InvalidParameter(format!("h must have unit norm, got {norm}")));
        }
        let tr = trace(&r);
        if (tr - taps as f64).abs() > TRACE_TOL {
            return Err(ModelError::InvalidParameter(format!("tr{{R}} must equal L = {taps}, got {tr}")));
        }
        let ratio = singular_value_ratio(&c)?;
        if ratio <= RANK_TOL {
            return Err(ModelError::RankDeficient { ratio });
        }
        let r = SpdMat::new(r)?;
        Ok(Self { h, c, f, r, eta, lambda, mu, input_dist, seed: None })
    }

    /// The filter length L.
    pub fn taps(&self) -> usize {
        self.h.len()
    }

    /// The number of constraints K.
    pub fn n_constraints(&self) -> usize {
        self.c.cols()
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn r(&self) -> &SpdMat {
        &self.r
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn input_dist(&self) -> InputDist {
        self.input_dist
    }

    /// Seed the scenario was generated from, if any.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self, ModelError> {
        check_parameters(lambda, self.mu, self.eta)?;
        self.lambda = lambda;
        Ok(self)
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self, ModelError> {
        check_parameters(self.lambda, mu, self.eta)?;
        self.mu = mu;
        Ok(self)
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self, ModelError> {
        check_parameters(self.lambda, self.mu, eta)?;
        self.eta = eta;
        Ok(self)
    }

    pub fn with_input_dist(mut self, input_dist: InputDist) -> Self {
        self.input_dist = input_dist;
        self
    }

    /// Mismatch `Cᵀw − f`.
    pub fn mismatch(&self, w: &[f64]) -> Vec<f64> {
        let mut m = self.c.tr_matvec(w);
        m.iter_mut().zip(&self.f).for_each(|(mi, fi)| *mi -= fi);
        m
    }
}

fn check_dimensions(taps: usize, k: usize) -> Result<(), ModelError> {
    if !(1 < k && k < taps && taps <= MAX_TAPS) {
        return Err(ModelError::InvalidDimensions(format!(
            "need 1 < K < L <= {MAX_TAPS}, got L = {taps}, K = {k}"
        )));
    }
    Ok(())
}

fn check_parameters(lambda: f64, mu: f64, eta: f64) -> Result<(), ModelError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(ModelError::InvalidParameter(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(ModelError::InvalidParameter(format!("mu must be finite and >= 0, got {mu}")));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(ModelError::InvalidParameter(format!("eta must be finite and >= 0, got {eta}")));
    }
    Ok(())
}

/// `σmin(C)/σmax(C)`.
fn singular_value_ratio(c: &Mat) -> Result<f64, ModelError> {
    let gram = c.transpose().matmul(c).symmetrized();
    let eig = symmetric_eigenvalues(&gram)?;
    let max = eig.last().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return Ok(0.0);
    }
    Ok((eig[0].max(0.0) / max).sqrt())
}

/// Inputs to [`generate_scenario`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioParams {
    pub seed: u64,
    pub taps: usize,
    pub n_constraints: usize,
    pub lambda: f64,
    pub mu: f64,
    pub eta: f64,
    pub input_dist: InputDist,
    /// Force `f = Cᵀh`, which makes `g = h` and `e = r = 0`.
    pub consistent_constraints: bool,
}

impl ScenarioParams {
    /// `L = 7, K = 3`, Gaussian input, `λ = 0.995`, `μ = 10³`, `η = 0.1`.
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            taps: 7,
            n_constraints: 3,
            lambda: 0.995,
            mu: 1e3,
            eta: 0.1,
            input_dist: InputDist::Gaussian,
            consistent_constraints: false,
        }
    }

    /// `L = 31, K = 15`, uniform input, otherwise as [`ScenarioParams::small`].
    pub fn large(seed: u64) -> Self {
        Self { taps: 31, n_constraints: 15, input_dist: InputDist::Uniform, ..Self::small(seed) }
    }
}

// independent ChaCha streams per scenario component
const STREAM_H: u64 = 0;
const STREAM_F: u64 = 1;
const STREAM_R: u64 = 2;
const STREAM_C: u64 = 16;

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws a random scenario. Deterministic in `params.seed`.
///
/// `h` is a normalized standard-normal draw, `C` and `f` are standard
/// normal (`C` redrawn from a fresh stream until it has full column rank),
/// and `R = ZZᵀ + 0.1·I` rescaled to `tr{R} = L`.
pub fn generate_scenario(params: &ScenarioParams) -> Result<Scenario, ModelError> {
    let (taps, k) = (params.taps, params.n_constraints);
    check_dimensions(taps, k)?;
    check_parameters(params.lambda, params.mu, params.eta)?;

    let mut h = normal_vec(&mut substream(params.seed, STREAM_H), taps);
    numerics::normalize(&mut h);

    let mut c = None;
    for attempt in 0..MAX_RANK_ATTEMPTS as u64 {
        let mut rng = substream(params.seed, STREAM_C + attempt);
        let cand = Mat::from_fn(taps, k, |_, _| rng.sample(StandardNormal));
        if singular_value_ratio(&cand)? > RANK_TOL {
            c = Some(cand);
            break;
        }
    }
    let c = c.ok_or(ModelError::RankDeficiencyPersists { attempts: MAX_RANK_ATTEMPTS })?;

    let f = if params.consistent_constraints {
        c.tr_matvec(&h)
    } else {
        normal_vec(&mut substream(params.seed, STREAM_F), k)
    };

    let mut rng = substream(params.seed, STREAM_R);
    let z = Mat::from_fn(taps, taps, |_, _| rng.sample(StandardNormal));
    let mut r = z.matmul(&z.transpose()).add(&Mat::identity(taps).scale(R_RIDGE));
    r = r.scale(taps as f64 / trace(&r)).symmetrized();

    let mut s = Scenario::new(h, c, f, r, params.eta, params.lambda, params.mu, params.input_dist)?;
    s.seed = Some(params.seed);
    Ok(s)
}

/// `g = h + R⁻¹C(CᵀR⁻¹C)⁻¹(f − Cᵀh)`, the minimizer of `(w−h)ᵀR(w−h)`
/// subject to `Cᵀw = f`.
pub fn optimal_solution(scenario: &Scenario) -> Result<Vec<f64>, ModelError> {
    let r_chol = Cholesky::factor(scenario.r.as_mat())?;
    let rinv_c = r_chol.solve_mat(&scenario.c);
    let ctrc = Cholesky::factor(&scenario.c.transpose().matmul(&rinv_c).symmetrized())?;
    Ok(constrained_optimum(scenario, &rinv_c, &ctrc))
}

fn constrained_optimum(scenario: &Scenario, rinv_c: &Mat, ctrc: &Cholesky) -> Vec<f64> {
    let gap: Vec<f64> = scenario.mismatch(&scenario.h).iter().map(|v| -v).collect();
    let coef = ctrc.solve(&gap);
    let mut g = rinv_c.matvec(&coef);
    g.iter_mut().zip(&scenario.h).for_each(|(gi, hi)| *gi += hi);
    g
}

/// Quantities computed once per scenario and shared by the performance model
/// and the Monte Carlo harness.
#[derive(Debug, Clone)]
pub struct DerivedContext {
    /// Optimal constrained solution.
    pub g: Vec<f64>,
    /// `h − g`.
    pub e: Vec<f64>,
    /// `Cᵀh − f`.
    pub r: Vec<f64>,
    /// `(R + λ̂μCCᵀ)⁻¹`.
    pub a: Mat,
    /// `(I + λ̂μCᵀR⁻¹C)⁻¹`.
    pub b: Mat,
    /// Oblique projector `R⁻¹C(CᵀR⁻¹C)⁻¹Cᵀ`.
    pub g_proj: Mat,
    /// `λ̂μ·CCᵀA`, formed as `C((λ̂μ)⁻¹I + CᵀR⁻¹C)⁻¹CᵀR⁻¹` so that it stays
    /// accurate as μ grows.
    pub weighted_cct_a: Mat,
    /// `1 − λ`.
    pub lambda_hat: f64,
    pub r_inv: Mat,
    /// Lower Cholesky factor of R.
    pub r_factor: Mat,
    /// `CᵀR⁻¹C`.
    pub ctrc: Mat,
    /// `R⁻¹C`.
    pub rinv_c: Mat,
}

pub fn derive_context(scenario: &Scenario) -> Result<DerivedContext, ModelError> {
    let taps = scenario.taps();
    let k = scenario.n_constraints();
    let r = scenario.r.as_mat();
    let c = &scenario.c;
    let lambda_hat = 1.0 - scenario.lambda;
    let weight = lambda_hat * scenario.mu;

    let r_chol = Cholesky::factor(r)?;
    let r_inv = r_chol.inverse();
    let rinv_c = r_chol.solve_mat(c);
    let ctrc = c.transpose().matmul(&rinv_c).symmetrized();
    let ctrc_chol = Cholesky::factor(&ctrc)?;

    let g = constrained_optimum(scenario, &rinv_c, &ctrc_chol);
    let e = numerics::sub(&scenario.h, &g);
    let r_vec = scenario.mismatch(&scenario.h);

    let cct = c.matmul(&c.transpose());
    let a = Cholesky::factor(&r.add(&cct.scale(weight)))?.inverse();
    let b = Cholesky::factor(&Mat::identity(k).add(&ctrc.scale(weight)))?.inverse();
    let g_proj = rinv_c.matmul(&ctrc_chol.solve_mat(&c.transpose()));

    let weighted_cct_a = if weight > 0.0 {
        let inner = Cholesky::factor(&Mat::identity(k).scale(1.0 / weight).add(&ctrc))?;
        c.matmul(&inner.solve_mat(&rinv_c.transpose()))
    } else {
        Mat::zeros(taps, taps)
    };

    Ok(DerivedContext {
        g,
        e,
        r: r_vec,
        a,
        b,
        g_proj,
        weighted_cct_a,
        lambda_hat,
        r_inv,
        r_factor: r_chol.into_lower(),
        ctrc,
        rinv_c,
    })
}

/// One emission of the data stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
    pub v: f64,
}

/// Sequential generator of `(xₙ, yₙ, vₙ)` with `xₙ = F zₙ`, `F Fᵀ = R`,
/// `vₙ ~ N(0, η)` and `yₙ = xₙᵀh + vₙ`.
#[derive(Debug, Clone)]
pub struct DataStream {
    rng: ChaCha8Rng,
    factor: Mat,
    h: Vec<f64>,
    noise_std: f64,
    dist: InputDist,
    z: Vec<f64>,
    seed: u64,
}

const UNIFORM_HALF_WIDTH: f64 = 1.732_050_807_568_877_2;

impl DataStream {
    pub fn new(scenario: &Scenario, seed: u64) -> Self {
        // validated at scenario construction
        let factor = Cholesky::factor(scenario.r.as_mat())
            .expect("scenario R is positive definite")
            .into_lower();
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            factor,
            h: scenario.h.clone(),
            noise_std: scenario.eta.sqrt(),
            dist: scenario.input_dist,
            z: vec![0.0; scenario.taps()],
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Writes the next input vector into `x` and returns `(y, v)`.
    #[inline]
    pub fn next_into(&mut self, x: &mut [f64]) -> (f64, f64) {
        match self.dist {
            InputDist::Gaussian => {
                for z in self.z.iter_mut() {
                    *z = self.rng.sample(StandardNormal);
                }
            }
            InputDist::Uniform => {
                let u = Uniform::new_inclusive(-UNIFORM_HALF_WIDTH, UNIFORM_HALF_WIDTH)
                    .expect("finite bounds");
                for z in self.z.iter_mut() {
                    *z = u.sample(&mut self.rng);
                }
            }
        }
        let n = self.z.len();
        let f = self.factor.as_slice();
        for i in 0..n {
            x[i] = numerics::dot(&f[i * n..i * n + i + 1], &self.z[..=i]);
        }
        let z_noise: f64 = self.rng.sample(StandardNormal);
        let v = self.noise_std * z_noise;
        (numerics::dot(x, &self.h) + v, v)
    }

    /// Last whitened input `zₙ`.
    pub fn last_whitened(&self) -> &[f64] {
        &self.z
    }
}

impl Iterator for DataStream {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        let mut x = vec![0.0; self.z.len()];
        let (y, v) = self.next_into(&mut x);
        Some(Sample { x, y, v })
    }
}

/// Convenience wrapper matching the other free functions of this module.
pub fn data_stream(scenario: &Scenario, seed: u64) -> DataStream {
    DataStream::new(scenario, seed)
}
