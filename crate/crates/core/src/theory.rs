//! Closed-form steady-state predictions for the relaxed and the Lagrangian
//! estimators.
//!
//! Every function here is a pure evaluation on a [`DerivedContext`]; values
//! are linear (not dB). Spectral radii of the non-symmetric products that
//! appear in the stability conditions are taken on symmetric similarity
//! transforms: with `R = FFᵀ`, `AR ~ FᵀAF` and `I − G ~ I − Q(QᵀQ)⁻¹Qᵀ`
//! where `Q = F⁻¹C`.

use serde::{Deserialize, Serialize};

use crate::model::{derive_context, DerivedContext, ModelError, Scenario};
use crate::numerics::{self, spectral_radius, trace, trace_of_product, Cholesky, LinalgError, Mat};

/// Below this forgetting factor the asymptotic approximations behind the
/// predictions are considered weak; reports carry a flag instead of failing.
pub const APPROXIMATION_LAMBDA_FLOOR: f64 = 0.99;

/// All predictions for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub mean_deviation_rcls: Vec<f64>,
    pub msd_rcls: f64,
    pub mean_mismatch_rcls: Vec<f64>,
    pub msm_rcls: f64,
    pub stability_lhs_rcls: f64,
    pub stable_rcls: bool,
    pub mean_deviation_cls: Vec<f64>,
    pub msd_cls: f64,
    pub msm_cls: f64,
    pub lambda_lower_bound_cls: f64,
    #[serde(rename = "S")]
    pub s: Mat,
    pub rho_s: f64,
    /// Set when λ is below [`APPROXIMATION_LAMBDA_FLOOR`].
    pub approximation_warning: bool,
}

/// `lim E[dₙ] = A R e` for the relaxed estimator.
pub fn predict_mean_deviation_rcls(ctx: &DerivedContext, scenario: &Scenario) -> Vec<f64> {
    ctx.a.matvec(&scenario.r().as_mat().matvec(&ctx.e))
}

/// `S = (2λ−1)I + λ̂²(tr{A²R}R + λ̂²μ²CCᵀA²CCᵀ + RA + AR)`.
pub fn build_s(ctx: &DerivedContext, scenario: &Scenario) -> Mat {
    let r = scenario.r().as_mat();
    let lh = ctx.lambda_hat;
    let a2 = ctx.a.matmul(&ctx.a);
    let tr_a2r = trace_of_product(&a2, r);
    let w = &ctx.weighted_cct_a;
    // λ̂²μ²CCᵀA²CCᵀ = (λ̂μCCᵀA)(λ̂μCCᵀA)ᵀ
    let wwt = w.matmul(&w.transpose());
    let ra = r.matmul(&ctx.a);
    let inner = r.scale(tr_a2r).add(&wwt).add(&ra).add(&ra.transpose());
    let mut s = inner.scale(lh * lh);
    let diag = 2.0 * scenario.lambda() - 1.0;
    for i in 0..s.rows() {
        s[(i, i)] += diag;
    }
    s.symmetrized()
}

fn tr_a2r(ctx: &DerivedContext, scenario: &Scenario) -> f64 {
    trace_of_product(&ctx.a.matmul(&ctx.a), scenario.r().as_mat())
}

/// `ρ{AR}` through the symmetric `FᵀAF`.
fn rho_ar(ctx: &DerivedContext) -> Result<f64, LinalgError> {
    let f = &ctx.r_factor;
    spectral_radius(&f.transpose().matmul(&ctx.a).matmul(f).symmetrized())
}

/// Left-hand side of the sufficient mean-square stability condition
/// `λ̂(tr{A²R}ρ{R} + λ̂²μ²ρ{CCᵀA²CCᵀ} + 2ρ{AR}) < 2`.
pub fn stability_check_rcls(
    ctx: &DerivedContext,
    scenario: &Scenario,
) -> Result<(f64, bool), LinalgError> {
    let r = scenario.r().as_mat();
    let w = &ctx.weighted_cct_a;
    let rho_r = spectral_radius(r)?;
    let rho_wwt = spectral_radius(&w.matmul(&w.transpose()).symmetrized())?;
    let lhs = ctx.lambda_hat * (tr_a2r(ctx, scenario) * rho_r + rho_wwt + 2.0 * rho_ar(ctx)?);
    Ok((lhs, lhs < 2.0))
}

/// Steady-state MSD of the relaxed estimator,
/// `(λ̂/2)tr{A²[(eᵀRe + η)R + 2ReeᵀR]} + eᵀR[λA − λ̂(tr{A²R}I + A²R)]ARe`.
pub fn predict_msd_rcls(ctx: &DerivedContext, scenario: &Scenario) -> f64 {
    let r = scenario.r().as_mat();
    let lh = ctx.lambda_hat;
    let lambda = scenario.lambda();
    let e = &ctx.e;
    let re = r.matvec(e);
    let ere = numerics::dot(e, &re);
    let a2 = ctx.a.matmul(&ctx.a);
    let a2re = a2.matvec(&re);
    // tr{A²[(eᵀRe+η)R + 2ReeᵀR]} = (eᵀRe+η)tr{A²R} + 2(Re)ᵀA²(Re)
    let t_a2r = trace_of_product(&a2, r);
    let first = 0.5 * lh * ((ere + scenario.eta()) * t_a2r + 2.0 * numerics::dot(&re, &a2re));

    let are = ctx.a.matvec(&re);
    // [λA − λ̂(tr{A²R}I + A²R)] · ARe
    let a_are = ctx.a.matvec(&are);
    let a2r_are = a2.matvec(&r.matvec(&are));
    let bracket: Vec<f64> = (0..e.len())
        .map(|i| lambda * a_are[i] - lh * (t_a2r * are[i] + a2r_are[i]))
        .collect();
    first + numerics::dot(&re, &bracket)
}

/// `lim E[mₙ] = B r`.
pub fn predict_mean_mismatch_rcls(ctx: &DerivedContext) -> Vec<f64> {
    ctx.b.matvec(&ctx.r)
}

/// Steady-state MSM `tr{B²[((1−λ)/(1+λ))ηCᵀR⁻¹C + rrᵀ]}`.
pub fn predict_msm_rcls(ctx: &DerivedContext, scenario: &Scenario) -> f64 {
    let lambda = scenario.lambda();
    let b2 = ctx.b.matmul(&ctx.b);
    let noise = (1.0 - lambda) / (1.0 + lambda) * scenario.eta() * trace_of_product(&b2, &ctx.ctrc);
    let br = ctx.b.matvec(&ctx.r);
    noise + numerics::norm2_sq(&br)
}

/// Steady-state MSD of the Lagrangian estimator,
/// `(λ̂/2)tr{[(I − G)R⁻¹]²[(eᵀRe + η)R + 2ReeᵀR]}`.
pub fn predict_msd_cls(ctx: &DerivedContext, scenario: &Scenario) -> f64 {
    let r = scenario.r().as_mat();
    let re = r.matvec(&ctx.e);
    let ere = numerics::dot(&ctx.e, &re);
    let x = projected_inverse(ctx);
    let x2 = x.matmul(&x);
    let first = (ere + scenario.eta()) * trace_of_product(&x2, r);
    let second = 2.0 * numerics::dot(&re, &x2.matvec(&re));
    0.5 * ctx.lambda_hat * (first + second)
}

/// `(I − G)R⁻¹`.
fn projected_inverse(ctx: &DerivedContext) -> Mat {
    let taps = ctx.g_proj.rows();
    Mat::identity(taps).sub(&ctx.g_proj).matmul(&ctx.r_inv)
}

/// Symmetric matrix similar to `I − G`: `I − Q(QᵀQ)⁻¹Qᵀ` with `Q = F⁻¹C`,
/// using `QᵀQ = CᵀR⁻¹C`.
fn complement_projector_symmetric(ctx: &DerivedContext, scenario: &Scenario) -> Result<Mat, LinalgError> {
    let r_chol = Cholesky::factor(scenario.r().as_mat())?;
    let taps = scenario.taps();
    let c = scenario.c();
    let mut q = Mat::zeros(taps, c.cols());
    for j in 0..c.cols() {
        let mut col = c.col(j);
        r_chol.forward_in_place(&mut col);
        for (i, v) in col.into_iter().enumerate() {
            q[(i, j)] = v;
        }
    }
    let qtq = Cholesky::factor(&ctx.ctrc)?;
    let proj = q.matmul(&qtq.solve_mat(&q.transpose()));
    Ok(Mat::identity(taps).sub(&proj).symmetrized())
}

/// `ρ{I − G}`; equals one because `I − G` is a nonzero idempotent.
pub fn rho_complement_projector(ctx: &DerivedContext, scenario: &Scenario) -> Result<f64, LinalgError> {
    spectral_radius(&complement_projector_symmetric(ctx, scenario)?)
}

/// `T = tr{(I−G)R⁻¹}ρ{R} + ρ{GᵀG}`.
fn cls_stability_core(ctx: &DerivedContext, scenario: &Scenario) -> Result<f64, LinalgError> {
    let rho_r = spectral_radius(scenario.r().as_mat())?;
    let gtg = ctx.g_proj.transpose().matmul(&ctx.g_proj).symmetrized();
    Ok(trace(&projected_inverse(ctx)) * rho_r + spectral_radius(&gtg)?)
}

/// Left-hand side of the sufficient CLS stability condition
/// `λ̂(tr{(I−G)R⁻¹}ρ{R} + ρ{GᵀG} + 2ρ{I−G}) < 2`.
pub fn stability_lhs_cls(ctx: &DerivedContext, scenario: &Scenario) -> Result<f64, LinalgError> {
    let core = cls_stability_core(ctx, scenario)?;
    Ok(ctx.lambda_hat * (core + 2.0 * rho_complement_projector(ctx, scenario)?))
}

/// Smallest forgetting factor for which the CLS condition holds: `T/(T+2)`.
pub fn lambda_lower_bound_cls(ctx: &DerivedContext, scenario: &Scenario) -> Result<f64, LinalgError> {
    let t = cls_stability_core(ctx, scenario)?;
    Ok(t / (t + 2.0))
}

/// Evaluates every prediction for `scenario`.
pub fn predict(scenario: &Scenario) -> Result<PredictionReport, ModelError> {
    let ctx = derive_context(scenario)?;
    predict_with(&ctx, scenario)
}

pub fn predict_with(ctx: &DerivedContext, scenario: &Scenario) -> Result<PredictionReport, ModelError> {
    let (stability_lhs_rcls, stable_rcls) = stability_check_rcls(ctx, scenario)?;
    let s = build_s(ctx, scenario);
    let rho_s = spectral_radius(&s)?;
    Ok(PredictionReport {
        mean_deviation_rcls: predict_mean_deviation_rcls(ctx, scenario),
        msd_rcls: predict_msd_rcls(ctx, scenario),
        mean_mismatch_rcls: predict_mean_mismatch_rcls(ctx),
        msm_rcls: predict_msm_rcls(ctx, scenario),
        stability_lhs_rcls,
        stable_rcls,
        mean_deviation_cls: vec![0.0; scenario.taps()],
        msd_cls: predict_msd_cls(ctx, scenario),
        msm_cls: 0.0,
        lambda_lower_bound_cls: lambda_lower_bound_cls(ctx, scenario)?,
        s,
        rho_s,
        approximation_warning: scenario.lambda() < APPROXIMATION_LAMBDA_FLOOR,
    })
}
