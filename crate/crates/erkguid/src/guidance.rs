//! Stiffness-aware trajectory correction and drift-space guidance.
//!
//! The correction subtracts a multiple of the estimated stiff direction from
//! a solver's proposed state. Its strength comes from a scaling of
//! z = w_stiff * h * rho_hat, gated by a consistency threshold w_con on the
//! estimated stiffness. Everything here is allocation-light and never
//! evaluates the field; the inputs are states and cached drifts.

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::{dense_spectrum, StiffnessEstimate};
use crate::fields::ScoreField;
use crate::solvers::ERKPair;
use crate::state::StateVector;

/// Below this magnitude phi switches to its Taylor series.
pub const PHI_SERIES_THRESHOLD: f64 = 1e-5;
/// Below this magnitude alpha switches to its Taylor series (the direct
/// expression loses the leading z^2/6 to cancellation much earlier than
/// phi does).
pub const ALPHA_SERIES_THRESHOLD: f64 = 1e-4;

/// phi(z) = (e^z - 1)/z, continuously extended with phi(0) = 1.
pub fn phi(z: f64) -> f64 {
    if z == 0.0 {
        return 1.0;
    }
    if z.abs() < PHI_SERIES_THRESHOLD {
        return 1.0 + z / 2.0 + z * z / 6.0;
    }
    z.exp_m1() / z
}

/// alpha(z) = (e^z - 1)/z - 1 - z/2 = z^2/6 + z^3/24 + ..., alpha(0) = 0.
pub fn alpha(z: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    if z.abs() < ALPHA_SERIES_THRESHOLD {
        return z * z / 6.0 + z * z * z / 24.0;
    }
    z.exp_m1() / z - 1.0 - z / 2.0
}

/// How the gain beta is derived from z = w_stiff * h * rho_hat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingKind {
    /// beta = alpha(z): the exact second-order error coefficient.
    Alpha,
    /// beta = z^2: the leading-order surrogate (default).
    #[default]
    #[value(name = "quad")]
    #[serde(rename = "quad")]
    Quadratic,
    /// beta = |z|: deliberately too aggressive for small z.
    Abs,
}

impl ScalingKind {
    pub fn value(self, z: f64) -> f64 {
        match self {
            ScalingKind::Alpha => alpha(z),
            ScalingKind::Quadratic => z * z,
            ScalingKind::Abs => z.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub w_stiff: f64,
    pub w_con: f64,
    pub scaling: ScalingKind,
    pub enabled: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            w_stiff: 1.0,
            w_con: 0.5,
            scaling: ScalingKind::Quadratic,
            enabled: true,
        }
    }
}

/// Corrected state plus the trace quantities of the correction.
#[derive(Debug, Clone)]
pub struct CorrectionOutcome {
    pub x: StateVector,
    /// Binary activation indicator: 1.0 when the gate passed (the scaling
    /// may still evaluate to zero strength), 0.0 otherwise.
    pub beta: f64,
    pub correction_norm: f64,
}

fn gate(est: &StiffnessEstimate, cfg: &GuidanceConfig) -> bool {
    cfg.enabled && est.valid && est.rho_hat > cfg.w_con
}

/// x_hat = x_next - h * beta * s(z) * <f_ref, v_hat> v_hat, with
/// z = w_stiff * h * rho_hat and beta the binary gate (1 when the estimate
/// is valid and rho_hat exceeds w_con). A zero coefficient returns `x_next`
/// bit-for-bit (no arithmetic is applied, so no -0.0 can appear).
pub fn erk_guid_correction_traced(
    x_next: &StateVector,
    h: f64,
    est: &StiffnessEstimate,
    f_ref: &StateVector,
    cfg: &GuidanceConfig,
) -> CorrectionOutcome {
    if !gate(est, cfg) {
        return CorrectionOutcome { x: x_next.clone(), beta: 0.0, correction_norm: 0.0 };
    }
    let strength = cfg.scaling.value(cfg.w_stiff * h * est.rho_hat);
    let v = est.v_hat.as_ref().expect("gated estimate carries a direction");
    let coef = h * strength * f_ref.dot(v);
    if coef == 0.0 {
        return CorrectionOutcome { x: x_next.clone(), beta: 1.0, correction_norm: 0.0 };
    }
    CorrectionOutcome {
        x: x_next - v * coef,
        beta: 1.0,
        correction_norm: coef.abs(),
    }
}

pub fn erk_guid_correction(
    x_next: &StateVector,
    h: f64,
    est: &StiffnessEstimate,
    f_ref: &StateVector,
    cfg: &GuidanceConfig,
) -> StateVector {
    erk_guid_correction_traced(x_next, h, est, f_ref, cfg).x
}

/// Same correction written against the raw pair differences:
///
///   x_hat = x_next - h * gamma * Delta^f,
///   gamma = s(z) * <f_ref, u> / ||Delta^f||,  u = Delta^f / ||Delta^f||,
///
/// where u is deliberately unoriented — the sign cancels inside
/// gamma * Delta^f. Falls back to `x_next` unchanged when Delta^f vanishes
/// or the gate rejects.
pub fn gamma_form_correction(
    x_next: &StateVector,
    h: f64,
    pair: &ERKPair,
    f_ref: &StateVector,
    cfg: &GuidanceConfig,
) -> StateVector {
    let dx_norm = pair.dx().norm();
    let df = pair.df();
    let df_norm = df.norm();
    if df_norm == 0.0 || dx_norm < crate::estimators::PAIR_DEGENERACY_REL_TOL * (1.0 + pair.x_high.norm()) {
        return x_next.clone();
    }
    let rho_hat = df_norm / dx_norm;
    if !(cfg.enabled && rho_hat > cfg.w_con) {
        return x_next.clone();
    }
    let beta = cfg.scaling.value(cfg.w_stiff * h * rho_hat);
    let u = &df / df_norm;
    let gamma = beta * f_ref.dot(&u) / df_norm;
    let coef = h * gamma;
    if coef == 0.0 {
        return x_next.clone();
    }
    x_next - df * coef
}

/// Weighted drift combination f_main + (w - 1)(f_main - f_guide). The w = 1
/// short-circuit returns f_main bit-for-bit.
pub fn combine_drift(f_main: &StateVector, f_guide: &StateVector, w: f64) -> StateVector {
    if w == 1.0 {
        return f_main.clone();
    }
    let g = f_main - f_guide;
    f_main + g * (w - 1.0)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ERKProjConfig {
    /// Guidance weight of the underlying drift combination.
    pub w: f64,
    /// Projection sharpness; 0 disables the projection entirely.
    pub w_stiff: f64,
}

/// Stiffness-projected guided drift: the guidance difference
/// g = f_main - f_guide is shrunk toward its component along the stiff
/// direction, eta = exp(-w_stiff * rho_hat) of it surviving off-axis:
///
///   g_hat = eta g + (1 - eta) <g, v_hat> v_hat,
///   f^w   = f_main + (w - 1) g_hat.
///
/// With no usable estimate or w_stiff = 0 this is exactly [`combine_drift`]
/// (same arithmetic path, bit-for-bit).
pub fn erk_proj_drift(
    f_main: &StateVector,
    f_guide: &StateVector,
    est: Option<&StiffnessEstimate>,
    cfg: &ERKProjConfig,
) -> StateVector {
    let usable = cfg.w_stiff != 0.0
        && est.map(|e| e.valid && e.v_hat.is_some()).unwrap_or(false);
    if !usable {
        return combine_drift(f_main, f_guide, cfg.w);
    }
    if cfg.w == 1.0 {
        return f_main.clone();
    }
    let est = est.unwrap();
    let v = est.v_hat.as_ref().unwrap();
    let g = f_main - f_guide;
    let eta = (-cfg.w_stiff * est.rho_hat).exp();
    let g_hat = &g * eta + v * ((1.0 - eta) * g.dot(v));
    f_main + g_hat * (cfg.w - 1.0)
}

/// Linearized second-order local error of a step from (x, sigma_i) to
/// sigma_next, expressed in the drift Jacobian's eigenbasis:
///
///   lte = -h * sum_k alpha(-h lambda_k) <f, v_k> v_k.
///
/// Dense: requires the field to expose its Jacobian (dimension-capped).
pub fn predicted_lte_linearized<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma_i: f64,
    sigma_next: f64,
) -> Result<StateVector> {
    let h = sigma_i - sigma_next;
    let f = field.drift(x, sigma_i);
    let spectrum = dense_spectrum(field, x, sigma_i)?;
    let mut lte = StateVector::zeros(x.len());
    for (lambda, v) in &spectrum {
        lte += v * (alpha(-h * lambda) * f.dot(v));
    }
    Ok(lte * (-h))
}
