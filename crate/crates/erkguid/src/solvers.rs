//! Single-step integrators for the reverse ODE, each exposing its embedded
//! solution/drift pair, plus the fine-substep reference solver.
//!
//! Conventions shared by every solver:
//! - a step integrates [sigma_i, sigma_next] with h = sigma_i - sigma_next > 0;
//! - the final step of a schedule (sigma_next = 0) is Euler-only;
//! - `evals_used` counts drift evaluations actually performed, so callers can
//!   account NFE exactly;
//! - drift evaluations already held by the caller are passed back in instead
//!   of recomputed (this is what keeps the pair-based estimators cost-free).

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ScoreField;
use crate::state::StateVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Euler,
    Heun,
    Dpm2s,
    #[value(name = "deis")]
    #[serde(rename = "deis")]
    DeisAb2,
}

/// Embedded pair: a higher- and a lower-order state with their drift
/// evaluations. For Heun both live at the step's target sigma; the
/// two-stage and multistep solvers pair states from different sigmas, each
/// drift evaluated at its own state's sigma.
#[derive(Debug, Clone)]
pub struct ERKPair {
    pub sigma_high: f64,
    pub sigma_low: f64,
    pub x_high: StateVector,
    pub x_low: StateVector,
    pub f_high: StateVector,
    pub f_low: StateVector,
}

impl ERKPair {
    /// Solution difference Delta^x = x_high - x_low.
    pub fn dx(&self) -> StateVector {
        &self.x_high - &self.x_low
    }

    /// Drift difference Delta^f = f_high - f_low.
    pub fn df(&self) -> StateVector {
        &self.f_high - &self.f_low
    }

    /// Whether both states (and drifts) share one sigma.
    pub fn co_located(&self) -> bool {
        self.sigma_high == self.sigma_low
    }
}

/// Heun pair with its f_high still owed: the drift at the Heun endpoint is
/// not computed inside the step — it is the first evaluation of the next
/// step, supplied by the sampler loop.
#[derive(Debug, Clone)]
pub struct PendingPair {
    pub sigma: f64,
    pub x_high: StateVector,
    pub x_low: StateVector,
    pub f_low: StateVector,
}

impl PendingPair {
    pub fn complete(self, f_high: StateVector) -> ERKPair {
        ERKPair {
            sigma_high: self.sigma,
            sigma_low: self.sigma,
            x_high: self.x_high,
            x_low: self.x_low,
            f_high,
            f_low: self.f_low,
        }
    }
}

/// History entry for the multistep solver.
#[derive(Debug, Clone)]
pub struct PrevStep {
    pub sigma: f64,
    pub x: StateVector,
    pub f: StateVector,
    pub h: f64,
}

/// Outcome of one solver step.
#[derive(Debug)]
pub struct StepResult {
    pub x_next: StateVector,
    /// Pair completed within the step (two-stage/multistep solvers).
    pub pair: Option<ERKPair>,
    /// Pair owed its f_high (Heun); completed by the next step's first eval.
    pub pending: Option<PendingPair>,
    /// Drift at the step's start state, passed through or computed here.
    pub f_start: StateVector,
    pub evals_used: u32,
}

fn take_or_eval<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma: f64,
    cached: Option<StateVector>,
    evals: &mut u32,
) -> StateVector {
    match cached {
        Some(f) => f,
        None => {
            *evals += 1;
            field.drift(x, sigma)
        }
    }
}

/// First-order update x - h f(x, sigma_i).
pub fn euler_step<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma_i: f64,
    sigma_next: f64,
    f_i: Option<StateVector>,
) -> StepResult {
    debug_assert!(sigma_i > sigma_next && sigma_next >= 0.0);
    let mut evals = 0;
    let f = take_or_eval(field, x, sigma_i, f_i, &mut evals);
    let h = sigma_i - sigma_next;
    StepResult {
        x_next: x - &f * h,
        pair: None,
        pending: None,
        f_start: f,
        evals_used: evals,
    }
}

/// Trapezoidal update; leaves behind the pair {Heun state, Euler state} at
/// sigma_next with f_low cached and f_high deferred. Falls back to plain
/// Euler (no pair) when sigma_next = 0.
pub fn heun_step<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma_i: f64,
    sigma_next: f64,
    f_i: Option<StateVector>,
) -> StepResult {
    debug_assert!(sigma_i > sigma_next && sigma_next >= 0.0);
    if sigma_next == 0.0 {
        return euler_step(field, x, sigma_i, sigma_next, f_i);
    }
    let mut evals = 0;
    let f1 = take_or_eval(field, x, sigma_i, f_i, &mut evals);
    let h = sigma_i - sigma_next;
    let x_low = x - &f1 * h;
    let f_low = field.drift(&x_low, sigma_next);
    evals += 1;
    let x_next = x - (&f1 + &f_low) * (0.5 * h);
    StepResult {
        pending: Some(PendingPair {
            sigma: sigma_next,
            x_high: x_next.clone(),
            x_low,
            f_low,
        }),
        x_next,
        pair: None,
        f_start: f1,
        evals_used: evals,
    }
}

/// Two-stage midpoint update with the intermediate sigma at the geometric
/// mean sqrt(sigma_i * sigma_next). Returns the completed pair
/// {x_mid, x_start} with each drift at its own sigma. Requires
/// sigma_next > 0; the sampler substitutes the Euler rule on the final step.
pub fn dpm2s_step<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma_i: f64,
    sigma_next: f64,
) -> StepResult {
    debug_assert!(sigma_i > sigma_next && sigma_next > 0.0);
    let f1 = field.drift(x, sigma_i);
    let sigma_mid = (sigma_i * sigma_next).sqrt();
    let x_mid = x - &f1 * (sigma_i - sigma_mid);
    let f_mid = field.drift(&x_mid, sigma_mid);
    let h = sigma_i - sigma_next;
    let x_next = x - &f_mid * h;
    StepResult {
        x_next,
        pair: Some(ERKPair {
            sigma_high: sigma_mid,
            sigma_low: sigma_i,
            x_high: x_mid,
            x_low: x.clone(),
            f_high: f_mid,
            f_low: f1.clone(),
        }),
        pending: None,
        f_start: f1,
        evals_used: 2,
    }
}

/// Variable-step two-step Adams-Bashforth update
///
///   x_next = x - h [ (1 + h/(2 h_prev)) f(x, sigma_i) - (h/(2 h_prev)) f_prev ].
///
/// With history available the step costs one evaluation and completes the
/// pair {x at sigma_i, previous state at its sigma} from cached drifts.
/// Missing history bootstraps with a Heun step, never fails.
pub fn deis_ab2_step<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma_i: f64,
    sigma_next: f64,
    prev: Option<&PrevStep>,
) -> StepResult {
    debug_assert!(sigma_i > sigma_next && sigma_next >= 0.0);
    let Some(prev) = prev else {
        return heun_step(field, x, sigma_i, sigma_next, None);
    };
    if sigma_next == 0.0 {
        let mut res = euler_step(field, x, sigma_i, sigma_next, None);
        res.pair = Some(ERKPair {
            sigma_high: sigma_i,
            sigma_low: prev.sigma,
            x_high: x.clone(),
            x_low: prev.x.clone(),
            f_high: res.f_start.clone(),
            f_low: prev.f.clone(),
        });
        return res;
    }
    let f_i = field.drift(x, sigma_i);
    let h = sigma_i - sigma_next;
    let c = h / (2.0 * prev.h);
    let x_next = x - (&f_i * (1.0 + c) - &prev.f * c) * h;
    StepResult {
        x_next,
        pair: Some(ERKPair {
            sigma_high: sigma_i,
            sigma_low: prev.sigma,
            x_high: x.clone(),
            x_low: prev.x.clone(),
            f_high: f_i.clone(),
            f_low: prev.f.clone(),
        }),
        pending: None,
        f_start: f_i,
        evals_used: 1,
    }
}

/// Ground-truth proxy: Heun on a uniform subdivision of [sigma_from,
/// sigma_to] (Euler on a terminal sub-interval ending at 0).
pub fn reference_solve<F: ScoreField + ?Sized>(
    field: &F,
    x0: &StateVector,
    sigma_from: f64,
    sigma_to: f64,
    substeps: usize,
) -> Result<StateVector> {
    if substeps < 1 {
        return Err(Error::config("reference solve needs substeps >= 1"));
    }
    if !(sigma_from > sigma_to && sigma_to >= 0.0) {
        return Err(Error::config("reference solve needs sigma_from > sigma_to >= 0"));
    }
    let mut x = x0.clone();
    for k in 0..substeps {
        let a = sigma_from + (sigma_to - sigma_from) * k as f64 / substeps as f64;
        let b = if k + 1 == substeps {
            sigma_to
        } else {
            sigma_from + (sigma_to - sigma_from) * (k + 1) as f64 / substeps as f64
        };
        x = heun_step(field, &x, a, b, None).x_next;
    }
    Ok(x)
}

/// Reference endpoint across a whole schedule: [`reference_solve`] applied
/// per interval (the usual ground truth is substeps = 100).
pub fn reference_trajectory<F: ScoreField + ?Sized>(
    field: &F,
    x0: &StateVector,
    sigmas: &[f64],
    substeps: usize,
) -> Result<StateVector> {
    let mut x = x0.clone();
    for w in sigmas.windows(2) {
        x = reference_solve(field, &x, w[0], w[1], substeps)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result as CrateResult;
    use crate::fields::LinearField;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    /// f(x; sigma) = c, constant everywhere (multistep coefficient checks).
    struct ConstField(StateVector);

    impl ScoreField for ConstField {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn score(&self, _x: &StateVector, sigma: f64) -> StateVector {
            &self.0 * (-1.0 / sigma)
        }
        fn jvp(&self, _x: &StateVector, _sigma: f64, v: &StateVector) -> StateVector {
            StateVector::zeros(v.len())
        }
        fn jacobian(&self, _x: &StateVector, _sigma: f64) -> CrateResult<DMatrix<f64>> {
            Ok(DMatrix::zeros(self.dim(), self.dim()))
        }
        fn describe(&self) -> String {
            "const".into()
        }
        fn drift(&self, _x: &StateVector, _sigma: f64) -> StateVector {
            self.0.clone()
        }
    }

    fn scalar_field() -> LinearField {
        LinearField::diagonal(&[1.0])
    }

    fn one(v: f64) -> StateVector {
        StateVector::from_column_slice(&[v])
    }

    #[test]
    fn euler_scalar_update() {
        let f = scalar_field();
        let res = euler_step(&f, &one(1.0), 1.0, 0.9, None);
        assert_eq!(res.x_next[0], 0.9);
        assert_eq!(res.evals_used, 1);
        // Supplying the cached drift costs nothing.
        let res2 = euler_step(&f, &one(1.0), 1.0, 0.9, Some(one(1.0)));
        assert_eq!(res2.evals_used, 0);
        assert_eq!(res2.x_next[0], 0.9);
    }

    #[test]
    fn heun_scalar_update_and_pair() {
        let f = scalar_field();
        let res = heun_step(&f, &one(1.0), 1.0, 0.9, None);
        assert_eq!(res.evals_used, 2);
        assert!((res.x_next[0] - 0.905).abs() < 1e-15);
        let pending = res.pending.unwrap();
        assert_eq!(pending.x_low[0], 0.9);
        assert_eq!(pending.sigma, 0.9);
        // Completing with the next evaluation yields the full pair.
        let pair = pending.complete(f.drift(&res.x_next, 0.9));
        assert!(pair.co_located());
        assert!((pair.dx()[0] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn heun_final_step_is_euler_only() {
        let f = scalar_field();
        let res = heun_step(&f, &one(1.0), 0.5, 0.0, None);
        assert_eq!(res.evals_used, 1);
        assert_eq!(res.x_next[0], 0.5);
        assert!(res.pending.is_none() && res.pair.is_none());
    }

    #[test]
    fn zero_drift_leaves_state_unchanged() {
        let f = LinearField::diagonal(&[0.0, 0.0]);
        let x = StateVector::from_column_slice(&[0.3, -0.7]);
        assert_eq!(euler_step(&f, &x, 2.0, 1.0, None).x_next, x);
        assert_eq!(heun_step(&f, &x, 2.0, 1.0, None).x_next, x);
        let r = dpm2s_step(&f, &x, 2.0, 1.0);
        assert_eq!(r.x_next, x);
        assert_eq!(r.pair.as_ref().unwrap().x_high, x);
    }

    #[test]
    fn dpm2s_midpoint_is_geometric_mean() {
        let f = scalar_field();
        let res = dpm2s_step(&f, &one(1.0), 4.0, 1.0);
        let pair = res.pair.unwrap();
        assert_eq!(pair.sigma_high, 2.0);
        assert_eq!(pair.sigma_low, 4.0);
        assert!(!pair.co_located());
        assert_eq!(res.evals_used, 2);
    }

    #[test]
    fn deis_constant_drift_reduces_to_euler() {
        let c = ConstField(one(2.0));
        let prev = PrevStep { sigma: 1.2, x: one(0.0), f: one(2.0), h: 0.1 };
        let res = deis_ab2_step(&c, &one(1.0), 1.1, 1.0, Some(&prev));
        // (1 + 1/2) f - (1/2) f = f for equal steps and constant drift.
        assert!((res.x_next[0] - (1.0 - 0.1 * 2.0)).abs() < 1e-15);
        assert_eq!(res.evals_used, 1);
        let pair = res.pair.unwrap();
        assert_eq!(pair.sigma_low, 1.2);
        assert!(!pair.co_located());
    }

    #[test]
    fn deis_matches_textbook_ab2_on_linear_field() {
        // Equal steps h: x_{n+1} = x_n - h (3/2 f_n - 1/2 f_{n-1}), f = x.
        let f = scalar_field();
        let h = 0.05;
        let mut sigma = 2.0;
        let mut hist: Option<PrevStep> = None;
        let mut x = one(1.0);
        let mut by_hand = 1.0f64;
        let mut f_prev_hand = 1.0f64;
        let mut started = false;
        for _ in 0..6 {
            let res = deis_ab2_step(&f, &x, sigma, sigma - h, hist.as_ref());
            hist = Some(PrevStep { sigma, x: x.clone(), f: res.f_start.clone(), h });
            if started {
                let fi = by_hand;
                by_hand -= h * (1.5 * fi - 0.5 * f_prev_hand);
                f_prev_hand = fi;
                assert!((res.x_next[0] - by_hand).abs() <= 1e-14, "{} vs {by_hand}", res.x_next[0]);
            } else {
                // Bootstrap step is Heun; seed the hand recursion from it.
                f_prev_hand = by_hand;
                by_hand = res.x_next[0];
                started = true;
            }
            x = res.x_next;
            sigma -= h;
        }
    }

    #[test]
    fn deis_bootstraps_without_history() {
        let f = scalar_field();
        let res = deis_ab2_step(&f, &one(1.0), 1.0, 0.9, None);
        assert!((res.x_next[0] - 0.905).abs() < 1e-15);
        assert_eq!(res.evals_used, 2);
    }

    #[test]
    fn reference_solve_degenerate_subdivision_is_heun() {
        let f = scalar_field();
        let a = reference_solve(&f, &one(1.0), 1.0, 0.9, 1).unwrap();
        let b = heun_step(&f, &one(1.0), 1.0, 0.9, None).x_next;
        assert_eq!(a, b);
    }

    #[test]
    fn reference_solve_linear_matches_exponential() {
        let f = scalar_field();
        let x = reference_solve(&f, &one(1.0), 1.0, 0.5, 100).unwrap();
        assert!((x[0] - (-0.5f64).exp()).abs() < 2e-6);
    }

    #[test]
    fn reference_refinement_contracts() {
        let f = scalar_field();
        let e1 = reference_solve(&f, &one(1.0), 2.0, 1.0, 25).unwrap();
        let e2 = reference_solve(&f, &one(1.0), 2.0, 1.0, 50).unwrap();
        let e3 = reference_solve(&f, &one(1.0), 2.0, 1.0, 100).unwrap();
        let d12 = (&e1 - &e2).norm();
        let d23 = (&e2 - &e3).norm();
        assert!(d23 < d12 / 3.0);
    }

    proptest! {
        /// Delta^x = (h/2)(f(x, sigma_i) - f(x_low, sigma_next)) for the Heun
        /// pair (algebraic identity of the two updates).
        #[test]
        fn heun_pair_identity(
            x0 in -2.0f64..2.0,
            y0 in -2.0f64..2.0,
            sigma in 0.2f64..3.0,
            frac in 0.05f64..0.9,
        ) {
            let f = LinearField::new(DMatrix::from_row_slice(2, 2, &[
                -1.3, 0.4,
                 0.4, -0.2,
            ])).unwrap();
            let x = StateVector::from_column_slice(&[x0, y0]);
            let sigma_next = sigma * (1.0 - frac);
            let h = sigma - sigma_next;
            let res = heun_step(&f, &x, sigma, sigma_next, None);
            let pending = res.pending.unwrap();
            let f_high = f.drift(&pending.x_high, sigma_next);
            let pair = pending.complete(f_high);
            let lhs = pair.dx();
            let rhs = (&res.f_start - &pair.f_low) * (0.5 * h);
            prop_assert!((&lhs - &rhs).norm() <= 1e-13 * (1.0 + lhs.norm()));
        }
    }
}
