//! Noise schedule: strictly decreasing sigma levels with a terminal zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered noise levels sigma_0 > ... > sigma_N with sigma_N = 0 appended by
/// the builder. Step i integrates [sigmas[i], sigmas[i+1]].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub sigmas: Vec<f64>,
}

impl Schedule {
    /// Number of integration steps (intervals).
    pub fn n_steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    /// Step size h_i = sigma_i - sigma_{i+1}.
    pub fn step_size(&self, i: usize) -> f64 {
        self.sigmas[i] - self.sigmas[i + 1]
    }

    /// Validate strict monotone decrease and a nonnegative tail.
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.len() < 2 {
            return Err(Error::config("schedule needs at least two levels"));
        }
        for w in self.sigmas.windows(2) {
            if !(w[0] > w[1]) {
                return Err(Error::config(format!(
                    "schedule not strictly decreasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if self.sigmas[self.sigmas.len() - 1] < 0.0 {
            return Err(Error::config("schedule tail below zero"));
        }
        Ok(())
    }

    /// Build from an explicit level list (used by uniform study grids).
    pub fn from_levels(sigmas: Vec<f64>) -> Result<Self> {
        let s = Schedule { sigmas };
        s.validate()?;
        Ok(s)
    }
}

/// Power-interpolated schedule: sigma_i = (smax^(1/rho) + t_i (smin^(1/rho) -
/// smax^(1/rho)))^rho for t_i = i/(N-1), then a terminal 0 appended. The final
/// interval [sigma_min, 0] is integrated with the Euler-only rule.
pub fn build_edm_schedule(
    n_steps: usize,
    sigma_min: f64,
    sigma_max: f64,
    rho_exp: f64,
) -> Result<Schedule> {
    if n_steps < 2 {
        return Err(Error::config("n_steps must be >= 2"));
    }
    if !(sigma_min > 0.0 && sigma_max > sigma_min) {
        return Err(Error::config("need 0 < sigma_min < sigma_max"));
    }
    if !(rho_exp > 0.0) {
        return Err(Error::config("rho_exp must be > 0"));
    }
    let inv = 1.0 / rho_exp;
    let a = sigma_max.powf(inv);
    let b = sigma_min.powf(inv);
    let mut sigmas = Vec::with_capacity(n_steps + 1);
    for i in 0..n_steps {
        let t = i as f64 / (n_steps - 1) as f64;
        sigmas.push((a + t * (b - a)).powf(rho_exp));
    }
    // Exact endpoints regardless of powf rounding.
    sigmas[0] = sigma_max;
    sigmas[n_steps - 1] = sigma_min;
    sigmas.push(0.0);
    let s = Schedule { sigmas };
    s.validate()?;
    Ok(s)
}

/// Midpoint of [sigma_i, sigma_next] on the same power-interpolated axis,
/// used by the step-halving baseline.
pub fn edm_midpoint(sigma_i: f64, sigma_next: f64, rho_exp: f64) -> f64 {
    let inv = 1.0 / rho_exp;
    (0.5 * (sigma_i.powf(inv) + sigma_next.powf(inv))).powf(rho_exp)
}

/// Uniform grid from sigma_from down to sigma_to (used by convergence
/// studies; no terminal zero is appended).
pub fn uniform_schedule(sigma_from: f64, sigma_to: f64, n_steps: usize) -> Result<Schedule> {
    if n_steps < 1 || !(sigma_from > sigma_to) {
        return Err(Error::config("uniform schedule needs sigma_from > sigma_to, n >= 1"));
    }
    let h = (sigma_from - sigma_to) / n_steps as f64;
    let mut sigmas: Vec<f64> = (0..=n_steps).map(|i| sigma_from - i as f64 * h).collect();
    sigmas[n_steps] = sigma_to;
    Schedule::from_levels(sigmas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_step_schedule_hits_endpoints() {
        let s = build_edm_schedule(2, 0.002, 80.0, 7.0).unwrap();
        assert_eq!(s.sigmas, vec![80.0, 0.002, 0.0]);
    }

    #[test]
    fn default_schedule_levels() {
        let s = build_edm_schedule(32, 0.002, 80.0, 7.0).unwrap();
        assert_eq!(s.sigmas.len(), 33);
        assert_eq!(s.sigmas[0], 80.0);
        assert_eq!(s.sigmas[31], 0.002);
        assert_eq!(s.sigmas[32], 0.0);
        // Cross-checked against an independent extended-precision evaluation
        // of the closed form.
        assert!((s.sigmas[10] - 10.521243863429762).abs() < 1e-12);
        assert!((s.sigmas[29] - 0.008453048200637533).abs() < 1e-16);
        assert!((s.sigmas[30] - 0.0042668308475997752).abs() < 1e-16);
    }

    #[test]
    fn midpoint_sits_between() {
        let m = edm_midpoint(0.008453048200637533, 0.0042668308475997752, 7.0);
        assert!(m < 0.008453048200637533 && m > 0.0042668308475997752);
        // Geometric-mean-free sanity: midpoint of the interpolation axis.
        let m2 = edm_midpoint(80.0, 0.002, 7.0);
        let s3 = build_edm_schedule(3, 0.002, 80.0, 7.0).unwrap();
        assert!((m2 - s3.sigmas[1]).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_edm_schedule(1, 0.002, 80.0, 7.0).is_err());
        assert!(build_edm_schedule(8, 80.0, 0.002, 7.0).is_err());
        assert!(build_edm_schedule(8, 0.002, 80.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn schedule_strictly_decreasing(
            n in 2usize..80,
            smin in 1e-4f64..0.5,
            span in 1.5f64..1e4,
            rho in 0.5f64..12.0,
        ) {
            let smax = smin * span;
            let s = build_edm_schedule(n, smin, smax, rho).unwrap();
            prop_assert!(s.validate().is_ok());
            prop_assert_eq!(s.sigmas.len(), n + 1);
            prop_assert_eq!(s.sigmas[0], smax);
            prop_assert_eq!(s.sigmas[n - 1], smin);
            prop_assert_eq!(s.sigmas[n], 0.0);
        }

        #[test]
        fn midpoint_is_interior(
            lo in 1e-4f64..1.0,
            span in 1.01f64..100.0,
            rho in 0.5f64..12.0,
        ) {
            let hi = lo * span;
            let m = edm_midpoint(hi, lo, rho);
            prop_assert!(m > lo && m < hi);
        }
    }
}
