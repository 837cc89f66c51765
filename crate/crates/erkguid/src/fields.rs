//! Analytic score fields: perturbed Gaussian mixtures with closed-form score,
//! drift, Jacobian and Jacobian-vector products, plus the composite
//! guided/degraded/conditional builders and a linear fixture for estimator
//! oracles.
//!
//! For an isotropic mixture, convolving with N(0, sigma^2 I) is again a
//! mixture with per-component variance t_j = s_j^2 + sigma^2, so everything
//! below is exact arithmetic on responsibilities — no autodiff, no
//! quadrature.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, label};
use crate::state::StateVector;

/// Hard cap for any operation that materializes a dense d x d matrix.
pub const DENSE_DIM_CAP: usize = 256;

/// Analytic description of a perturbed density p(x; sigma).
///
/// `drift` is provided once for every implementor as the exact scalar
/// multiply -sigma * score (and the zero vector at sigma = 0, where the
/// perturbed score stays finite but the multiplier vanishes).
///
/// `Send + Sync` so trajectory batches can share one field across workers.
pub trait ScoreField: Send + Sync {
    fn dim(&self) -> usize;

    /// Gradient of log p(x; sigma).
    fn score(&self, x: &StateVector, sigma: f64) -> StateVector;

    /// Drift Jacobian times v, computed matrix-free.
    fn jvp(&self, x: &StateVector, sigma: f64, v: &StateVector) -> StateVector;

    /// Dense drift Jacobian (symmetric). Errors above [`DENSE_DIM_CAP`].
    fn jacobian(&self, x: &StateVector, sigma: f64) -> Result<DMatrix<f64>>;

    /// Canonical description string; hashed into run manifests.
    fn describe(&self) -> String;

    /// ODE drift f(x; sigma) = -sigma * score(x; sigma).
    fn drift(&self, x: &StateVector, sigma: f64) -> StateVector {
        if sigma == 0.0 {
            StateVector::zeros(self.dim())
        } else {
            self.score(x, sigma) * (-sigma)
        }
    }
}

impl<F: ScoreField + ?Sized> ScoreField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &StateVector, sigma: f64) -> StateVector {
        (**self).score(x, sigma)
    }
    fn jvp(&self, x: &StateVector, sigma: f64, v: &StateVector) -> StateVector {
        (**self).jvp(x, sigma, v)
    }
    fn jacobian(&self, x: &StateVector, sigma: f64) -> Result<DMatrix<f64>> {
        (**self).jacobian(x, sigma)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
    fn drift(&self, x: &StateVector, sigma: f64) -> StateVector {
        (**self).drift(x, sigma)
    }
}

/// One isotropic mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
    /// Class label for conditional sub-mixtures (branch id for the tree).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
}

/// Isotropic Gaussian mixture; weights sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub components: Vec<MixtureComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let gm = GaussianMixture { components };
        gm.validate()?;
        Ok(gm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::config("mixture needs at least one component"));
        }
        let d = self.components[0].mean.len();
        if d == 0 {
            return Err(Error::config("mixture dimension must be >= 1"));
        }
        let mut wsum = 0.0;
        for c in &self.components {
            if c.mean.len() != d {
                return Err(Error::config("mixture means disagree on dimension"));
            }
            if !(c.std > 0.0) || !c.std.is_finite() {
                return Err(Error::config("component std must be positive and finite"));
            }
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::config("component weight must be positive and finite"));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::config("component mean must be finite"));
            }
            wsum += c.weight;
        }
        if (wsum - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("weights sum to {wsum}, expected 1")));
        }
        Ok(())
    }

    /// Log-density of the sigma-perturbed mixture.
    pub fn log_density(&self, x: &StateVector, sigma: f64) -> f64 {
        let (lse, _) = self.log_terms(x, sigma);
        lse
    }

    /// Per-component log terms ll_j and their log-sum-exp.
    ///
    /// ll_j = ln w_j - (d/2) ln(2 pi t_j) - |x - mu_j|^2 / (2 t_j) with
    /// t_j = s_j^2 + sigma^2.
    fn log_terms(&self, x: &StateVector, sigma: f64) -> (f64, Vec<f64>) {
        let d = self.dim() as f64;
        let ll: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let t = c.std * c.std + sigma * sigma;
                let q: f64 = c
                    .mean
                    .iter()
                    .zip(x.iter())
                    .map(|(m, xi)| (m - xi) * (m - xi))
                    .sum();
                c.weight.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * t).ln() - q / (2.0 * t)
            })
            .collect();
        let m = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + ll.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        (lse, ll)
    }

    /// Posterior responsibilities r_j(x; sigma), always a valid distribution.
    fn responsibilities(&self, x: &StateVector, sigma: f64) -> Vec<f64> {
        let (_, ll) = self.log_terms(x, sigma);
        let m = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut r: Vec<f64> = ll.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = r.iter().sum();
        for v in &mut r {
            *v /= s;
        }
        r
    }
}

impl ScoreField for GaussianMixture {
    fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// score(x) = sum_j r_j (mu_j - x) / t_j.
    fn score(&self, x: &StateVector, sigma: f64) -> StateVector {
        let r = self.responsibilities(x, sigma);
        let mut s = StateVector::zeros(self.dim());
        for (c, rj) in self.components.iter().zip(r.iter()) {
            let t = c.std * c.std + sigma * sigma;
            for (k, m) in c.mean.iter().enumerate() {
                s[k] += rj * (m - x[k]) / t;
            }
        }
        s
    }

    /// J v = sigma [ (sum r_j/t_j) v + s (s.v) - sum r_j g_j (g_j.v) ] with
    /// g_j = (mu_j - x)/t_j and s the mixture score.
    fn jvp(&self, x: &StateVector, sigma: f64, v: &StateVector) -> StateVector {
        let r = self.responsibilities(x, sigma);
        let d = self.dim();
        let mut s = StateVector::zeros(d);
        let mut acc = StateVector::zeros(d);
        let mut rt = 0.0;
        for (c, rj) in self.components.iter().zip(r.iter()) {
            let t = c.std * c.std + sigma * sigma;
            rt += rj / t;
            let mut gv = 0.0;
            for (k, m) in c.mean.iter().enumerate() {
                gv += (m - x[k]) / t * v[k];
            }
            for (k, m) in c.mean.iter().enumerate() {
                let g = (m - x[k]) / t;
                s[k] += rj * g;
                acc[k] += rj * g * gv;
            }
        }
        let sv = s.dot(v);
        let mut out = StateVector::zeros(d);
        for k in 0..d {
            out[k] = sigma * (rt * v[k] + s[k] * sv - acc[k]);
        }
        out
    }

    /// J = sigma [ (sum r_j/t_j) I + s s^T - sum r_j g_j g_j^T ].
    fn jacobian(&self, x: &StateVector, sigma: f64) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if d > DENSE_DIM_CAP {
            return Err(Error::capability(format!(
                "dense Jacobian capped at d <= {DENSE_DIM_CAP}, got {d}"
            )));
        }
        let r = self.responsibilities(x, sigma);
        let mut s = StateVector::zeros(d);
        let mut gg = DMatrix::<f64>::zeros(d, d);
        let mut rt = 0.0;
        for (c, rj) in self.components.iter().zip(r.iter()) {
            let t = c.std * c.std + sigma * sigma;
            rt += rj / t;
            let g: Vec<f64> = c
                .mean
                .iter()
                .zip(x.iter())
                .map(|(m, xi)| (m - xi) / t)
                .collect();
            for a in 0..d {
                s[a] += rj * g[a];
                for b in 0..d {
                    gg[(a, b)] += rj * g[a] * g[b];
                }
            }
        }
        let mut j = DMatrix::<f64>::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                let eye = if a == b { rt } else { 0.0 };
                j[(a, b)] = sigma * (eye + s[a] * s[b] - gg[(a, b)]);
            }
        }
        Ok(j)
    }

    fn describe(&self) -> String {
        serde_json::to_string(self).expect("mixture serializes")
    }
}

/// Tree-shaped 2D mixture: a trunk from (0,0) to (0,1) and `branch_count`
/// unit-length branches leaving the junction (0,1) at angles spread evenly
/// over [-branch_angle_deg, +branch_angle_deg] about the trunk direction.
/// Modes sit at the arc-centers (i + 1/2)/m of each segment; weights are
/// equal; branch components carry their 0-based branch id as label.
pub fn build_tree_gmm(
    branch_count: usize,
    modes_per_branch: usize,
    mode_std: f64,
    branch_angle_deg: f64,
) -> Result<GaussianMixture> {
    if branch_count < 2 || modes_per_branch < 2 {
        return Err(Error::config("tree needs >= 2 branches and >= 2 modes per branch"));
    }
    if !(mode_std > 0.0) {
        return Err(Error::config("mode_std must be > 0"));
    }
    let m = modes_per_branch;
    let k = m * (branch_count + 1);
    let w = 1.0 / k as f64;
    let mut components = Vec::with_capacity(k);
    for i in 0..m {
        let t = (i as f64 + 0.5) / m as f64;
        components.push(MixtureComponent {
            weight: w,
            mean: vec![0.0, t],
            std: mode_std,
            label: None,
        });
    }
    for b in 0..branch_count {
        let a_deg = -branch_angle_deg
            + 2.0 * branch_angle_deg * b as f64 / (branch_count - 1) as f64;
        let a = a_deg.to_radians();
        let (dx, dy) = (a.sin(), a.cos());
        for i in 0..m {
            let t = (i as f64 + 0.5) / m as f64;
            components.push(MixtureComponent {
                weight: w,
                mean: vec![t * dx, 1.0 + t * dy],
                std: mode_std,
                label: Some(b as u32),
            });
        }
    }
    GaussianMixture::new(components)
}

/// Weaker copy of a mixture: means jittered by N(0, mean_jitter^2) draws from
/// a stream keyed by `seed`, stds multiplied by `std_inflation`.
pub fn build_degraded_field(
    gm: &GaussianMixture,
    mean_jitter: f64,
    std_inflation: f64,
    seed: u64,
) -> Result<GaussianMixture> {
    if !(std_inflation >= 1.0) {
        return Err(Error::config("std_inflation must be >= 1"));
    }
    if !(mean_jitter >= 0.0) {
        return Err(Error::config("mean_jitter must be >= 0"));
    }
    let mut rng = rng::stream(rng::derive_key(&[seed, label::DEGRADE]));
    let components = gm
        .components
        .iter()
        .map(|c| {
            let mean = c
                .mean
                .iter()
                .map(|m| m + mean_jitter * rng.sample::<f64, _>(StandardNormal))
                .collect();
            MixtureComponent {
                weight: c.weight,
                mean,
                std: c.std * std_inflation,
                label: c.label,
            }
        })
        .collect();
    GaussianMixture::new(components)
}

/// Renormalized sub-mixture of the components carrying `class_id`.
pub fn conditional_field(gm: &GaussianMixture, class_id: u32) -> Result<GaussianMixture> {
    let selected: Vec<MixtureComponent> = gm
        .components
        .iter()
        .filter(|c| c.label == Some(class_id))
        .cloned()
        .collect();
    if selected.is_empty() {
        return Err(Error::config(format!("no components carry class {class_id}")));
    }
    let wsum: f64 = selected.iter().map(|c| c.weight).sum();
    let components = selected
        .into_iter()
        .map(|mut c| {
            c.weight /= wsum;
            c
        })
        .collect();
    GaussianMixture::new(components)
}

/// Model-guided field: f^w = f_main + (w - 1)(f_main - f_guiding), combined
/// at the score level so the drift identity holds bit-level. At w = 1 the
/// main field's values are returned as-is.
#[derive(Debug, Clone)]
pub struct GuidedField<M, G> {
    pub main: M,
    pub guiding: G,
    pub w: f64,
}

impl<M: ScoreField, G: ScoreField> GuidedField<M, G> {
    pub fn new(main: M, guiding: G, w: f64) -> Result<Self> {
        if main.dim() != guiding.dim() {
            return Err(Error::config("guided fields disagree on dimension"));
        }
        Ok(GuidedField { main, guiding, w })
    }
}

impl<M: ScoreField, G: ScoreField> ScoreField for GuidedField<M, G> {
    fn dim(&self) -> usize {
        self.main.dim()
    }

    fn score(&self, x: &StateVector, sigma: f64) -> StateVector {
        let s_m = self.main.score(x, sigma);
        if self.w == 1.0 {
            return s_m;
        }
        let s_g = self.guiding.score(x, sigma);
        &s_m + (&s_m - s_g) * (self.w - 1.0)
    }

    fn jvp(&self, x: &StateVector, sigma: f64, v: &StateVector) -> StateVector {
        let j_m = self.main.jvp(x, sigma, v);
        if self.w == 1.0 {
            return j_m;
        }
        let j_g = self.guiding.jvp(x, sigma, v);
        &j_m + (&j_m - j_g) * (self.w - 1.0)
    }

    /// J^w = J_main + (w - 1)(J_main - J_guiding).
    fn jacobian(&self, x: &StateVector, sigma: f64) -> Result<DMatrix<f64>> {
        let j_m = self.main.jacobian(x, sigma)?;
        if self.w == 1.0 {
            return Ok(j_m);
        }
        let j_g = self.guiding.jacobian(x, sigma)?;
        Ok(&j_m + (&j_m - j_g) * (self.w - 1.0))
    }

    fn describe(&self) -> String {
        format!(
            "{{\"guided\":{{\"w\":{},\"main\":{},\"guiding\":{}}}}}",
            self.w,
            self.main.describe(),
            self.guiding.describe()
        )
    }
}

/// Linear-drift fixture f(x; sigma) = A x with A symmetric, constant in
/// sigma. Makes the pair-based stiffness estimate exact, which is what the
/// estimator oracle tests lean on. Not a probability density; `drift` is
/// overridden to keep f = A x exact at every sigma.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub a: DMatrix<f64>,
}

impl LinearField {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::config("linear fixture matrix must be square"));
        }
        Ok(LinearField { a })
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        LinearField {
            a: DMatrix::from_diagonal(&DVector::from_column_slice(entries)),
        }
    }
}

impl ScoreField for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Consistent with drift = -sigma * score; only meaningful for sigma > 0.
    fn score(&self, x: &StateVector, sigma: f64) -> StateVector {
        &self.a * x * (-1.0 / sigma)
    }

    fn jvp(&self, _x: &StateVector, _sigma: f64, v: &StateVector) -> StateVector {
        &self.a * v
    }

    fn jacobian(&self, _x: &StateVector, _sigma: f64) -> Result<DMatrix<f64>> {
        Ok(self.a.clone())
    }

    fn describe(&self) -> String {
        format!("{{\"linear\":{:?}}}", self.a.as_slice())
    }

    fn drift(&self, x: &StateVector, _sigma: f64) -> StateVector {
        &self.a * x
    }
}

/// FNV-1a hash of a field's canonical description, recorded in manifests.
pub fn field_hash<F: ScoreField + ?Sized>(field: &F) -> u64 {
    rng::fnv1a64(field.describe().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_gaussian() -> GaussianMixture {
        GaussianMixture::new(vec![MixtureComponent {
            weight: 1.0,
            mean: vec![0.0, 0.0],
            std: 1.0,
            label: None,
        }])
        .unwrap()
    }

    fn tree() -> GaussianMixture {
        build_tree_gmm(2, 8, 0.05, 50.0).unwrap()
    }

    #[test]
    fn single_gaussian_score_is_closed_form() {
        let gm = single_gaussian();
        let x = StateVector::from_column_slice(&[2.0, 0.0]);
        let s = gm.score(&x, 1.0);
        // N(0, (s^2 + sigma^2) I) = N(0, 2I): score = -x/2.
        assert_eq!(s[0], -1.0);
        assert_eq!(s[1], 0.0);
        let f = gm.drift(&x, 1.0);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], -0.0);
    }

    #[test]
    fn symmetric_two_mode_score_cancels() {
        let gm = GaussianMixture::new(vec![
            MixtureComponent { weight: 0.5, mean: vec![1.0, 0.0], std: 0.3, label: None },
            MixtureComponent { weight: 0.5, mean: vec![-1.0, 0.0], std: 0.3, label: None },
        ])
        .unwrap();
        let s = gm.score(&StateVector::zeros(2), 0.7);
        assert!(s.norm() < 1e-15);
    }

    #[test]
    fn drift_vanishes_at_sigma_zero() {
        let gm = tree();
        let x = StateVector::from_column_slice(&[0.3, 1.1]);
        let f = gm.drift(&x, 0.0);
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_gaussian_jacobian_is_half_identity() {
        let gm = single_gaussian();
        let x = StateVector::from_column_slice(&[0.4, -0.2]);
        let j = gm.jacobian(&x, 1.0).unwrap();
        // t = 2, J = sigma/t I + rank terms that cancel for one component.
        for a in 0..2 {
            for b in 0..2 {
                let want = if a == b { 0.5 } else { 0.0 };
                assert!((j[(a, b)] - want).abs() < 1e-12, "J[({a},{b})] = {}", j[(a, b)]);
            }
        }
        let v = StateVector::from_column_slice(&[3.0, -1.0]);
        let jv = gm.jvp(&x, 1.0, &v);
        assert!((jv - v * 0.5).norm() < 1e-12);
    }

    #[test]
    fn tree_counts_and_symmetry() {
        let gm = tree();
        assert_eq!(gm.components.len(), 24);
        assert!(gm.components.iter().all(|c| (c.weight - 1.0 / 24.0).abs() < 1e-15));
        assert_eq!(gm.components.iter().filter(|c| c.label.is_none()).count(), 8);
        // Mirror symmetry: for every mode (x, y) the mode (-x, y) exists.
        for c in &gm.components {
            let mirrored = gm
                .components
                .iter()
                .any(|o| (o.mean[0] + c.mean[0]).abs() < 1e-12 && (o.mean[1] - c.mean[1]).abs() < 1e-12);
            assert!(mirrored);
        }
    }

    #[test]
    fn conditional_selects_one_branch() {
        let gm = tree();
        let cond = conditional_field(&gm, 1).unwrap();
        assert_eq!(cond.components.len(), 8);
        assert!(cond.components.iter().all(|c| (c.weight - 0.125).abs() < 1e-15));
        assert!(conditional_field(&gm, 9).is_err());

        // Deep inside branch 1 the other components carry ~zero
        // responsibility, so conditional and full scores agree.
        let deep = {
            let c = &cond.components[6];
            StateVector::from_column_slice(&c.mean)
        };
        let x = &deep + StateVector::from_column_slice(&[0.01, -0.01]);
        let s_full = gm.score(&x, 0.02);
        let s_cond = cond.score(&x, 0.02);
        assert!((&s_full - &s_cond).norm() <= 1e-6 * (1.0 + s_full.norm()));
    }

    #[test]
    fn degraded_field_identity_and_inflation() {
        let gm = tree();
        let same = build_degraded_field(&gm, 0.0, 1.0, 9).unwrap();
        assert_eq!(same, gm);
        let inflated = build_degraded_field(&gm, 0.0, 2.0, 9).unwrap();
        assert!(inflated
            .components
            .iter()
            .zip(gm.components.iter())
            .all(|(a, b)| a.std == 2.0 * b.std && a.mean == b.mean));
        let j1 = build_degraded_field(&gm, 0.1, 1.5, 9).unwrap();
        let j2 = build_degraded_field(&gm, 0.1, 1.5, 9).unwrap();
        assert_eq!(j1, j2);
        assert_ne!(j1, gm);
    }

    #[test]
    fn mixture_json_round_trip() {
        let gm = tree();
        let text = serde_json::to_string(&gm).unwrap();
        let back: GaussianMixture = serde_json::from_str(&text).unwrap();
        assert_eq!(back, gm);
        assert_eq!(field_hash(&gm), field_hash(&back));
    }

    #[test]
    fn guided_field_w1_returns_main() {
        let gm = tree();
        let weak = build_degraded_field(&gm, 0.2, 1.5, 1).unwrap();
        let guided = GuidedField::new(&gm, &weak, 1.0).unwrap();
        let x = StateVector::from_column_slice(&[0.2, 0.8]);
        assert_eq!(guided.drift(&x, 0.5), gm.drift(&x, 0.5));
        assert_eq!(guided.score(&x, 0.5), gm.score(&x, 0.5));
    }

    #[test]
    fn guided_field_affine_in_w() {
        let gm = tree();
        let weak = build_degraded_field(&gm, 0.2, 1.5, 1).unwrap();
        let x = StateVector::from_column_slice(&[-0.4, 1.2]);
        let sigma = 0.8;
        let f1 = gm.drift(&x, sigma);
        let g = &f1 - build_degraded_field(&gm, 0.2, 1.5, 1).unwrap().drift(&x, sigma);
        for w in [0.0, 0.5, 2.0, 4.0] {
            let guided = GuidedField::new(&gm, &weak, w).unwrap();
            let fw = guided.drift(&x, sigma);
            let expect = &f1 + &g * (w - 1.0);
            assert!((&fw - &expect).norm() <= 1e-12 * (1.0 + expect.norm()));
        }
    }

    /// Central-difference oracles for score, Jacobian and JVP.
    fn fd_checks(gm: &GaussianMixture, x: &StateVector, sigma: f64) {
        let d = gm.dim();
        let step = 1e-5 * (1.0 + x.norm());
        // score vs FD of log-density
        let s = gm.score(x, sigma);
        for k in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            let fd = (gm.log_density(&xp, sigma) - gm.log_density(&xm, sigma)) / (2.0 * step);
            assert!(
                (fd - s[k]).abs() <= 1e-6 * (1.0 + s[k].abs()),
                "score fd mismatch: {fd} vs {}",
                s[k]
            );
        }
        // Jacobian vs FD of drift
        let j = gm.jacobian(x, sigma).unwrap();
        for k in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            let col = (gm.drift(&xp, sigma) - gm.drift(&xm, sigma)) / (2.0 * step);
            for a in 0..d {
                assert!(
                    (col[a] - j[(a, k)]).abs() <= 1e-5 * (1.0 + j[(a, k)].abs()),
                    "jacobian fd mismatch at ({a},{k})"
                );
            }
        }
        // symmetry and JVP consistency
        assert!((&j - j.transpose()).norm() <= 1e-10);
        let v = StateVector::from_column_slice(&(0..d).map(|i| 0.3 + i as f64).collect::<Vec<_>>());
        let jv = gm.jvp(x, sigma, &v);
        assert!((&j * &v - &jv).norm() <= 1e-10 * (1.0 + jv.norm()));
    }

    #[test]
    fn tree_matches_finite_differences() {
        let gm = tree();
        for (x, sigma) in [
            ([0.3, 1.2], 0.5),
            ([-0.6, 0.4], 0.05),
            ([0.05, 1.55], 0.008453048200637533),
            ([1.5, -0.5], 2.0),
        ] {
            fd_checks(&gm, &StateVector::from_column_slice(&x), sigma);
        }
    }

    proptest! {
        #[test]
        fn fd_consistency_random_points(
            xs in prop::array::uniform2(-1.5f64..1.5),
            sigma in 0.01f64..4.0,
        ) {
            let gm = tree();
            fd_checks(&gm, &StateVector::from_column_slice(&xs), sigma);
        }

        #[test]
        fn jvp_linear_in_v(
            xs in prop::array::uniform2(-1.5f64..1.5),
            vs in prop::array::uniform2(-2.0f64..2.0),
            sigma in 0.01f64..4.0,
        ) {
            let gm = tree();
            let x = StateVector::from_column_slice(&xs);
            let v = StateVector::from_column_slice(&vs);
            let jv = gm.jvp(&x, sigma, &v);
            let j2v = gm.jvp(&x, sigma, &(&v * 2.0));
            prop_assert!((&j2v - &jv * 2.0).norm() <= 1e-10 * (1.0 + jv.norm()));
        }

        #[test]
        fn drift_is_scaled_score(
            xs in prop::array::uniform2(-1.5f64..1.5),
            sigma in 0.01f64..4.0,
        ) {
            let gm = tree();
            let x = StateVector::from_column_slice(&xs);
            let f = gm.drift(&x, sigma);
            let s = gm.score(&x, sigma);
            for k in 0..2 {
                prop_assert_eq!(f[k].to_bits(), (s[k] * -sigma).to_bits());
            }
        }
    }
}
