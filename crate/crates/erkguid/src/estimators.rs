//! Stiffness and stiff-direction estimators.
//!
//! The cheap estimators read only an embedded pair (no extra drift
//! evaluations): the drift difference over the solution difference gives a
//! directional stiffness magnitude, and the normalized drift difference
//! gives the stiff direction. The oracles in the second half of the module
//! (power iteration through Jacobian-vector products, dense symmetric
//! eigendecomposition) are reserved for verification and analysis.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fields::ScoreField;
use crate::rng;
use crate::solvers::ERKPair;
use crate::state::StateVector;

/// A pair is degenerate when its solution difference is below this relative
/// floor (scaled by 1 + ||x_high||).
pub const PAIR_DEGENERACY_REL_TOL: f64 = 1e-12;
/// Power iteration stops early once the iterate direction moves by less
/// than this between sweeps (sign-agnostic, so alternation under a negative
/// dominant eigenvalue still terminates).
pub const POWER_ITER_EARLY_EXIT_REL: f64 = 1e-12;
/// Power iteration restarts from a fresh random direction at most this many
/// times when an iterate lands in the Jacobian's kernel.
pub const POWER_ITER_MAX_RESTARTS: usize = 8;

/// Pair-based stiffness read-out for one step.
#[derive(Debug, Clone)]
pub struct StiffnessEstimate {
    /// ||Delta^f|| / ||Delta^x||; 0 when the pair is degenerate.
    pub rho_hat: f64,
    /// Unit stiff direction, oriented along the reference drift; `None`
    /// when the drift difference vanishes.
    pub v_hat: Option<StateVector>,
    /// False when the pair cannot support a correction (degenerate
    /// solution difference or vanishing drift difference).
    pub valid: bool,
}

impl StiffnessEstimate {
    pub fn invalid() -> Self {
        StiffnessEstimate { rho_hat: 0.0, v_hat: None, valid: false }
    }
}

fn pair_degenerate(pair: &ERKPair, dx_norm: f64) -> bool {
    dx_norm < PAIR_DEGENERACY_REL_TOL * (1.0 + pair.x_high.norm())
}

/// Stiffness magnitude alone: ||Delta^f|| / ||Delta^x||.
pub fn stiffness_estimate(pair: &ERKPair) -> Option<f64> {
    let dx_norm = pair.dx().norm();
    if pair_degenerate(pair, dx_norm) {
        return None;
    }
    Some(pair.df().norm() / dx_norm)
}

/// Stiff direction alone: Delta^f normalized, then flipped if needed so
/// that its inner product with `f_ref` is non-negative (an exactly zero
/// inner product keeps the raw sign).
pub fn eigenvector_estimate(pair: &ERKPair, f_ref: &StateVector) -> Option<StateVector> {
    let df = pair.df();
    let n = df.norm();
    if n == 0.0 {
        return None;
    }
    let mut v = df / n;
    if f_ref.dot(&v) < 0.0 {
        v = -v;
    }
    Some(v)
}

/// Full estimate from one pair; `f_ref` is the drift at the current
/// trajectory state, used only to orient the direction.
pub fn estimate_from_pair(pair: &ERKPair, f_ref: &StateVector) -> StiffnessEstimate {
    let dx_norm = pair.dx().norm();
    if pair_degenerate(pair, dx_norm) {
        return StiffnessEstimate::invalid();
    }
    let rho_hat = pair.df().norm() / dx_norm;
    match eigenvector_estimate(pair, f_ref) {
        Some(v_hat) => StiffnessEstimate { rho_hat, v_hat: Some(v_hat), valid: true },
        None => StiffnessEstimate { rho_hat, v_hat: None, valid: false },
    }
}

/// Directional stiffness oracle along the pair's own solution difference:
/// ||J Delta^x|| / ||Delta^x|| with the Jacobian-vector product taken at
/// (x_high, sigma_high).
pub fn rho_oracle<F: ScoreField + ?Sized>(field: &F, pair: &ERKPair) -> Option<f64> {
    let dx = pair.dx();
    let n = dx.norm();
    if pair_degenerate(pair, n) {
        return None;
    }
    Some(field.jvp(&pair.x_high, pair.sigma_high, &dx).norm() / n)
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> StateVector {
    loop {
        let v = StateVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Dominant eigenvalue magnitude and eigenvector of the drift Jacobian via
/// matrix-free power iteration. Deterministic for a given `seed`. Returns
/// `None` only when every restart lands in the kernel.
pub fn power_iteration_dominant<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma: f64,
    iters: usize,
    seed: u64,
) -> Option<(f64, StateVector)> {
    let mut stream = rng::stream(seed);
    let mut v = random_unit(&mut stream, x.len());
    let mut restarts = 0;
    let mut done = 0usize;
    while done < iters {
        let jv = field.jvp(x, sigma, &v);
        let n = jv.norm();
        if n == 0.0 {
            if restarts >= POWER_ITER_MAX_RESTARTS {
                return None;
            }
            restarts += 1;
            v = random_unit(&mut stream, x.len());
            continue;
        }
        let v_new = jv / n;
        let drift = (&v_new - &v).norm().min((&v_new + &v).norm());
        v = v_new;
        done += 1;
        if drift <= POWER_ITER_EARLY_EXIT_REL {
            break;
        }
    }
    let lambda_abs = field.jvp(x, sigma, &v).norm();
    Some((lambda_abs, v))
}

/// Deterministic sign: flip so the entry of largest magnitude (first such
/// entry on ties) is positive.
fn canonical_sign(v: &mut StateVector) {
    let mut idx = 0;
    let mut best = 0.0f64;
    for (i, &c) in v.iter().enumerate() {
        if c.abs() > best {
            best = c.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        *v = -&*v;
    }
}

/// Full eigendecomposition of the (symmetric) drift Jacobian, sorted by
/// descending eigenvalue magnitude. Magnitude ties order the larger signed
/// eigenvalue first; eigenvector signs are canonicalized. Floating-point
/// asymmetry is removed by averaging J with its transpose (the analytic
/// Jacobians here are symmetric).
pub fn dense_spectrum<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma: f64,
) -> Result<Vec<(f64, StateVector)>> {
    let j = field.jacobian(x, sigma)?;
    let sym = (&j + j.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut pairs: Vec<(f64, StateVector)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let mut v: StateVector = eig.eigenvectors.column(k).into_owned();
            canonical_sign(&mut v);
            (l, v)
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.0.abs()
            .partial_cmp(&a.0.abs())
            .unwrap()
            .then(b.0.partial_cmp(&a.0).unwrap())
    });
    Ok(pairs)
}

/// Dominant (largest-magnitude) eigenpair of the drift Jacobian, signed.
pub fn dense_dominant_eigenpair<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma: f64,
) -> Result<(f64, StateVector)> {
    dense_spectrum(field, x, sigma)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Degenerate("empty spectrum".into()))
}
