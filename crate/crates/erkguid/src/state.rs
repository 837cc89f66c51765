//! Trajectory state: a point in the d-dimensional sample space.
//!
//! States are plain `f64` vectors; every constructor-level entry point checks
//! finiteness so NaN/Inf can only arise from a bug, and the sampler re-checks
//! after each step in debug builds.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Point in the d-dimensional sample space (the x_sigma trajectory state).
pub type StateVector = DVector<f64>;

/// Build a state from raw coordinates, rejecting non-finite entries.
pub fn state_from_coords(coords: &[f64]) -> Result<StateVector> {
    if coords.is_empty() {
        return Err(Error::config("state dimension must be >= 1"));
    }
    let v = StateVector::from_column_slice(coords);
    ensure_finite("state", &v)?;
    Ok(v)
}

/// Check that every entry is finite.
pub fn ensure_finite(what: &str, v: &StateVector) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::config(format!("{what} contains a non-finite entry")))
    }
}

/// Debug-build finiteness assertion for hot loops.
#[inline]
pub fn debug_assert_finite(what: &str, v: &StateVector) {
    debug_assert!(
        v.iter().all(|x| x.is_finite()),
        "{what} contains a non-finite entry"
    );
}

/// Cosine of the angle between two vectors; 0 when either is zero.
pub fn cosine(a: &StateVector, b: &StateVector) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(b) / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(state_from_coords(&[1.0, f64::NAN]).is_err());
        assert!(state_from_coords(&[f64::INFINITY]).is_err());
        assert!(state_from_coords(&[]).is_err());
        assert!(state_from_coords(&[0.0, -3.5]).is_ok());
    }

    #[test]
    fn cosine_handles_zero() {
        let z = StateVector::zeros(2);
        let e = StateVector::from_column_slice(&[1.0, 0.0]);
        assert_eq!(cosine(&z, &e), 0.0);
        assert!((cosine(&e, &e) - 1.0).abs() < 1e-15);
    }
}
