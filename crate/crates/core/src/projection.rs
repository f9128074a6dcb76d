//! Smooth projection of adaptation laws onto a norm ball.
//!
//! Inside `‖θ‖ < bound·(1 − MARGIN)` the raw update passes through. In the
//! outer band an outward radial component is attenuated by a C² ramp that
//! reaches zero on the boundary; inward and tangential components are never
//! touched. Matrices are treated as flat vectors under the Frobenius norm.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative width of the band in which outward motion is attenuated.
pub const MARGIN: f64 = 0.01;

/// Relative overshoot tolerated on input. Explicit integrator stages can
/// leave the ball by a second-order amount when moving tangentially.
pub const OUTSIDE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("parameter norm {norm} is outside the projection ball of radius {bound}")]
    AlreadyOutsideBall { norm: f64, bound: f64 },
}

/// C² ramp on [0, 1]: 0 at 0, 1 at 1, flat first and second derivative at both ends.
pub(crate) fn smootherstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

pub fn project_slice(current: &[f64], raw: &[f64], bound: f64) -> Result<Vec<f64>, ProjectionError> {
    assert_eq!(current.len(), raw.len(), "projection operands differ in length");
    let norm_sq: f64 = current.iter().map(|v| v * v).sum();
    let norm = norm_sq.sqrt();
    if norm > bound * (1.0 + OUTSIDE_TOL) {
        return Err(ProjectionError::AlreadyOutsideBall { norm, bound });
    }
    let inner: f64 = current.iter().zip(raw).map(|(c, r)| c * r).sum();
    if norm < bound * (1.0 - MARGIN) || inner <= 0.0 {
        return Ok(raw.to_vec());
    }
    let keep = smootherstep((bound - norm) / (MARGIN * bound));
    let k = (1.0 - keep) * inner / norm_sq;
    Ok(raw.iter().zip(current).map(|(r, c)| r - k * c).collect())
}

pub fn project_vector(current: &DVector<f64>, raw: &DVector<f64>, bound: f64) -> Result<DVector<f64>, ProjectionError> {
    project_slice(current.as_slice(), raw.as_slice(), bound).map(DVector::from_vec)
}

pub fn project_matrix(current: &DMatrix<f64>, raw: &DMatrix<f64>, bound: f64) -> Result<DMatrix<f64>, ProjectionError> {
    project_slice(current.as_slice(), raw.as_slice(), bound)
        .map(|v| DMatrix::from_vec(raw.nrows(), raw.ncols(), v))
}

/// Pulls a parameter back onto the ball after an integration step.
pub fn clamp_to_ball(values: &mut [f64], bound: f64) {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > bound {
        let mut scale = bound / norm;
        // rounding can leave the scaled norm a few ulps above the bound
        while norm_of(values, scale) > bound {
            scale *= 1.0 - f64::EPSILON;
        }
        values.iter_mut().for_each(|v| *v *= scale);
    }
}

fn norm_of(values: &[f64], scale: f64) -> f64 {
    values.iter().map(|v| (v * scale) * (v * scale)).sum::<f64>().sqrt()
}
