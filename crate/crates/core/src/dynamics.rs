//! Control-affine agent models `ẋ = f(x) + g(x) u`.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, Topology};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// A time-invariant control-affine model.
///
/// Implementors provide the raw closed forms; the checked entry points
/// [`drift`] and [`control_effectiveness`] validate dimensions and reject
/// non-finite input or output.
pub trait DynamicsModel: Debug + Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift_raw(&self, x: &DVector<f64>) -> DVector<f64>;
    fn effectiveness_raw(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

fn check_input(model: &dyn DynamicsModel, x: &DVector<f64>) -> Result<(), DynamicsError> {
    if x.len() != model.state_dim() {
        return Err(DynamicsError::DimensionMismatch { expected: model.state_dim(), found: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite("state"));
    }
    Ok(())
}

pub fn drift(model: &dyn DynamicsModel, x: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
    check_input(model, x)?;
    let f = model.drift_raw(x);
    if f.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite("drift"));
    }
    Ok(f)
}

pub fn control_effectiveness(model: &dyn DynamicsModel, x: &DVector<f64>) -> Result<DMatrix<f64>, DynamicsError> {
    check_input(model, x)?;
    let g = model.effectiveness_raw(x);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite("control effectiveness"));
    }
    Ok(g)
}

/// Two-state nonlinear oscillator used for the five-agent benchmark:
///
/// ```text
/// ẋ1 = −x1 + x2
/// ẋ2 = −0.5 x1 − 0.5 x2 (1 − (cos 2x1 + 2)²) + (cos 2x1 + 2) u
/// ```
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BenchmarkDynamics;

impl DynamicsModel for BenchmarkDynamics {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn drift_raw(&self, x: &DVector<f64>) -> DVector<f64> {
        let c = (2.0 * x[0]).cos() + 2.0;
        DVector::from_vec(vec![-x[0] + x[1], -0.5 * x[0] - 0.5 * x[1] * (1.0 - c * c)])
    }

    fn effectiveness_raw(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, (2.0 * x[0]).cos() + 2.0])
    }
}

/// `ẋ = a x + b u`, scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearScalarDynamics {
    pub a: f64,
    pub b: f64,
}

impl DynamicsModel for LinearScalarDynamics {
    fn state_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn drift_raw(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.a
    }

    fn effectiveness_raw(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.b)
    }
}

/// Model registry entry as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsSpec {
    Benchmark {},
    LinearScalar { a: f64, b: f64 },
}

impl DynamicsSpec {
    pub fn build(&self) -> Box<dyn DynamicsModel> {
        match *self {
            DynamicsSpec::Benchmark {} => Box::new(BenchmarkDynamics),
            DynamicsSpec::LinearScalar { a, b } => Box::new(LinearScalarDynamics { a, b }),
        }
    }
}

/// Local neighborhood tracking error `e_i = Υ_i(x)`.
pub fn local_error(
    topology: &Topology,
    i: usize,
    states: &[Option<&DVector<f64>>],
) -> Result<DVector<f64>, GraphError> {
    topology.upsilon(i, states)
}
