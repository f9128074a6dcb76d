//! Per-agent dynamic-neural-network state-derivative estimator.
//!
//! The estimator only sees the measured state `x`, the applied input `u`
//! and the known input matrix `g(x)`; it never evaluates the drift.
//!
//! ```text
//! x̂'  = Ŵᵀ σ(V̂ᵀ x̂) + g(x) u + μ
//! Ŵ'  = proj(Γ_w σ̂' V̂ᵀ x̂' x̃ᵀ)
//! V̂'  = proj(Γ_v x̂' x̃ᵀ Ŵᵀ σ̂')
//! μ   = k x̃ − k x̃(0) + v
//! v'  = (k α + γ) x̃ + β₁ sgn(x̃)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::projection::{self, ProjectionError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdentifierError {
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("invalid gain: {0}")]
    InvalidGain(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// How `sgn(x̃)` is evaluated in the integral term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// Exact signum with `sgn(0) = 0`.
    #[default]
    Exact,
    /// `tanh(x̃ / SMOOTH_SIGN_EPS)`.
    Smooth,
}

pub const SMOOTH_SIGN_EPS: f64 = 1e-3;

impl SignMode {
    fn apply(self, v: f64) -> f64 {
        match self {
            SignMode::Exact => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            SignMode::Smooth => (v / SMOOTH_SIGN_EPS).tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierGains {
    pub k_f: f64,
    pub alpha_f: f64,
    pub gamma_f: f64,
    pub beta_1f: f64,
    /// `(M_f + 1) × (M_f + 1)`.
    pub gamma_wf: DMatrix<f64>,
    /// `n × n`.
    pub gamma_vf: DMatrix<f64>,
    pub hidden: usize,
    pub weight_bound: f64,
    pub sign_mode: SignMode,
}

impl IdentifierGains {
    /// Gains used for the five-agent benchmark, with `Γ_v = 0.1 I`.
    pub fn benchmark(state_dim: usize) -> Self {
        let hidden = 5;
        Self {
            k_f: 600.0,
            alpha_f: 300.0,
            gamma_f: 5.0,
            beta_1f: 0.2,
            gamma_wf: DMatrix::identity(hidden + 1, hidden + 1) * 0.1,
            gamma_vf: DMatrix::identity(state_dim, state_dim) * 0.1,
            hidden,
            weight_bound: 10.0,
            sign_mode: SignMode::Exact,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<(), IdentifierError> {
        for (name, v) in [
            ("k_f", self.k_f),
            ("alpha_f", self.alpha_f),
            ("gamma_f", self.gamma_f),
            ("beta_1f", self.beta_1f),
            ("weight_bound", self.weight_bound),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(IdentifierError::InvalidGain(format!("{name} = {v} must be positive")));
            }
        }
        if self.hidden == 0 {
            return Err(IdentifierError::BadDimensions("at least one hidden neuron is required".into()));
        }
        check_spd("Gamma_wf", &self.gamma_wf, self.hidden + 1)?;
        check_spd("Gamma_vf", &self.gamma_vf, state_dim)
    }
}

fn check_spd(name: &str, m: &DMatrix<f64>, dim: usize) -> Result<(), IdentifierError> {
    if m.shape() != (dim, dim) {
        return Err(IdentifierError::BadDimensions(format!("{name} is {:?}, expected {dim}x{dim}", m.shape())));
    }
    if (m - m.transpose()).amax() > 1e-12 || m.clone().cholesky().is_none() {
        return Err(IdentifierError::InvalidGain(format!("{name} must be symmetric positive definite")));
    }
    Ok(())
}

/// Time derivatives of every continuous identifier state.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierRates {
    pub xhat: DVector<f64>,
    pub wf: DMatrix<f64>,
    pub vf: DMatrix<f64>,
    pub v: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierState {
    pub xhat: DVector<f64>,
    /// Output layer, `(M_f + 1) × n`.
    pub wf: DMatrix<f64>,
    /// Input layer, `n × M_f`.
    pub vf: DMatrix<f64>,
    /// Integral term of `μ`.
    pub v: DVector<f64>,
    /// `x̃(0)`, kept for the `μ` offset.
    pub xtilde0: DVector<f64>,
}

/// `[1; tanh(V̂ᵀ x̂)]` and its `(M+1) × M` Jacobian with respect to `V̂ᵀ x̂`.
pub fn activation(vf: &DMatrix<f64>, xhat: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let z = vf.transpose() * xhat;
    let m = z.len();
    let mut sigma = DVector::zeros(m + 1);
    let mut prime = DMatrix::zeros(m + 1, m);
    sigma[0] = 1.0;
    for k in 0..m {
        let t = z[k].tanh();
        sigma[k + 1] = t;
        prime[(k + 1, k)] = 1.0 - t * t;
    }
    (sigma, prime)
}

impl IdentifierState {
    /// Weights i.i.d. uniform on [−1, 1]; `x̂(0) = x(0)`, `v(0) = 0`.
    pub fn init<R: Rng + ?Sized>(gains: &IdentifierGains, x0: &DVector<f64>, rng: &mut R) -> Result<Self, IdentifierError> {
        let n = x0.len();
        if n == 0 {
            return Err(IdentifierError::BadDimensions("empty state".into()));
        }
        gains.validate(n)?;
        let m = gains.hidden;
        let wf = DMatrix::from_fn(m + 1, n, |_, _| rng.gen_range(-1.0..=1.0));
        let vf = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..=1.0));
        let mut state = Self { xhat: x0.clone(), wf, vf, v: DVector::zeros(n), xtilde0: DVector::zeros(n) };
        // the drawn weights may not fit a small ball
        projection::clamp_to_ball(state.wf.as_mut_slice(), gains.weight_bound);
        projection::clamp_to_ball(state.vf.as_mut_slice(), gains.weight_bound);
        Ok(state)
    }

    /// `f̂ = Ŵᵀ σ(V̂ᵀ x̂)`.
    pub fn dnn_estimate(&self) -> Result<DVector<f64>, IdentifierError> {
        let (sigma, _) = activation(&self.vf, &self.xhat);
        let f = self.wf.transpose() * sigma;
        finite(f, "dnn estimate")
    }

    pub fn mu(&self, gains: &IdentifierGains, x: &DVector<f64>) -> DVector<f64> {
        let xtilde = x - &self.xhat;
        (xtilde - &self.xtilde0) * gains.k_f + &self.v
    }

    /// `F̂ = f̂ + g(x) u + μ`.
    pub fn f_hat_full(
        &self,
        gains: &IdentifierGains,
        x: &DVector<f64>,
        u: &DVector<f64>,
        g: &DMatrix<f64>,
    ) -> Result<DVector<f64>, IdentifierError> {
        self.check_inputs(x, u, g)?;
        let f = self.dnn_estimate()? + g * u + self.mu(gains, x);
        finite(f, "F_hat")
    }

    pub fn derivatives(
        &self,
        gains: &IdentifierGains,
        x: &DVector<f64>,
        u: &DVector<f64>,
        g: &DMatrix<f64>,
    ) -> Result<IdentifierRates, IdentifierError> {
        self.check_inputs(x, u, g)?;
        let (sigma, sigma_prime) = activation(&self.vf, &self.xhat);
        let xtilde = x - &self.xhat;
        let mu = (&xtilde - &self.xtilde0) * gains.k_f + &self.v;
        let xhat_dot = finite(self.wf.transpose() * &sigma + g * u + mu, "xhat rate")?;

        let outer = &xhat_dot * xtilde.transpose();
        let raw_w = &gains.gamma_wf * &sigma_prime * self.vf.transpose() * &outer;
        let raw_v = &gains.gamma_vf * &outer * self.wf.transpose() * &sigma_prime;
        let wf = projection::project_matrix(&self.wf, &raw_w, gains.weight_bound)?;
        let vf = projection::project_matrix(&self.vf, &raw_v, gains.weight_bound)?;

        let mut v = &xtilde * (gains.k_f * gains.alpha_f + gains.gamma_f);
        for (vk, &e) in v.iter_mut().zip(xtilde.iter()) {
            *vk += gains.beta_1f * gains.sign_mode.apply(e);
        }
        Ok(IdentifierRates {
            xhat: xhat_dot,
            wf: finite_m(wf, "Wf rate")?,
            vf: finite_m(vf, "Vf rate")?,
            v: finite(v, "v rate")?,
        })
    }

    pub fn xtilde(&self, x: &DVector<f64>) -> DVector<f64> {
        x - &self.xhat
    }

    fn check_inputs(&self, x: &DVector<f64>, u: &DVector<f64>, g: &DMatrix<f64>) -> Result<(), IdentifierError> {
        let n = self.xhat.len();
        if x.len() != n || g.nrows() != n || g.ncols() != u.len() {
            return Err(IdentifierError::BadDimensions(format!(
                "x: {}, g: {:?}, u: {}, expected state dimension {n}",
                x.len(),
                g.shape(),
                u.len()
            )));
        }
        if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(IdentifierError::NonFinite("identifier input"));
        }
        Ok(())
    }
}

fn finite(v: DVector<f64>, what: &'static str) -> Result<DVector<f64>, IdentifierError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(IdentifierError::NonFinite(what))
    }
}

fn finite_m(v: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>, IdentifierError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(IdentifierError::NonFinite(what))
    }
}
