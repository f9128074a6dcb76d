//! Scalar linear-quadratic instance with a closed-form optimal value.
//!
//! One agent pinned to the leader with gain 1 and dynamics `ẋ = a x + b u`,
//! cost `q e² + r u²` and basis `σ = [e²]`. The ideal critic weight is the
//! positive root of `p² b²/r − 2 p a − q = 0`.
//!
//! The agent starts at rest, so every bit of excitation comes from probing.

use serde_json::{json, Value};

use crate::config::{ConfigError, ConfigFile};
use crate::sim::{run_simulation, SimError, SimTrace};

pub const A: f64 = -1.0;
pub const B: f64 = 1.0;
pub const Q: f64 = 1.0;
pub const R: f64 = 1.0;
pub const HORIZON: f64 = 30.0;

/// Tolerance on `|Ŵ_c(T) − p|` with the identifier in the loop.
pub const TOL_IDENTIFIED: f64 = 0.05;
/// Tolerance on `|Ŵ_c(T) − p|` with the true model in the Bellman error.
pub const TOL_EXACT: f64 = 0.02;

/// Positive root of the scalar algebraic Riccati equation.
pub fn riccati_root(a: f64, b: f64, q: f64, r: f64) -> f64 {
    let k = b * b / r;
    (a + (a * a + k * q).sqrt()) / k
}

pub fn config_value(exact_model: bool) -> Value {
    json!({
        "topology": {"n_agents": 1, "state_dim": 1, "edges": [], "pinning": {"1": 1.0}},
        "agents": [{
            "dynamics": {"model": "linear_scalar", "params": {"a": A, "b": B}},
            "cost": {"Q_ii": Q, "R": R},
            "basis": {"monomials": ["e1.1^2"]},
            "gains": {"eta_a": 1.0, "eta_c": 20.0, "nu": 0.005},
            "x0": [0.0]
        }],
        "sim": {"h": 1e-3, "T": HORIZON, "log_every": 10, "seed": 0, "exact_model": exact_model}
    })
}

pub fn config(exact_model: bool, overrides: &[String]) -> Result<ConfigFile, ConfigError> {
    ConfigFile::from_value(config_value(exact_model), overrides)
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub p: f64,
    pub wc: f64,
    pub wa: f64,
    pub tolerance: f64,
    pub trace: SimTrace,
}

impl OracleOutcome {
    pub fn critic_error(&self) -> f64 {
        (self.wc - self.p).abs()
    }

    pub fn actor_error(&self) -> f64 {
        (self.wa - self.p).abs()
    }

    pub fn pass(&self) -> bool {
        self.critic_error() <= self.tolerance
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub fn run(exact_model: bool, overrides: &[String]) -> Result<OracleOutcome, OracleError> {
    let cfg = config(exact_model, overrides)?.resolve()?;
    let trace = run_simulation(cfg)?;
    let last = trace.final_row().expect("completed run has a final row");
    let (wc, wa) = (last.agents[0].wc[0], last.agents[0].wa[0]);
    Ok(OracleOutcome {
        p: riccati_root(A, B, Q, R),
        wc,
        wa,
        tolerance: if exact_model { TOL_EXACT } else { TOL_IDENTIFIED },
        trace,
    })
}
