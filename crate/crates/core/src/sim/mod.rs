//! Synchronous multi-agent simulation.

pub mod board;
mod engine;
pub mod probing;
pub mod trace;

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::BasisSet;
use crate::dynamics::{DynamicsError, DynamicsModel};
use crate::graph::{GraphError, Topology};
use crate::identifier::{IdentifierError, IdentifierGains};
use crate::value::{CostSpec, ValueError};

pub use board::{AccessLog, AccessRecord, BoardError, Field, MessageBoard};
pub use engine::{run_simulation, AgentSignals, AgentState, Simulation};
pub use probing::{ProbingSignal, ProbingSpec};
pub use trace::{audit_access, audit_log, AgentMonitors, AgentRecord, AuditReport, MonitorReport, SimTrace, TraceRow};

/// Any state magnitude above this aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct CriticGains {
    pub eta_c: f64,
    pub nu: f64,
    pub lambda: f64,
    pub gamma0_scale: f64,
    pub gamma_cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorGains {
    pub eta_a: f64,
    pub bound: f64,
}

/// Everything one agent needs, fully resolved.
#[derive(Debug, Clone)]
pub struct AgentSetup {
    pub dynamics: Arc<dyn DynamicsModel>,
    pub cost: CostSpec,
    pub basis: BasisSet,
    pub identifier: IdentifierGains,
    pub critic: CriticGains,
    pub actor: ActorGains,
    pub wc0: DVector<f64>,
    pub wa0: DVector<f64>,
    pub x0: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorToggles {
    /// `γ` positive definite.
    pub gamma: bool,
    /// `‖ψ‖ ≤ 1/√(ν λ_min(γ))`.
    pub psi: bool,
    /// Actor and identifier weights inside their projection balls.
    pub weights: bool,
}

impl Default for MonitorToggles {
    fn default() -> Self {
        Self { gamma: true, psi: true, weights: true }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub topology: Topology,
    pub agents: Vec<AgentSetup>,
    /// Integrator step, s.
    pub h: f64,
    /// Horizon, s.
    pub duration: f64,
    pub log_every: usize,
    pub seed: u64,
    pub probing: ProbingSpec,
    /// Substitute the true `f(x) + g(x)u` for the identifier output in the
    /// Bellman error.
    pub exact_model: bool,
    pub monitors: MonitorToggles,
    /// Window length for the excitation diagnostic, s.
    pub pe_window: f64,
}

impl SimConfig {
    pub fn steps(&self) -> usize {
        (self.duration / self.h).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ConfigInvalid(m));
        if !(self.h > 0.0) || !self.h.is_finite() {
            return bad(format!("step h = {} must be positive", self.h));
        }
        if !(self.duration >= self.h) || !self.duration.is_finite() {
            return bad(format!("duration T = {} must be at least h", self.duration));
        }
        let steps = self.steps();
        if (steps as f64 * self.h - self.duration).abs() > 1e-9 * self.duration.max(1.0) {
            return bad(format!("duration {} is not a whole number of steps of {}", self.duration, self.h));
        }
        if self.log_every == 0 || steps % self.log_every != 0 {
            return bad(format!("log_every = {} must divide the step count {steps}", self.log_every));
        }
        if !(self.pe_window > 0.0) {
            return bad("pe_window must be positive".into());
        }
        self.probing.validate().map_err(SimError::ConfigInvalid)?;
        let t = &self.topology;
        if self.agents.len() != t.n_agents() {
            return bad(format!("{} agent blocks for {} agents", self.agents.len(), t.n_agents()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            let label = i + 1;
            let n = t.state_dim();
            if a.dynamics.state_dim() != n || a.x0.len() != n {
                return bad(format!("agent {label}: state dimension does not match topology ({n})"));
            }
            if a.cost.q_ii().nrows() != n || a.cost.r().nrows() != a.dynamics.input_dim() {
                return bad(format!("agent {label}: cost matrices do not match model dimensions"));
            }
            let mut expected: Vec<usize> = std::iter::once(i).chain(t.neighbors(i).iter().copied()).collect();
            expected.sort_unstable();
            if a.basis.participants() != expected.as_slice() {
                return bad(format!("agent {label}: basis participants must be the agent and its in-neighbors"));
            }
            for j in a.cost.q_ij().keys() {
                if !t.neighbors(i).contains(j) {
                    return bad(format!("agent {label}: Q_ij given for non-neighbor {}", j + 1));
                }
            }
            for &j in t.neighbors(i) {
                if !a.cost.q_ij().contains_key(&j) {
                    return bad(format!("agent {label}: missing Q_ij for neighbor {}", j + 1));
                }
            }
            let m = a.basis.len();
            if m == 0 || a.wc0.len() != m || a.wa0.len() != m {
                return bad(format!("agent {label}: weight vectors must match the {m} basis functions"));
            }
            a.identifier
                .validate(n)
                .map_err(|e| SimError::ConfigInvalid(format!("agent {label}: {e}")))?;
            let c = &a.critic;
            if !(c.eta_c > 0.0 && c.nu > 0.0 && c.gamma0_scale > 0.0) {
                return bad(format!("agent {label}: eta_c, nu and gamma0_scale must be positive"));
            }
            if !(c.lambda > 0.0 && c.lambda < 1.0) {
                return bad(format!("agent {label}: lambda = {} must lie in (0, 1)", c.lambda));
            }
            if let Some(cap) = c.gamma_cap {
                if !(cap > c.gamma0_scale * (m as f64).sqrt()) {
                    return bad(format!("agent {label}: gamma_cap {cap} must exceed the initial gain norm"));
                }
            }
            if !(a.actor.eta_a > 0.0 && a.actor.bound > 0.0) {
                return bad(format!("agent {label}: eta_a and actor_bound must be positive"));
            }
            if a.wa0.norm() > a.actor.bound {
                return bad(format!("agent {label}: initial actor weights lie outside actor_bound"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("non-finite {field} for agent {agent} at t = {t}", agent = .agent + 1)]
    NonFinite { t: f64, agent: usize, field: String },
    #[error("least-squares gain of agent {agent} lost positive definiteness at t = {t}", agent = .agent + 1)]
    GammaNotPd { t: f64, agent: usize },
    #[error("{field} of agent {agent} exceeded {DIVERGENCE_LIMIT:e} at t = {t}", agent = .agent + 1)]
    NumericalDivergence { t: f64, agent: usize, field: String, partial: Box<SimTrace> },
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("agent {agent}: {source}", agent = .agent + 1)]
    Value { agent: usize, source: ValueError },
    #[error("agent {agent}: {source}", agent = .agent + 1)]
    Identifier { agent: usize, source: IdentifierError },
    #[error("agent {agent}: {source}", agent = .agent + 1)]
    Dynamics { agent: usize, source: DynamicsError },
}

impl SimError {
    pub(crate) fn value(t: f64, agent: usize, source: ValueError) -> Self {
        match source {
            ValueError::GammaNotPd => SimError::GammaNotPd { t, agent },
            source => SimError::Value { agent, source },
        }
    }

    pub(crate) fn identifier(t: f64, agent: usize, source: IdentifierError) -> Self {
        match source {
            IdentifierError::NonFinite(what) => SimError::NonFinite { t, agent, field: what.to_string() },
            source => SimError::Identifier { agent, source },
        }
    }

    pub(crate) fn dynamics(t: f64, agent: usize, source: DynamicsError) -> Self {
        match source {
            DynamicsError::NonFinite(what) => SimError::NonFinite { t, agent, field: what.to_string() },
            source => SimError::Dynamics { agent, source },
        }
    }
}
