//! Simulation record, run monitors and the communication audit.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use super::board::{AccessLog, AccessRecord, Field};

/// Per-agent dimensions needed to lay out trace columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceLayout {
    pub state_dim: usize,
    pub input_dims: Vec<usize>,
    pub basis_sizes: Vec<usize>,
}

impl TraceLayout {
    pub fn n_agents(&self) -> usize {
        self.basis_sizes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub x: DVector<f64>,
    pub xhat: DVector<f64>,
    pub e: DVector<f64>,
    /// Control applied to the plant (policy plus probing).
    pub u: DVector<f64>,
    /// Policy output used in the Bellman error.
    pub u_policy: DVector<f64>,
    pub omega: DVector<f64>,
    pub delta: f64,
    pub wc: DVector<f64>,
    pub wa: DVector<f64>,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub psi_norm: f64,
    pub xtilde_norm: f64,
    pub wf_norm: f64,
    pub vf_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub agents: Vec<AgentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Breach {
    pub t: f64,
    /// One-based agent label.
    pub agent: usize,
    pub what: String,
}

/// Extremes observed over every integration step of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentMonitors {
    pub gamma_min_initial: f64,
    pub gamma_max_initial: f64,
    pub gamma_min_min: f64,
    pub gamma_max_max: f64,
    /// `max ‖ψ‖·√(ν λ_min(γ))`; at most 1 when the regressor bound holds.
    pub psi_ratio_max: f64,
    pub delta_abs_max: f64,
    pub wa_norm_max: f64,
    pub wa_bound: f64,
    pub wf_norm_max: f64,
    pub vf_norm_max: f64,
    pub identifier_bound: f64,
    /// Smallest eigenvalue of `∫ψψᵀ dt` over consecutive windows.
    pub pe_window_min_eig: Vec<f64>,
}

impl AgentMonitors {
    pub(crate) fn new(wa_bound: f64, identifier_bound: f64) -> Self {
        Self {
            gamma_min_initial: f64::NAN,
            gamma_max_initial: f64::NAN,
            gamma_min_min: f64::INFINITY,
            gamma_max_max: f64::NEG_INFINITY,
            psi_ratio_max: 0.0,
            delta_abs_max: 0.0,
            wa_norm_max: 0.0,
            wa_bound,
            wf_norm_max: 0.0,
            vf_norm_max: 0.0,
            identifier_bound,
            pe_window_min_eig: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MonitorReport {
    pub agents: Vec<AgentMonitors>,
    /// First breaches in time order (capped).
    pub breaches: Vec<Breach>,
    pub breach_count: u64,
}

impl MonitorReport {
    pub const MAX_RECORDED: usize = 100;

    pub(crate) fn breach(&mut self, t: f64, agent: usize, what: String) {
        self.breach_count += 1;
        if self.breaches.len() < Self::MAX_RECORDED {
            self.breaches.push(Breach { t, agent: agent + 1, what });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub layout: TraceLayout,
    pub rows: Vec<TraceRow>,
    pub access: AccessLog,
    pub monitors: MonitorReport,
    /// False when the run was aborted and this is a partial record.
    pub completed: bool,
}

impl SimTrace {
    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn audit(&self) -> AuditReport {
        audit_access(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    /// Read counts grouped by one-based (reader, owner), then by field.
    pub reads: BTreeMap<(usize, usize), BTreeMap<Field, u64>>,
    pub violations: Vec<AccessRecord>,
    pub pass: bool,
}

pub fn audit_log(log: &AccessLog) -> AuditReport {
    let mut reads: BTreeMap<(usize, usize), BTreeMap<Field, u64>> = BTreeMap::new();
    for (rec, &n) in &log.counts {
        *reads.entry((rec.reader + 1, rec.owner + 1)).or_default().entry(rec.field).or_insert(0) += n;
    }
    AuditReport { reads, violations: log.violations.clone(), pass: log.violations.is_empty() }
}

/// PASS iff every recorded read respected the one-hop policy.
pub fn audit_access(trace: &SimTrace) -> AuditReport {
    audit_log(&trace.access)
}
