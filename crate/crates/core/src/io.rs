//! Trace CSV and run summary serialization.
//!
//! Column order: `t`, then for each agent `i` (one-based) the blocks
//! `x{i}_{k}`, `xhat{i}_{k}`, `e{i}_{k}` for `k = 1..n`, `u{i}_{k}` for
//! `k = 1..m_i` (applied control), `delta_{i}`, `Wc{i}_{k}` and `Wa{i}_{k}`
//! for `k = 1..M_i`, `gamma_min_{i}`, `xtilde_norm_{i}`. Numbers use the
//! shortest representation that round-trips to the same double.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::sim::trace::TraceLayout;
use crate::sim::{AuditReport, MonitorReport, SimTrace};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot write {path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn trace_header(layout: &TraceLayout) -> Vec<String> {
    let n = layout.state_dim;
    let mut cols = vec!["t".to_string()];
    for i in 0..layout.n_agents() {
        let a = i + 1;
        for prefix in ["x", "xhat", "e"] {
            cols.extend((1..=n).map(|k| format!("{prefix}{a}_{k}")));
        }
        cols.extend((1..=layout.input_dims[i]).map(|k| format!("u{a}_{k}")));
        cols.push(format!("delta_{a}"));
        for prefix in ["Wc", "Wa"] {
            cols.extend((1..=layout.basis_sizes[i]).map(|k| format!("{prefix}{a}_{k}")));
        }
        cols.push(format!("gamma_min_{a}"));
        cols.push(format!("xtilde_norm_{a}"));
    }
    cols
}

pub fn write_trace<W: Write>(trace: &SimTrace, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(&trace.layout))?;
    let mut fields: Vec<String> = Vec::new();
    for row in &trace.rows {
        fields.clear();
        fields.push(row.t.to_string());
        for a in &row.agents {
            for v in [&a.x, &a.xhat, &a.e, &a.u] {
                fields.extend(v.iter().map(f64::to_string));
            }
            fields.push(a.delta.to_string());
            for v in [&a.wc, &a.wa] {
                fields.extend(v.iter().map(f64::to_string));
            }
            fields.push(a.gamma_min.to_string());
            fields.push(a.xtilde_norm.to_string());
        }
        w.write_record(&fields)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    /// One-based.
    pub agent: usize,
    pub x_norm_initial: f64,
    pub x_norm_final: f64,
    pub xtilde_norm_final: f64,
    pub delta_abs_max: f64,
    pub gamma_min_min: f64,
    pub gamma_max_max: f64,
    pub wc_final: Vec<f64>,
    pub wa_final: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSummary {
    pub pass: bool,
    pub total_reads: u64,
    pub violations: Vec<(usize, String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub completed: bool,
    pub t_final: f64,
    pub agents: Vec<AgentSummary>,
    pub audit: AuditSummary,
    pub monitors: MonitorReport,
}

impl RunSummary {
    pub fn from_trace(trace: &SimTrace) -> Self {
        let first = trace.rows.first();
        let last = trace.final_row();
        let agents = (0..trace.layout.n_agents())
            .map(|i| {
                let mon = trace.monitors.agents.get(i);
                let (a0, a1) = (first.map(|r| &r.agents[i]), last.map(|r| &r.agents[i]));
                AgentSummary {
                    agent: i + 1,
                    x_norm_initial: a0.map_or(f64::NAN, |a| a.x.norm()),
                    x_norm_final: a1.map_or(f64::NAN, |a| a.x.norm()),
                    xtilde_norm_final: a1.map_or(f64::NAN, |a| a.xtilde_norm),
                    delta_abs_max: mon.map_or(f64::NAN, |m| m.delta_abs_max),
                    gamma_min_min: mon.map_or(f64::NAN, |m| m.gamma_min_min),
                    gamma_max_max: mon.map_or(f64::NAN, |m| m.gamma_max_max),
                    wc_final: a1.map_or_else(Vec::new, |a| a.wc.iter().copied().collect()),
                    wa_final: a1.map_or_else(Vec::new, |a| a.wa.iter().copied().collect()),
                }
            })
            .collect();
        Self {
            completed: trace.completed,
            t_final: last.map_or(0.0, |r| r.t),
            agents,
            audit: audit_summary(&trace.audit(), trace.access.total_reads()),
            monitors: trace.monitors.clone(),
        }
    }
}

fn audit_summary(report: &AuditReport, total_reads: u64) -> AuditSummary {
    AuditSummary {
        pass: report.pass,
        total_reads,
        violations: report
            .violations
            .iter()
            .map(|v| (v.reader + 1, v.field.to_string(), v.owner + 1))
            .collect(),
    }
}

pub fn write_summary<W: Write>(summary: &RunSummary, out: W) -> Result<(), IoError> {
    serde_json::to_writer_pretty(out, summary)?;
    Ok(())
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.display().to_string(), source })?;
    }
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| IoError::File { path: path.display().to_string(), source })
}

pub fn save_trace(trace: &SimTrace, path: &Path) -> Result<(), IoError> {
    write_trace(trace, create(path)?)
}

pub fn save_summary(summary: &RunSummary, path: &Path) -> Result<(), IoError> {
    let mut f = create(path)?;
    write_summary(summary, &mut f)?;
    f.write_all(b"\n").map_err(|source| IoError::File { path: path.display().to_string(), source })
}
