//! JSON configuration schema, overrides and resolution into a [`SimConfig`].
//!
//! Agent indices in files are one-based. Any object may carry a
//! `_provenance` key; it is removed before parsing.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::basis::{BasisSet, Monomial, MonomialSpec};
use crate::dynamics::DynamicsSpec;
use crate::graph::{Edge, Topology};
use crate::identifier::{IdentifierGains, SignMode};
use crate::sim::{ActorGains, AgentSetup, CriticGains, MonitorToggles, ProbingSpec, SimConfig};
use crate::value::CostSpec;

pub const PROVENANCE_KEY: &str = "_provenance";

/// `gamma_cap` default as a multiple of `gamma0_scale`.
pub const DEFAULT_GAMMA_CAP_FACTOR: f64 = 8.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bad override '{0}': expected path=value")]
    BadOverride(String),
    #[error("override path '{0}' does not exist")]
    UnknownPath(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// A square matrix written as a scalar multiple of the identity (`0.5`),
/// an identity shorthand (`"I2"`, `"0.5*I2"`), or nested rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Named(String),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn resolve(&self, dim: usize, what: &str) -> Result<DMatrix<f64>, ConfigError> {
        match self {
            MatrixSpec::Scalar(c) => Ok(DMatrix::identity(dim, dim) * *c),
            MatrixSpec::Named(s) => {
                let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
                let (scale, ident) = match compact.split_once(['*', '×', 'x']) {
                    Some((c, rest)) => {
                        let c: f64 = c.parse().map_err(|_| ConfigError::Invalid(format!("{what}: cannot parse '{s}'")))?;
                        (c, rest)
                    }
                    None => (1.0, compact.as_str()),
                };
                let size = ident
                    .strip_prefix('I')
                    .and_then(|k| if k.is_empty() { Some(dim) } else { k.parse().ok() })
                    .ok_or_else(|| ConfigError::Invalid(format!("{what}: cannot parse '{s}'")))?;
                if size != dim {
                    return invalid(format!("{what}: '{s}' is {size}x{size}, expected {dim}x{dim}"));
                }
                Ok(DMatrix::identity(dim, dim) * scale)
            }
            MatrixSpec::Rows(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return invalid(format!("{what}: expected a {dim}x{dim} matrix"));
                }
                Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub n_agents: usize,
    pub state_dim: usize,
    /// `[from, to, weight]`.
    #[serde(default)]
    pub edges: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub pinning: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(rename = "Q_ii")]
    pub q_ii: MatrixSpec,
    #[serde(rename = "Q_ij", default)]
    pub q_ij: BTreeMap<String, MatrixSpec>,
    #[serde(rename = "R")]
    pub r: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BasisConfig {
    /// `"all_quadratic"`.
    Named(String),
    List { monomials: Vec<String> },
}

fn default_lambda() -> f64 {
    0.5
}
fn default_gamma0() -> f64 {
    500.0
}
fn default_bound() -> f64 {
    10.0
}

fn double_option<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<f64>>, D::Error> {
    Option::<f64>::deserialize(d).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub eta_a: f64,
    pub eta_c: f64,
    pub nu: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_gamma0")]
    pub gamma0_scale: f64,
    #[serde(default = "default_bound")]
    pub actor_bound: f64,
    /// Absent: `DEFAULT_GAMMA_CAP_FACTOR · gamma0_scale`. `null`: no cap.
    #[serde(default, deserialize_with = "double_option", skip_serializing_if = "Option::is_none")]
    pub gamma_cap: Option<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wc0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wa0: Option<Vec<f64>>,
}

fn default_hidden() -> usize {
    5
}
fn default_k_f() -> f64 {
    600.0
}
fn default_alpha_f() -> f64 {
    300.0
}
fn default_gamma_f() -> f64 {
    5.0
}
fn default_beta_1f() -> f64 {
    0.2
}
fn default_adapt() -> MatrixSpec {
    MatrixSpec::Scalar(0.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifierConfig {
    #[serde(rename = "M_f", default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_k_f")]
    pub k_f: f64,
    #[serde(default = "default_alpha_f")]
    pub alpha_f: f64,
    #[serde(default = "default_gamma_f")]
    pub gamma_f: f64,
    #[serde(default = "default_beta_1f")]
    pub beta_1f: f64,
    #[serde(rename = "Gamma_wf", default = "default_adapt")]
    pub gamma_wf: MatrixSpec,
    #[serde(rename = "Gamma_vf", default = "default_adapt")]
    pub gamma_vf: MatrixSpec,
    #[serde(default = "default_bound")]
    pub weight_bound: f64,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            k_f: default_k_f(),
            alpha_f: default_alpha_f(),
            gamma_f: default_gamma_f(),
            beta_1f: default_beta_1f(),
            gamma_wf: default_adapt(),
            gamma_vf: default_adapt(),
            weight_bound: default_bound(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub dynamics: DynamicsSpec,
    pub cost: CostConfig,
    pub basis: BasisConfig,
    pub gains: GainsConfig,
    #[serde(default)]
    pub identifier: IdentifierConfig,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub sign_mode: SignMode,
}

fn default_log_every() -> usize {
    1
}
fn default_pe_window() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub h: f64,
    #[serde(rename = "T")]
    pub duration: f64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub probing: ProbingSpec,
    #[serde(default)]
    pub exact_model: bool,
    #[serde(default)]
    pub monitors: MonitorToggles,
    #[serde(default = "default_pe_window")]
    pub pe_window: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub topology: TopologyConfig,
    pub agents: Vec<AgentConfig>,
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Removes every `_provenance` key, recursively.
pub fn strip_provenance(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove(PROVENANCE_KEY);
            map.values_mut().for_each(strip_provenance);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_provenance),
        _ => {}
    }
}

/// Applies `a.b.0.c=value`. The value is parsed as JSON, falling back to a
/// plain string. Missing objects along the path are created, so defaulted
/// sections can be overridden; misspelled keys fail later at parse time.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::BadOverride(assignment.to_string()))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(ConfigError::BadOverride(assignment.to_string()));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut node = root;
    for k in parents {
        node = match node {
            Value::Object(map) => Some(map.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()))),
            Value::Array(items) => k.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| ConfigError::UnknownPath(path.to_string()))?;
    }
    match node {
        Value::Object(map) => {
            map.insert(last.to_string(), value);
        }
        Value::Array(items) => {
            let slot = last
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(|| ConfigError::UnknownPath(path.to_string()))?;
            *slot = value;
        }
        _ => return Err(ConfigError::UnknownPath(path.to_string())),
    }
    Ok(())
}

impl ConfigFile {
    pub fn from_value(mut v: Value, overrides: &[String]) -> Result<Self, ConfigError> {
        strip_provenance(&mut v);
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn from_json_str(s: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_value(serde_json::from_str(s)?, overrides)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text, overrides)
    }

    pub fn topology(&self) -> Result<Topology, ConfigError> {
        let t = &self.topology;
        let to_index = |k: usize| -> Result<usize, ConfigError> {
            if k == 0 || k > t.n_agents {
                return invalid(format!("agent index {k} outside 1..={}", t.n_agents));
            }
            Ok(k - 1)
        };
        let edges = t
            .edges
            .iter()
            .map(|&(from, to, w)| Ok(Edge::new(to_index(from)?, to_index(to)?, w)))
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let pinning = t
            .pinning
            .iter()
            .map(|(k, &g)| Ok((to_index(parse_label(k)?)?, g)))
            .collect::<Result<Vec<_>, ConfigError>>()?;
        Topology::build(t.n_agents, t.state_dim, &edges, &pinning).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Resolves every default and builds the engine configuration.
    pub fn resolve(&self) -> Result<SimConfig, ConfigError> {
        let topology = self.topology()?;
        let n = topology.state_dim();
        if self.agents.len() != topology.n_agents() {
            return invalid(format!("{} agent blocks for {} agents", self.agents.len(), topology.n_agents()));
        }
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| resolve_agent(&topology, i, n, a).map_err(|e| prefix(i, e)))
            .collect::<Result<Vec<_>, _>>()?;
        let s = &self.sim;
        let config = SimConfig {
            topology,
            agents,
            h: s.h,
            duration: s.duration,
            log_every: s.log_every,
            seed: s.seed,
            probing: s.probing.clone(),
            exact_model: s.exact_model,
            monitors: s.monitors,
            pe_window: s.pe_window,
        };
        config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }
}

fn prefix(i: usize, e: ConfigError) -> ConfigError {
    match e {
        ConfigError::Invalid(m) => ConfigError::Invalid(format!("agent {}: {m}", i + 1)),
        other => other,
    }
}

fn parse_label(k: &str) -> Result<usize, ConfigError> {
    k.trim().parse().map_err(|_| ConfigError::Invalid(format!("'{k}' is not an agent index")))
}

fn resolve_agent(topology: &Topology, i: usize, n: usize, a: &AgentConfig) -> Result<AgentSetup, ConfigError> {
    let dynamics: Arc<dyn crate::dynamics::DynamicsModel> = Arc::from(a.dynamics.build());
    let m = dynamics.input_dim();

    let q_ij = a
        .cost
        .q_ij
        .iter()
        .map(|(k, spec)| {
            let j = parse_label(k)?;
            if j == 0 || j > topology.n_agents() {
                return invalid(format!("Q_ij key {j} outside 1..={}", topology.n_agents()));
            }
            Ok((j - 1, spec.resolve(n, &format!("Q_ij[{j}]"))?))
        })
        .collect::<Result<BTreeMap<_, _>, ConfigError>>()?;
    let cost = CostSpec::new(a.cost.q_ii.resolve(n, "Q_ii")?, q_ij, a.cost.r.resolve(m, "R")?)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let mut participants: Vec<usize> = std::iter::once(i).chain(topology.neighbors(i).iter().copied()).collect();
    participants.sort_unstable();
    let spec = match &a.basis {
        BasisConfig::Named(s) if s == "all_quadratic" => MonomialSpec::All,
        BasisConfig::Named(s) => return invalid(format!("unknown basis '{s}'")),
        BasisConfig::List { monomials } => MonomialSpec::List(
            monomials
                .iter()
                .map(|s| s.parse::<Monomial>())
                .collect::<Result<_, _>>()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        ),
    };
    let basis = BasisSet::quadratic(&participants, n, &spec).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let big_m = basis.len();

    let id = &a.identifier;
    let identifier = IdentifierGains {
        k_f: id.k_f,
        alpha_f: id.alpha_f,
        gamma_f: id.gamma_f,
        beta_1f: id.beta_1f,
        gamma_wf: id.gamma_wf.resolve(id.hidden + 1, "Gamma_wf")?,
        gamma_vf: id.gamma_vf.resolve(n, "Gamma_vf")?,
        hidden: id.hidden,
        weight_bound: id.weight_bound,
        sign_mode: a.sign_mode,
    };

    let g = &a.gains;
    let weights = |w: &Option<Vec<f64>>, name: &str| -> Result<DVector<f64>, ConfigError> {
        match w {
            None => Ok(DVector::from_element(big_m, 1.0)),
            Some(v) if v.len() == big_m => Ok(DVector::from_column_slice(v)),
            Some(v) => invalid(format!("{name} has {} entries for {big_m} basis functions", v.len())),
        }
    };
    if a.x0.len() != n {
        return invalid(format!("x0 has {} entries, expected {n}", a.x0.len()));
    }
    Ok(AgentSetup {
        dynamics,
        cost,
        basis,
        identifier,
        critic: CriticGains {
            eta_c: g.eta_c,
            nu: g.nu,
            lambda: g.lambda,
            gamma0_scale: g.gamma0_scale,
            gamma_cap: g.gamma_cap.unwrap_or(Some(DEFAULT_GAMMA_CAP_FACTOR * g.gamma0_scale)),
        },
        actor: ActorGains { eta_a: g.eta_a, bound: g.actor_bound },
        wc0: weights(&g.wc0, "wc0")?,
        wa0: weights(&g.wa0, "wa0")?,
        x0: DVector::from_column_slice(&a.x0),
    })
}
