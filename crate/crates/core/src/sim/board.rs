//! Per-round message exchange with a one-hop read policy.
//!
//! Every agent publishes its own state, tracking error, derivative estimate
//! `F̂_i` and `Υ_i(F̂)`. Agent `i` may read any of these only from itself and
//! its in-neighbors. Because `Υ_j(F̂)` already folds in `j`'s neighbors, a
//! Bellman error built from it uses two-hop information while every single
//! read stays one hop.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::graph::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    State,
    Error,
    FHat,
    UpsilonFHat,
}

impl Field {
    const ALL: [Field; 4] = [Field::State, Field::Error, Field::FHat, Field::UpsilonFHat];

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Field::State => "x",
            Field::Error => "e",
            Field::FHat => "F_hat",
            Field::UpsilonFHat => "upsilon_F_hat",
        };
        f.write_str(s)
    }
}

/// One read, zero-based agent indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct AccessRecord {
    pub reader: usize,
    pub field: Field,
    pub owner: usize,
}

impl fmt::Display for AccessRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent {} read {} of agent {}", self.reader + 1, self.field, self.owner + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoardError {
    #[error("access violation: {0}")]
    AccessViolation(AccessRecord),
    #[error("{field} of agent {owner} has not been published this round", owner = .owner + 1)]
    NotPublished { field: Field, owner: usize },
}

/// Aggregated read counts plus every rejected read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccessLog {
    pub counts: BTreeMap<AccessRecord, u64>,
    pub violations: Vec<AccessRecord>,
}

impl AccessLog {
    pub fn total_reads(&self) -> u64 {
        self.counts.values().sum()
    }
}

#[derive(Debug)]
pub struct MessageBoard {
    allowed: Vec<Vec<usize>>,
    slots: Vec<[Option<DVector<f64>>; 4]>,
    log: RefCell<AccessLog>,
}

impl MessageBoard {
    pub fn new(topology: &Topology) -> Self {
        let n = topology.n_agents();
        let allowed = (0..n)
            .map(|i| {
                let mut v: Vec<usize> = std::iter::once(i).chain(topology.neighbors(i).iter().copied()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        Self { allowed, slots: vec![Default::default(); n], log: RefCell::default() }
    }

    /// Starts a new round; the access log is kept.
    pub fn clear(&mut self) {
        for s in &mut self.slots {
            *s = Default::default();
        }
    }

    pub fn publish(&mut self, owner: usize, field: Field, value: DVector<f64>) {
        self.slots[owner][field.slot()] = Some(value);
    }

    pub fn may_read(&self, reader: usize, owner: usize) -> bool {
        self.allowed[reader].binary_search(&owner).is_ok()
    }

    pub fn read(&self, reader: usize, field: Field, owner: usize) -> Result<&DVector<f64>, BoardError> {
        let record = AccessRecord { reader, field, owner };
        let mut log = self.log.borrow_mut();
        if owner >= self.slots.len() || !self.may_read(reader, owner) {
            log.violations.push(record);
            return Err(BoardError::AccessViolation(record));
        }
        *log.counts.entry(record).or_insert(0) += 1;
        self.slots[owner][field.slot()]
            .as_ref()
            .ok_or(BoardError::NotPublished { field, owner })
    }

    pub fn log(&self) -> AccessLog {
        self.log.borrow().clone()
    }

    pub fn published_fields(&self, owner: usize) -> Vec<Field> {
        Field::ALL.into_iter().filter(|f| self.slots[owner][f.slot()].is_some()).collect()
    }
}
