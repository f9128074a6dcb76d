//! Quadratic value-function bases over a stacked neighborhood error.
//!
//! A basis for agent `i` is defined over its participants `{i} ∪ N_i`
//! (ascending agent order). Each feature is a product of two error
//! coordinates, so `σ(0) = 0` and every Jacobian block is linear in the
//! errors.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasisError {
    #[error("duplicate monomial {0}")]
    DuplicateMonomial(String),
    #[error("monomial {monomial} references agent {agent}, which is not a participant")]
    UnknownParticipant { monomial: String, agent: usize },
    #[error("component {comp} out of range for state dimension {n}")]
    ComponentOutOfRange { comp: usize, n: usize },
    #[error("cannot parse monomial {0:?}; expected e.g. \"e1.2^2\" or \"e1.1*e3.2\"")]
    Parse(String),
    #[error("expected {expected} error blocks of length {n}, got {found}")]
    BadErrors { expected: usize, found: usize, n: usize },
}

/// Component `comp` of agent `agent`'s error vector (both zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub agent: usize,
    pub comp: usize,
}

impl Coord {
    pub fn new(agent: usize, comp: usize) -> Self {
        Self { agent, comp }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}.{}", self.agent + 1, self.comp + 1)
    }
}

impl FromStr for Coord {
    type Err = BasisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || BasisError::Parse(s.to_string());
        let body = s.trim().strip_prefix('e').ok_or_else(err)?;
        let (a, c) = body.split_once('.').ok_or_else(err)?;
        let agent: usize = a.parse().map_err(|_| err())?;
        let comp: usize = c.parse().map_err(|_| err())?;
        if agent == 0 || comp == 0 {
            return Err(err());
        }
        Ok(Coord::new(agent - 1, comp - 1))
    }
}

/// Product of two error coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Monomial(pub Coord, pub Coord);

impl Monomial {
    fn key(&self) -> (Coord, Coord) {
        if self.0 <= self.1 {
            (self.0, self.1)
        } else {
            (self.1, self.0)
        }
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == self.1 {
            write!(f, "{}^2", self.0)
        } else {
            write!(f, "{}*{}", self.0, self.1)
        }
    }
}

impl FromStr for Monomial {
    type Err = BasisError;

    /// Accepts `e<agent>.<comp>^2` or `e<a>.<c>*e<b>.<d>`, one-based.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(base) = s.strip_suffix("^2") {
            let c: Coord = base.parse().map_err(|_| BasisError::Parse(s.to_string()))?;
            return Ok(Monomial(c, c));
        }
        let (a, b) = s.split_once('*').ok_or_else(|| BasisError::Parse(s.to_string()))?;
        let a: Coord = a.parse().map_err(|_| BasisError::Parse(s.to_string()))?;
        let b: Coord = b.parse().map_err(|_| BasisError::Parse(s.to_string()))?;
        Ok(Monomial(a, b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MonomialSpec {
    /// Every distinct quadratic monomial over the participants.
    All,
    List(Vec<Monomial>),
}

/// Every distinct quadratic monomial, in the order: within each participant
/// the squares then the in-block cross terms; then for each participant pair
/// the matching-component products followed by the mixed ones.
pub fn all_quadratic(participants: &[usize], n: usize) -> Vec<Monomial> {
    let mut out = Vec::new();
    for &p in participants {
        for k in 0..n {
            out.push(Monomial(Coord::new(p, k), Coord::new(p, k)));
        }
        for k in 0..n {
            for l in (k + 1)..n {
                out.push(Monomial(Coord::new(p, k), Coord::new(p, l)));
            }
        }
    }
    for (ia, &a) in participants.iter().enumerate() {
        for &b in &participants[ia + 1..] {
            for k in 0..n {
                out.push(Monomial(Coord::new(a, k), Coord::new(b, k)));
            }
            for k in 0..n {
                for l in (k + 1)..n {
                    out.push(Monomial(Coord::new(a, k), Coord::new(b, l)));
                    out.push(Monomial(Coord::new(a, l), Coord::new(b, k)));
                }
            }
        }
    }
    out
}

/// A feature is stored as (participant slot, component) pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Factor {
    slot: usize,
    comp: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    participants: Vec<usize>,
    state_dim: usize,
    monomials: Vec<Monomial>,
    factors: Vec<(Factor, Factor)>,
}

impl BasisSet {
    pub fn quadratic(participants: &[usize], state_dim: usize, spec: &MonomialSpec) -> Result<Self, BasisError> {
        let monomials = match spec {
            MonomialSpec::All => all_quadratic(participants, state_dim),
            MonomialSpec::List(list) => list.clone(),
        };
        let mut seen = HashSet::new();
        let mut factors = Vec::with_capacity(monomials.len());
        for m in &monomials {
            if !seen.insert(m.key()) {
                return Err(BasisError::DuplicateMonomial(m.to_string()));
            }
            let locate = |c: Coord| -> Result<Factor, BasisError> {
                if c.comp >= state_dim {
                    return Err(BasisError::ComponentOutOfRange { comp: c.comp + 1, n: state_dim });
                }
                let slot = participants
                    .iter()
                    .position(|&p| p == c.agent)
                    .ok_or(BasisError::UnknownParticipant { monomial: m.to_string(), agent: c.agent + 1 })?;
                Ok(Factor { slot, comp: c.comp })
            };
            factors.push((locate(m.0)?, locate(m.1)?));
        }
        Ok(Self { participants: participants.to_vec(), state_dim, monomials, factors })
    }

    pub fn participants(&self) -> &[usize] {
        &self.participants
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    /// Number of features `M`.
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    fn check(&self, errors: &[DVector<f64>]) -> Result<(), BasisError> {
        if errors.len() != self.participants.len() || errors.iter().any(|e| e.len() != self.state_dim) {
            return Err(BasisError::BadErrors {
                expected: self.participants.len(),
                found: errors.len(),
                n: self.state_dim,
            });
        }
        Ok(())
    }

    /// `σ(ℰ)`, with `errors` in participant order.
    pub fn evaluate(&self, errors: &[DVector<f64>]) -> Result<DVector<f64>, BasisError> {
        self.check(errors)?;
        Ok(DVector::from_iterator(
            self.len(),
            self.factors.iter().map(|(a, b)| errors[a.slot][a.comp] * errors[b.slot][b.comp]),
        ))
    }

    /// `∂σ/∂e_j` (`M × n`) for each participant `j`, in participant order.
    pub fn jacobians(&self, errors: &[DVector<f64>]) -> Result<Vec<DMatrix<f64>>, BasisError> {
        self.check(errors)?;
        let mut out = vec![DMatrix::zeros(self.len(), self.state_dim); self.participants.len()];
        for (row, (a, b)) in self.factors.iter().enumerate() {
            out[a.slot][(row, a.comp)] += errors[b.slot][b.comp];
            out[b.slot][(row, b.comp)] += errors[a.slot][a.comp];
        }
        Ok(out)
    }
}
