//! Fixed directed communication topology with leader pinning.
//!
//! Agents are indexed `0..n_agents`. The leader is virtual: it is never
//! simulated and only enters through the pinning gains `a_i0`. An edge
//! `from -> to` with weight `w` means agent `to` receives information from
//! agent `from`, so `a[to][from] = w` and `from` is an in-neighbor of `to`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, DVectorView};
use thiserror::Error;

/// Singular values at or below this are treated as zero.
pub const SINGULAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("self loop on agent {0}")]
    SelfLoop(usize),
    #[error("non-positive weight {weight} on edge {from} -> {to}")]
    NonPositiveWeight { from: usize, to: usize, weight: f64 },
    #[error("negative or non-finite pinning gain {gain} on agent {agent}")]
    BadPinning { agent: usize, gain: f64 },
    #[error("agent index {index} out of range for {n_agents} agents")]
    IndexOutOfRange { index: usize, n_agents: usize },
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: usize, to: usize },
    #[error("topology needs at least one agent and a positive state dimension")]
    Empty,
    #[error("missing value for neighbor {0}")]
    MissingNeighborValue(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("graph has no spanning tree rooted at the leader")]
    NoSpanningTree,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

impl Edge {
    pub fn new(from: usize, to: usize, weight: f64) -> Self {
        Self { from, to, weight }
    }
}

/// Weighted digraph with pinning gains. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n_agents: usize,
    state_dim: usize,
    /// `adjacency[(i, j)] = a_ij`, the weight of edge `j -> i`.
    adjacency: DMatrix<f64>,
    pinning: DVector<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn build(
        n_agents: usize,
        state_dim: usize,
        edges: &[Edge],
        pinning: &[(usize, f64)],
    ) -> Result<Self, GraphError> {
        if n_agents == 0 || state_dim == 0 {
            return Err(GraphError::Empty);
        }
        let check = |index: usize| {
            if index < n_agents {
                Ok(())
            } else {
                Err(GraphError::IndexOutOfRange { index, n_agents })
            }
        };
        let mut adjacency = DMatrix::zeros(n_agents, n_agents);
        for e in edges {
            check(e.from)?;
            check(e.to)?;
            if e.from == e.to {
                return Err(GraphError::SelfLoop(e.from));
            }
            if !(e.weight > 0.0) || !e.weight.is_finite() {
                return Err(GraphError::NonPositiveWeight { from: e.from, to: e.to, weight: e.weight });
            }
            if adjacency[(e.to, e.from)] != 0.0 {
                return Err(GraphError::DuplicateEdge { from: e.from, to: e.to });
            }
            adjacency[(e.to, e.from)] = e.weight;
        }
        let mut pins = DVector::zeros(n_agents);
        for &(agent, gain) in pinning {
            check(agent)?;
            if !(gain >= 0.0) || !gain.is_finite() {
                return Err(GraphError::BadPinning { agent, gain });
            }
            pins[agent] = gain;
        }
        let neighbors = (0..n_agents)
            .map(|i| (0..n_agents).filter(|&j| adjacency[(i, j)] > 0.0).collect())
            .collect();
        Ok(Self { n_agents, state_dim, adjacency, pinning: pins, neighbors })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// `a_ij`: weight of the edge `j -> i`, zero if absent.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    /// `a_i0`.
    pub fn pinning(&self, i: usize) -> f64 {
        self.pinning[i]
    }

    /// In-neighbors of `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// `d_i`, the weighted in-degree.
    pub fn in_degree(&self, i: usize) -> f64 {
        self.adjacency.row(i).sum()
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for i in 0..self.n_agents {
            for &j in &self.neighbors[i] {
                out.push(Edge::new(j, i, self.adjacency[(i, j)]));
            }
        }
        out
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn pinning_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.pinning)
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency.clone();
        for i in 0..self.n_agents {
            l[(i, i)] = self.in_degree(i);
        }
        l
    }

    /// `L + A0`.
    pub fn pinned_laplacian(&self) -> DMatrix<f64> {
        self.laplacian() + self.pinning_matrix()
    }

    /// True iff every agent is reachable from the leader.
    pub fn has_spanning_tree(&self) -> bool {
        let mut seen = vec![false; self.n_agents];
        let mut queue: VecDeque<usize> = (0..self.n_agents).filter(|&i| self.pinning[i] > 0.0).collect();
        for &i in &queue {
            seen[i] = true;
        }
        while let Some(j) = queue.pop_front() {
            // out-neighbors of j: agents i with a_ij > 0
            for i in 0..self.n_agents {
                if !seen[i] && self.adjacency[(i, j)] > 0.0 {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// `N_i` together with the in-neighbors of every `j` in `N_i`.
    pub fn two_hop_neighbors(&self, i: usize) -> BTreeSet<usize> {
        let mut out: BTreeSet<usize> = self.neighbors[i].iter().copied().collect();
        for &j in &self.neighbors[i] {
            out.extend(self.neighbors[j].iter().copied());
        }
        out
    }

    /// `Υ_i(values) = Σ_{j∈N_i} a_ij (v_i − v_j) + a_i0 v_i`.
    ///
    /// `values` is indexed by agent; entries for agents outside `{i} ∪ N_i`
    /// may be `None`.
    pub fn upsilon(&self, i: usize, values: &[Option<&DVector<f64>>]) -> Result<DVector<f64>, GraphError> {
        self.upsilon_with(i, |j| values.get(j).copied().flatten().ok_or(GraphError::MissingNeighborValue(j)))
    }

    /// Same as [`Topology::upsilon`] but pulls each value through `get`.
    pub fn upsilon_with<'a, E, F>(&self, i: usize, mut get: F) -> Result<DVector<f64>, E>
    where
        F: FnMut(usize) -> Result<&'a DVector<f64>, E>,
        E: From<GraphError>,
    {
        let own = get(i)?.clone();
        if own.len() != self.state_dim {
            return Err(GraphError::DimensionMismatch { expected: self.state_dim, found: own.len() }.into());
        }
        let mut out = &own * self.pinning[i];
        for &j in &self.neighbors[i] {
            let other = get(j)?;
            if other.len() != self.state_dim {
                return Err(GraphError::DimensionMismatch { expected: self.state_dim, found: other.len() }.into());
            }
            out += (&own - other) * self.adjacency[(i, j)];
        }
        Ok(out)
    }

    /// `E = ((L + A0) ⊗ I_n) X`, evaluated block by block through `upsilon`.
    pub fn stacked_error(&self, x: &StackedVector) -> Result<StackedVector, GraphError> {
        self.check_stacked(x)?;
        let blocks: Vec<DVector<f64>> = (0..self.n_agents).map(|j| x.block(j).into_owned()).collect();
        let refs: Vec<Option<&DVector<f64>>> = blocks.iter().map(Some).collect();
        let out = (0..self.n_agents)
            .map(|i| self.upsilon(i, &refs))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StackedVector::from_blocks(&out))
    }

    /// Kronecker-form product `((L + A0) ⊗ I_n) X`.
    pub fn stacked_error_kron(&self, x: &StackedVector) -> Result<StackedVector, GraphError> {
        self.check_stacked(x)?;
        let m = self.pinned_laplacian().kronecker(&DMatrix::<f64>::identity(self.state_dim, self.state_dim));
        Ok(StackedVector { block_len: self.state_dim, data: m * &x.data })
    }

    /// `σ_min(L + A0)`; the consensus bound is `‖X‖ ≤ ‖E‖ / s`.
    pub fn consensus_gain(&self) -> Result<f64, GraphError> {
        if !self.has_spanning_tree() {
            return Err(GraphError::NoSpanningTree);
        }
        let s = self
            .pinned_laplacian()
            .singular_values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if s > SINGULAR_TOL {
            Ok(s)
        } else {
            Err(GraphError::NoSpanningTree)
        }
    }

    fn check_stacked(&self, x: &StackedVector) -> Result<(), GraphError> {
        if x.block_len != self.state_dim {
            return Err(GraphError::DimensionMismatch { expected: self.state_dim, found: x.block_len });
        }
        if x.n_blocks() != self.n_agents {
            return Err(GraphError::DimensionMismatch { expected: self.n_agents, found: x.n_blocks() });
        }
        Ok(())
    }
}

/// Per-agent blocks of equal length, stacked in agent order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedVector {
    block_len: usize,
    data: DVector<f64>,
}

impl StackedVector {
    pub fn zeros(n_blocks: usize, block_len: usize) -> Self {
        Self { block_len, data: DVector::zeros(n_blocks * block_len) }
    }

    pub fn from_blocks(blocks: &[DVector<f64>]) -> Self {
        let block_len = blocks.first().map_or(0, |b| b.len());
        assert!(blocks.iter().all(|b| b.len() == block_len), "ragged blocks");
        let data = DVector::from_iterator(blocks.len() * block_len, blocks.iter().flat_map(|b| b.iter().copied()));
        Self { block_len, data }
    }

    pub fn from_flat(block_len: usize, data: DVector<f64>) -> Result<Self, GraphError> {
        if block_len == 0 || data.len() % block_len != 0 {
            return Err(GraphError::DimensionMismatch { expected: block_len, found: data.len() });
        }
        Ok(Self { block_len, data })
    }

    pub fn n_blocks(&self) -> usize {
        if self.block_len == 0 {
            0
        } else {
            self.data.len() / self.block_len
        }
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn block(&self, i: usize) -> DVectorView<'_, f64> {
        self.data.rows(i * self.block_len, self.block_len)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }
}
