//! Simple Temporal Networks represented as distance graphs.
//!
//! An edge `u -> v` with weight `w` encodes `time(v) - time(u) <= w`. Node 0
//! is the schedule start `s_0`, node 1 the schedule finish `f_0`, and task `i`
//! owns nodes `2 + 2i` (start) and `3 + 2i` (finish).

use std::sync::OnceLock;

use thiserror::Error;

/// Index of an event node inside an [`Stn`].
pub type NodeId = usize;

/// Sentinel for "no constraint" / unreachable.
pub const UNBOUNDED: f64 = f64::INFINITY;

pub const SCHEDULE_START: NodeId = 0;
pub const SCHEDULE_FINISH: NodeId = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StnError {
    #[error("unknown event node {node} (network has {len} nodes)")]
    UnknownNode { node: NodeId, len: usize },
    #[error("temporal network is inconsistent (negative cycle)")]
    Inconsistent,
    #[error("constraint weight must not be NaN")]
    NanWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    ScheduleStart,
    ScheduleFinish,
    TaskStart(usize),
    TaskFinish(usize),
}

impl EventKind {
    pub fn of(node: NodeId) -> EventKind {
        match node {
            SCHEDULE_START => EventKind::ScheduleStart,
            SCHEDULE_FINISH => EventKind::ScheduleFinish,
            n if n % 2 == 0 => EventKind::TaskStart((n - 2) / 2),
            n => EventKind::TaskFinish((n - 3) / 2),
        }
    }

    pub fn node(self) -> NodeId {
        match self {
            EventKind::ScheduleStart => SCHEDULE_START,
            EventKind::ScheduleFinish => SCHEDULE_FINISH,
            EventKind::TaskStart(i) => start_node(i),
            EventKind::TaskFinish(i) => finish_node(i),
        }
    }
}

#[inline]
pub fn start_node(task: usize) -> NodeId {
    2 + 2 * task
}

#[inline]
pub fn finish_node(task: usize) -> NodeId {
    3 + 2 * task
}

/// Dense all-pairs matrix of shortest-path distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, from: NodeId, to: NodeId) -> f64 {
        self.data[from * self.n + to]
    }

    pub fn row(&self, from: NodeId) -> &[f64] {
        &self.data[from * self.n..(from + 1) * self.n]
    }

    /// No negative cycle iff every diagonal entry is non-negative.
    pub fn is_consistent(&self) -> bool {
        (0..self.n).all(|u| self.get(u, u) >= 0.0)
    }
}

/// Floyd–Warshall over a dense `n x n` weight matrix (row-major, `UNBOUNDED`
/// for missing edges). Diagonal entries start at `min(0, self-loop)`.
pub fn floyd_warshall(n: usize, weights: &[f64]) -> DistanceMatrix {
    assert_eq!(weights.len(), n * n, "weight matrix must be n x n");
    let mut d = weights.to_vec();
    for u in 0..n {
        let idx = u * n + u;
        d[idx] = d[idx].min(0.0);
    }
    for k in 0..n {
        let (before, rest) = d.split_at_mut(k * n);
        let (row_k, after) = rest.split_at_mut(n);
        let row_k: &[f64] = row_k;
        for row_i in before.chunks_exact_mut(n).chain(after.chunks_exact_mut(n)) {
            let dik = row_i[k];
            if dik == UNBOUNDED {
                continue;
            }
            for (dij, &dkj) in row_i.iter_mut().zip(row_k) {
                let via = dik + dkj;
                if via < *dij {
                    *dij = via;
                }
            }
        }
        // row k itself: d[k][j] = min(d[k][j], d[k][k] + d[k][j]); only matters
        // when d[k][k] < 0, i.e. a negative cycle through k.
        let dkk = d[k * n + k];
        if dkk < 0.0 {
            for j in 0..n {
                let v = d[k * n + j];
                if v != UNBOUNDED {
                    d[k * n + j] = v + dkk;
                }
            }
        }
    }
    DistanceMatrix { n, data: d }
}

/// A simple temporal network over schedule and task events.
#[derive(Debug, Clone)]
pub struct Stn {
    num_tasks: usize,
    weights: Vec<f64>,
    revision: u64,
    dist: OnceLock<DistanceMatrix>,
}

impl Stn {
    /// Network with `s_0`, `f_0` and a start/finish pair per task; no edges.
    pub fn new(num_tasks: usize) -> Self {
        let n = 2 + 2 * num_tasks;
        Stn {
            num_tasks,
            weights: vec![UNBOUNDED; n * n],
            revision: 0,
            dist: OnceLock::new(),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn num_nodes(&self) -> usize {
        2 + 2 * self.num_tasks
    }

    /// Number of edits since construction.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn kind(&self, node: NodeId) -> EventKind {
        EventKind::of(node)
    }

    /// Explicit edge weight, `UNBOUNDED` when absent.
    pub fn weight(&self, from: NodeId, to: NodeId) -> f64 {
        self.weights[from * self.num_nodes() + to]
    }

    fn check(&self, node: NodeId) -> Result<(), StnError> {
        if node < self.num_nodes() {
            Ok(())
        } else {
            Err(StnError::UnknownNode {
                node,
                len: self.num_nodes(),
            })
        }
    }

    /// Add `time(to) - time(from) <= weight`; parallel constraints keep the
    /// tightest bound.
    pub fn add_constraint(&mut self, from: NodeId, to: NodeId, weight: f64) -> Result<(), StnError> {
        self.check(from)?;
        self.check(to)?;
        if weight.is_nan() {
            return Err(StnError::NanWeight);
        }
        let n = self.num_nodes();
        let slot = &mut self.weights[from * n + to];
        if weight < *slot {
            *slot = weight;
            self.revision += 1;
            self.dist = OnceLock::new();
        }
        Ok(())
    }

    /// `time(later) >= time(earlier) + gap`.
    pub fn add_lower_bound(&mut self, earlier: NodeId, later: NodeId, gap: f64) -> Result<(), StnError> {
        self.add_constraint(later, earlier, -gap)
    }

    /// All explicit edges as `(from, to, weight)`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        let n = self.num_nodes();
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != UNBOUNDED)
            .map(move |(idx, &w)| (idx / n, idx % n, w))
    }

    /// Minimum distance graph, memoized until the next edit.
    pub fn distances(&self) -> &DistanceMatrix {
        self.dist
            .get_or_init(|| floyd_warshall(self.num_nodes(), &self.weights))
    }

    pub fn is_consistent(&self) -> bool {
        self.distances().is_consistent()
    }

    fn consistent_distances(&self) -> Result<&DistanceMatrix, StnError> {
        let d = self.distances();
        if d.is_consistent() {
            Ok(d)
        } else {
            Err(StnError::Inconsistent)
        }
    }

    /// Earliest feasible time of `node` with `time(s_0) = 0`.
    pub fn earliest_time(&self, node: NodeId) -> Result<f64, StnError> {
        self.check(node)?;
        Ok(-self.consistent_distances()?.get(node, SCHEDULE_START))
    }

    /// Latest feasible time of `node` with `time(s_0) = 0`; `UNBOUNDED` if none.
    pub fn latest_time(&self, node: NodeId) -> Result<f64, StnError> {
        self.check(node)?;
        Ok(self.consistent_distances()?.get(SCHEDULE_START, node))
    }

    /// Largest earliest finish over `scheduled` tasks; 0 when empty.
    pub fn makespan<I>(&self, scheduled: I) -> Result<f64, StnError>
    where
        I: IntoIterator<Item = usize>,
    {
        let d = self.consistent_distances()?;
        let mut best = 0.0f64;
        for task in scheduled {
            let node = finish_node(task);
            self.check(node)?;
            best = best.max(-d.get(node, SCHEDULE_START));
        }
        Ok(best)
    }
}
