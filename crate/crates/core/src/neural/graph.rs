//! Node featurization and message-passing graphs built from schedule states.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::env::ScheduleState;
use crate::stn::{finish_node, start_node, EventKind, UNBOUNDED};

/// How the minimum distance graph becomes a message-passing graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeMode {
    /// Incoming finite-distance edges, weighted by distance.
    #[default]
    Directed,
    /// Symmetrized neighborhoods with zero edge weights.
    UndirectedUnweighted,
}

/// Scaling applied to distances before the edge transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeScale {
    #[default]
    Raw,
    /// Multiply by `1 / (20 T)`.
    PerTask,
}

/// Width of a node feature row.
pub fn feature_dim(num_robots: usize, num_locations: usize) -> usize {
    num_robots + 1 + 2 + num_locations
}

/// One binary row per event node:
/// `[robot one-hot (N+1) | start/finish (2) | location one-hot (M)]`.
/// Unassigned tasks use the last robot slot; `s_0` / `f_0` set every robot
/// slot except the last and leave the location block empty.
pub fn encode_node_features(state: &ScheduleState) -> Array2<f64> {
    let p = state.problem();
    let n_robots = p.num_robots;
    let nodes = 2 + 2 * p.num_tasks();
    let mut x = Array2::zeros((nodes, feature_dim(n_robots, p.num_locations)));
    let flag = n_robots + 1;
    let loc0 = n_robots + 3;
    for node in 0..nodes {
        let mut row = x.row_mut(node);
        match EventKind::of(node) {
            EventKind::ScheduleStart | EventKind::ScheduleFinish => {
                row.slice_mut(s![..n_robots]).fill(1.0);
            }
            EventKind::TaskStart(i) | EventKind::TaskFinish(i) => {
                let slot = state.robot_of(i).unwrap_or(n_robots);
                row[slot] = 1.0;
                row[loc0 + p.tasks[i].location] = 1.0;
            }
        }
        let is_finish = matches!(
            EventKind::of(node),
            EventKind::ScheduleFinish | EventKind::TaskFinish(_)
        );
        row[flag + usize::from(is_finish)] = 1.0;
    }
    x
}

/// A directed message-passing graph with incoming-edge lists per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub features: Array2<f64>,
    /// `src[e]`, `weight[e]` for edges grouped by destination.
    pub src: Vec<usize>,
    pub weight: Vec<f64>,
    /// Edges into node `i` are `offsets[i]..offsets[i + 1]`.
    pub offsets: Vec<usize>,
    pub num_tasks: usize,
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    /// Builds from the state's minimum distance graph. Node `i` hears from
    /// every `j` with finite `dist(j -> i)` plus itself (weight 0).
    pub fn from_state(state: &ScheduleState, mode: EdgeMode, scale: EdgeScale) -> Graph {
        let d = state.stn().distances();
        let n = d.len();
        let t = state.problem().num_tasks();
        let factor = match scale {
            EdgeScale::Raw => 1.0,
            EdgeScale::PerTask => 1.0 / (20.0 * t.max(1) as f64),
        };
        let mut src = Vec::new();
        let mut weight = Vec::new();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    src.push(j);
                    weight.push(0.0);
                    continue;
                }
                let inbound = d.get(j, i);
                match mode {
                    EdgeMode::Directed if inbound != UNBOUNDED => {
                        src.push(j);
                        weight.push(inbound * factor);
                    }
                    EdgeMode::UndirectedUnweighted
                        if inbound != UNBOUNDED || d.get(i, j) != UNBOUNDED =>
                    {
                        src.push(j);
                        weight.push(0.0);
                    }
                    _ => {}
                }
            }
            offsets.push(src.len());
        }
        Graph {
            features: encode_node_features(state),
            src,
            weight,
            offsets,
            num_tasks: t,
        }
    }
}

/// Disjoint union of graphs processed in one pass.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub features: Array2<f64>,
    pub src: Vec<usize>,
    pub weight: Vec<f64>,
    pub offsets: Vec<usize>,
    /// First node of each graph; one extra trailing entry.
    pub node_starts: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> GraphBatch {
        assert!(!graphs.is_empty(), "empty graph batch");
        let dim = graphs[0].features.ncols();
        let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let edges: usize = graphs.iter().map(|g| g.num_edges()).sum();
        let mut features = Array2::zeros((total, dim));
        let mut src = Vec::with_capacity(edges);
        let mut weight = Vec::with_capacity(edges);
        let mut offsets = Vec::with_capacity(total + 1);
        let mut node_starts = Vec::with_capacity(graphs.len() + 1);
        offsets.push(0);
        let mut base = 0;
        for g in graphs {
            assert_eq!(g.features.ncols(), dim, "feature width mismatch in batch");
            node_starts.push(base);
            features
                .slice_mut(s![base..base + g.num_nodes(), ..])
                .assign(&g.features);
            let edge_base = src.len();
            src.extend(g.src.iter().map(|&j| j + base));
            weight.extend_from_slice(&g.weight);
            offsets.extend(g.offsets[1..].iter().map(|&o| o + edge_base));
            base += g.num_nodes();
        }
        node_starts.push(base);
        GraphBatch {
            features,
            src,
            weight,
            offsets,
            node_starts,
        }
    }

    pub fn num_graphs(&self) -> usize {
        self.node_starts.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn graph_nodes(&self, g: usize) -> std::ops::Range<usize> {
        self.node_starts[g]..self.node_starts[g + 1]
    }

    /// Global rows of a task's start and finish nodes.
    pub fn task_rows(&self, g: usize, task: usize) -> (usize, usize) {
        let base = self.node_starts[g];
        (base + start_node(task), base + finish_node(task))
    }
}
