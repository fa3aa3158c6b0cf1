use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::gat::{Aggregation, GatCache, GatLayerParams};
use super::graph::{feature_dim, EdgeMode, EdgeScale, Graph, GraphBatch};
use crate::env::ScheduleState;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Largest accepted model, in scalars.
pub const MAX_SCALARS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_robots: usize,
    pub num_locations: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub num_layers: usize,
    pub q_hidden: usize,
    pub edge_mode: EdgeMode,
    pub edge_scale: EdgeScale,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_robots: 2,
            num_locations: 2,
            heads: 8,
            head_dim: 64,
            num_layers: 3,
            q_hidden: 64,
            edge_mode: EdgeMode::Directed,
            edge_scale: EdgeScale::Raw,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn for_team(num_robots: usize, num_locations: usize) -> Self {
        ModelConfig {
            num_robots,
            num_locations,
            ..Self::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        feature_dim(self.num_robots, self.num_locations)
    }

    /// Width of the final node embeddings.
    pub fn embedding_dim(&self) -> usize {
        self.head_dim
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.num_robots == 0 || self.num_locations == 0 {
            return Err(ModelError::Config("robots and locations must be positive".into()));
        }
        if self.heads == 0 || self.head_dim == 0 || self.num_layers == 0 || self.q_hidden == 0 {
            return Err(ModelError::Config("layer sizes must be positive".into()));
        }
        match self.scalar_count() {
            Some(n) if n <= MAX_SCALARS => Ok(()),
            _ => Err(ModelError::Config(format!("model exceeds {MAX_SCALARS} parameters"))),
        }
    }

    /// Parameter count, or `None` on overflow. Mirrors `ModelParams::zeros`.
    fn scalar_count(&self) -> Option<usize> {
        let width = self.heads.checked_mul(self.head_dim)?;
        let mut in_dim = self.num_robots.checked_add(self.num_locations)?.checked_add(3)?;
        let mut total = 0usize;
        for l in 0..self.num_layers {
            let w = in_dim.checked_mul(width)?;
            let per_head = self.heads.checked_mul(self.head_dim.checked_mul(4)?)?;
            total = total.checked_add(w)?.checked_add(per_head)?;
            in_dim = if l + 1 == self.num_layers { self.head_dim } else { width };
        }
        let emb = in_dim.checked_mul(2)?;
        let head = emb
            .checked_mul(self.q_hidden)?
            .checked_add(self.q_hidden)?
            .checked_add(self.q_hidden.checked_mul(self.num_robots)?)?
            .checked_add(self.num_robots)?;
        total.checked_add(head)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
    #[error("model expects {expected} robots/locations layout, state has {got}")]
    StateShape { expected: String, got: String },
}

/// Two-layer fully connected head producing one value per robot.
#[derive(Debug, Clone, PartialEq)]
pub struct QHeadParams {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

/// Every learnable tensor. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<GatLayerParams>,
    pub head: QHeadParams,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut in_dim = config.input_dim();
        for l in 0..config.num_layers {
            let aggregation = if l + 1 == config.num_layers {
                Aggregation::Average
            } else {
                Aggregation::Concat
            };
            let layer = GatLayerParams::zeros(in_dim, config.heads, config.head_dim, aggregation);
            in_dim = layer.output_dim();
            layers.push(layer);
        }
        let emb = 2 * in_dim;
        let head = QHeadParams {
            w1: Array2::zeros((emb, config.q_hidden)),
            b1: Array2::zeros((1, config.q_hidden)),
            w2: Array2::zeros((config.q_hidden, config.num_robots)),
            b2: Array2::zeros((1, config.num_robots)),
        };
        ModelParams { layers, head }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from a seeded stream.
    pub fn init(config: &ModelConfig) -> Self {
        let mut params = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut fill = |t: &mut Array2<f64>, fan_in: usize| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            t.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        };
        for layer in &mut params.layers {
            let in_dim = layer.in_dim();
            let f = layer.out_dim;
            fill(&mut layer.w, in_dim);
            fill(&mut layer.w_edge, 1);
            fill(&mut layer.attn, 3 * f);
        }
        let h = &mut params.head;
        let (emb, hidden) = h.w1.dim();
        fill(&mut h.w1, emb);
        fill(&mut h.b1, emb);
        fill(&mut h.w2, hidden);
        fill(&mut h.b2, hidden);
        params
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|(_, t)| t.fill(0.0));
        z
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("gat.{l}.w"), &layer.w));
            out.push((format!("gat.{l}.w_edge"), &layer.w_edge));
            out.push((format!("gat.{l}.attn"), &layer.attn));
        }
        out.push(("q.w1".into(), &self.head.w1));
        out.push(("q.b1".into(), &self.head.b1));
        out.push(("q.w2".into(), &self.head.w2));
        out.push(("q.b2".into(), &self.head.b2));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("gat.{l}.w"), &mut layer.w));
            out.push((format!("gat.{l}.w_edge"), &mut layer.w_edge));
            out.push((format!("gat.{l}.attn"), &mut layer.attn));
        }
        let h = &mut self.head;
        out.push(("q.w1".into(), &mut h.w1));
        out.push(("q.b1".into(), &mut h.b1));
        out.push(("q.w2".into(), &mut h.w2));
        out.push(("q.b2".into(), &mut h.b2));
        out
    }

    /// Biases are excluded from weight decay.
    pub fn is_bias(name: &str) -> bool {
        name.starts_with("q.b")
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Sum of squared non-bias weights.
    pub fn l2(&self) -> f64 {
        self.tensors()
            .iter()
            .filter(|(n, _)| !Self::is_bias(n))
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, b);
        }
    }

    /// Adds `2 * lambda * w` to every non-bias gradient.
    pub fn add_l2_grad(&self, lambda: f64, grad: &mut Gradients) {
        for ((name, g), (_, w)) in grad.tensors_mut().into_iter().zip(self.tensors()) {
            if !Self::is_bias(&name) {
                g.scaled_add(2.0 * lambda, w);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// A (graph, task) pair whose robot Q-values are requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub graph: usize,
    pub task: usize,
}

/// Forward-pass results plus everything backpropagation needs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub q: Array2<f64>,
    pub embeddings: Array2<f64>,
    layer_caches: Vec<GatCache>,
    head_input: Array2<f64>,
    hidden_pre: Array2<f64>,
    queries: Vec<Query>,
}

impl Forward {
    pub fn attention(&self, layer: usize) -> &Array2<f64> {
        self.layer_caches[layer].alpha()
    }
}

/// Mean of node embeddings of graph `g`.
pub fn graph_embedding(batch: &GraphBatch, embeddings: &Array2<f64>, g: usize) -> ndarray::Array1<f64> {
    embeddings
        .slice(s![batch.graph_nodes(g), ..])
        .mean_axis(Axis(0))
        .expect("graphs have nodes")
}

/// Mean of a task's start and finish embeddings.
pub fn task_embedding(batch: &GraphBatch, embeddings: &Array2<f64>, g: usize, task: usize) -> ndarray::Array1<f64> {
    let (sr, fr) = batch.task_rows(g, task);
    (&embeddings.row(sr) + &embeddings.row(fr)) / 2.0
}

/// Graph-attention encoder plus Q-head.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl QNetwork {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let params = ModelParams::init(&config);
        Ok(QNetwork { config, params })
    }

    pub fn graph(&self, state: &ScheduleState) -> Graph {
        Graph::from_state(state, self.config.edge_mode, self.config.edge_scale)
    }

    pub fn check_state(&self, state: &ScheduleState) -> Result<(), ModelError> {
        let p = state.problem();
        if p.num_robots != self.config.num_robots || p.num_locations != self.config.num_locations {
            return Err(ModelError::StateShape {
                expected: format!("{}/{}", self.config.num_robots, self.config.num_locations),
                got: format!("{}/{}", p.num_robots, p.num_locations),
            });
        }
        Ok(())
    }

    /// Node embeddings after every GAT layer.
    pub fn encode(&self, batch: &GraphBatch) -> (Array2<f64>, Vec<GatCache>) {
        let mut h = batch.features.clone();
        let mut caches = Vec::with_capacity(self.params.layers.len());
        for layer in &self.params.layers {
            let (out, cache) = layer.forward(batch, &h);
            caches.push(cache);
            h = out;
        }
        (h, caches)
    }

    pub fn forward(&self, batch: &GraphBatch, queries: &[Query]) -> Forward {
        let (embeddings, layer_caches) = self.encode(batch);
        let f = embeddings.ncols();
        let graph_means: Vec<_> = (0..batch.num_graphs())
            .map(|g| graph_embedding(batch, &embeddings, g))
            .collect();
        let mut head_input = Array2::<f64>::zeros((queries.len(), 2 * f));
        for (row, q) in queries.iter().enumerate() {
            head_input.slice_mut(s![row, ..f]).assign(&graph_means[q.graph]);
            head_input
                .slice_mut(s![row, f..])
                .assign(&task_embedding(batch, &embeddings, q.graph, q.task));
        }
        let (q, hidden_pre) = self.head_forward(&head_input);
        Forward {
            q,
            embeddings,
            layer_caches,
            head_input,
            hidden_pre,
            queries: queries.to_vec(),
        }
    }

    fn head_forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let h = &self.params.head;
        let pre = x.dot(&h.w1) + &h.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        (hidden.dot(&h.w2) + &h.b2, pre)
    }

    /// Q-values for `[h_g || h_task]` rows fed straight into the head.
    pub fn q_values(&self, graph_emb: &[f64], task_emb: &[f64]) -> Vec<f64> {
        let mut x = Array2::<f64>::zeros((1, graph_emb.len() + task_emb.len()));
        for (dst, v) in x.iter_mut().zip(graph_emb.iter().chain(task_emb)) {
            *dst = *v;
        }
        assert_eq!(x.ncols(), self.params.head.w1.nrows(), "embedding width mismatch");
        self.head_forward(&x).0.row(0).to_vec()
    }

    /// Gradient of a scalar loss given `d_q = dL/dQ` (same shape as `fwd.q`).
    pub fn backward(&self, batch: &GraphBatch, fwd: &Forward, d_q: &Array2<f64>) -> Gradients {
        assert_eq!(d_q.dim(), fwd.q.dim(), "loss adjoint shape mismatch");
        let mut grad = self.params.zeros_like();
        let h = &self.params.head;
        let hidden = fwd.hidden_pre.mapv(|v| v.max(0.0));
        grad.head.w2 = hidden.t().dot(d_q);
        grad.head.b2 = d_q.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut d_pre = d_q.dot(&h.w2.t());
        d_pre.zip_mut_with(&fwd.hidden_pre, |d, &p| {
            if p <= 0.0 {
                *d = 0.0;
            }
        });
        grad.head.w1 = fwd.head_input.t().dot(&d_pre);
        grad.head.b1 = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_x = d_pre.dot(&h.w1.t());

        let f = fwd.embeddings.ncols();
        let mut d_emb = Array2::<f64>::zeros(fwd.embeddings.dim());
        for (row, q) in fwd.queries.iter().enumerate() {
            let nodes = batch.graph_nodes(q.graph);
            let share = 1.0 / nodes.len() as f64;
            let d_graph = d_x.slice(s![row, ..f]);
            for node in nodes {
                d_emb.row_mut(node).scaled_add(share, &d_graph);
            }
            let d_task = d_x.slice(s![row, f..]);
            let (sr, fr) = batch.task_rows(q.graph, q.task);
            d_emb.row_mut(sr).scaled_add(0.5, &d_task);
            d_emb.row_mut(fr).scaled_add(0.5, &d_task);
        }

        let mut upstream = d_emb;
        for (l, layer) in self.params.layers.iter().enumerate().rev() {
            let d_in = layer.backward(batch, &fwd.layer_caches[l], &upstream, &mut grad.layers[l], l > 0);
            if let Some(d) = d_in {
                upstream = d;
            }
        }
        grad
    }

    /// Q-values for every unscheduled task of one state, task-major.
    pub fn state_q_values(&self, state: &ScheduleState) -> Vec<(usize, Vec<f64>)> {
        let tasks: Vec<usize> = state.unscheduled().collect();
        if tasks.is_empty() {
            return Vec::new();
        }
        let graph = self.graph(state);
        let batch = GraphBatch::new(&[&graph]);
        let queries: Vec<Query> = tasks.iter().map(|&task| Query { graph: 0, task }).collect();
        let fwd = self.forward(&batch, &queries);
        tasks
            .into_iter()
            .zip(fwd.q.rows())
            .map(|(t, row)| (t, row.to_vec()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let tensors = self
            .params
            .tensors()
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                shape: [t.nrows(), t.ncols()],
                data: t.iter().copied().collect(),
            })
            .collect();
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors,
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(ModelError::Mismatch(format!("unsupported version {}", file.version)));
        }
        file.config.validate()?;
        let stored: usize = file.tensors.iter().map(|t| t.data.len()).sum();
        if file.config.scalar_count() != Some(stored) {
            return Err(ModelError::Mismatch(format!("checkpoint holds {stored} values, config needs more or fewer")));
        }
        let mut params = ModelParams::zeros(&file.config);
        let slots = params.tensors_mut();
        if slots.len() != file.tensors.len() {
            return Err(ModelError::Mismatch(format!(
                "expected {} tensors, found {}",
                slots.len(),
                file.tensors.len()
            )));
        }
        for ((name, slot), rec) in slots.into_iter().zip(file.tensors) {
            if rec.name != name {
                return Err(ModelError::Mismatch(format!("expected tensor {name}, found {}", rec.name)));
            }
            if rec.shape != [slot.nrows(), slot.ncols()] || rec.data.len() != slot.len() {
                return Err(ModelError::Mismatch(format!("tensor {name} has wrong shape")));
            }
            if rec.data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Mismatch(format!("tensor {name} has non-finite entries")));
            }
            for (dst, v) in slot.iter_mut().zip(rec.data) {
                *dst = v;
            }
        }
        Ok(QNetwork {
            config: file.config,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}
