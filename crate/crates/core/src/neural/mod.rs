//! Graph attention Q-network over schedule states.

pub mod gat;
pub mod graph;
pub mod model;

pub use gat::{Aggregation, GatCache, GatLayerParams};
pub use graph::{encode_node_features, feature_dim, EdgeMode, EdgeScale, Graph, GraphBatch};
pub use model::{
    graph_embedding, task_embedding, Forward, Gradients, ModelConfig, ModelError, ModelParams,
    QHeadParams, QNetwork, Query, CHECKPOINT_VERSION,
};
