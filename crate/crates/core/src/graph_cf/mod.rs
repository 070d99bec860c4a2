//! Collaborative relation tokenizer: the user-item graph, LightGCN
//! propagation, BPR training with early stopping, and ranking metrics.

mod checkpoint;
mod graph;
mod loss;
mod metrics;
mod propagate;
mod sampling;
mod train;

pub use checkpoint::{GnnCheckpoint, GNN_FORMAT, GNN_VERSION};
pub use graph::{build_graph, partition_edges, Edge, InteractionGraph, Split, SplitSpec};
pub use loss::{bpr_loss, bpr_triple_loss, joint_objective, reg_loss, BprBatch, BprTriple, Objective};
pub use metrics::{rank_candidates, recall_at_k, RecallReport};
pub use propagate::{
    final_embeddings, propagate, propagation_adjoint, score, EmbeddingTable, NodeEmbeddings,
};
pub use sampling::sample_negative;
pub use train::{
    initial_table, train_tokenizer, EpochRecord, TokenizerConfig, TrainedTokenizer, TrainingLog,
};
