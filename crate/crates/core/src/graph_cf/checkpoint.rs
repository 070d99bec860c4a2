//! Tokenizer checkpoint file.
//!
//! JSON document, `format = "recexplain-gnn"`, `version = 1`:
//!
//! ```text
//! { format, version, dim, num_layers, num_users, num_items, epoch,
//!   rng_state, layer0: {users, items}, final_embeddings: {users, items},
//!   content_hash }
//! ```
//!
//! Matrices are `{rows, cols, values}` with row-major `values`. Floats are
//! written in shortest round-trip form and parsed exactly, so a save/load
//! cycle is bit-exact. `content_hash` is SHA-256 over every other field and
//! is verified on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_cf::{EmbeddingTable, NodeEmbeddings, TrainedTokenizer};
use crate::numerics::ContentHasher;

pub const GNN_FORMAT: &str = "recexplain-gnn";
pub const GNN_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnCheckpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub num_layers: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub epoch: usize,
    pub rng_state: u64,
    pub layer0: NodeEmbeddings,
    pub final_embeddings: NodeEmbeddings,
    pub content_hash: String,
}

impl GnnCheckpoint {
    pub fn new(table: &EmbeddingTable, final_embeddings: NodeEmbeddings, epoch: usize, rng_state: u64) -> Self {
        let mut ckpt = Self {
            format: GNN_FORMAT.into(),
            version: GNN_VERSION,
            dim: table.dim(),
            num_layers: table.num_layers,
            num_users: table.layer0.num_users(),
            num_items: table.layer0.num_items(),
            epoch,
            rng_state,
            layer0: table.layer0.clone(),
            final_embeddings,
            content_hash: String::new(),
        };
        ckpt.content_hash = ckpt.compute_hash();
        ckpt
    }

    pub fn from_trained(trained: &TrainedTokenizer) -> Self {
        Self::new(
            &trained.table,
            trained.final_embeddings.clone(),
            trained.log.best_epoch,
            trained.rng_state,
        )
    }

    pub fn compute_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.bytes("format", self.format.as_bytes());
        h.bytes("version", &self.version.to_le_bytes());
        for (label, v) in [
            ("dim", self.dim),
            ("num_layers", self.num_layers),
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("epoch", self.epoch),
        ] {
            h.bytes(label, &(v as u64).to_le_bytes());
        }
        h.bytes("rng_state", &self.rng_state.to_le_bytes());
        h.tensor("layer0.users", self.layer0.users.as_slice());
        h.tensor("layer0.items", self.layer0.items.as_slice());
        h.tensor("final.users", self.final_embeddings.users.as_slice());
        h.tensor("final.items", self.final_embeddings.items.as_slice());
        h.finish()
    }

    pub fn table(&self) -> EmbeddingTable {
        EmbeddingTable {
            layer0: self.layer0.clone(),
            num_layers: self.num_layers,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("malformed tokenizer checkpoint: {e}")))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    fn validate(&self) -> Result<()> {
        if self.format != GNN_FORMAT || self.version != GNN_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported tokenizer checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let shapes_ok = [&self.layer0, &self.final_embeddings].iter().all(|e| {
            e.num_users() == self.num_users
                && e.num_items() == self.num_items
                && e.users.cols() == self.dim
                && e.items.cols() == self.dim
        });
        if !shapes_ok {
            return Err(Error::Checkpoint("tokenizer checkpoint shapes disagree with header".into()));
        }
        if self.compute_hash() != self.content_hash {
            return Err(Error::Checkpoint("tokenizer checkpoint content hash mismatch".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
