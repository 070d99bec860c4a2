pub mod adapter;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph_cf;
pub mod jsonl;
pub mod minilm;
pub mod numerics;
pub mod pipeline;
pub mod text;

pub use error::{Error, ErrorKind, Result};
