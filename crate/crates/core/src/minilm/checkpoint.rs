//! Language model and unified explainer checkpoints.
//!
//! Both are JSON documents in the same float-exact encoding as the tokenizer
//! checkpoint.
//!
//! * `recexplain-lm` v1: `{ format, version, model, lm_hash }`, where `model`
//!   holds the config, the word-piece list, every parameter tensor and the
//!   frozen flag.
//! * `recexplain-explainer` v1: `{ format, version, model, lm_hash,
//!   adapter_hash, gnn_hash, config, content_hash }`. `model` adds the
//!   adapters and the injection flag; `gnn_hash` names the tokenizer
//!   embeddings the adapters were trained against; `config` is the resolved
//!   run configuration.
//!
//! Loading recomputes every hash and rejects any mismatch.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minilm::explain::ExplainModel;
use crate::minilm::MiniLm;
use crate::numerics::ContentHasher;

pub const LM_FORMAT: &str = "recexplain-lm";
pub const EXPLAINER_FORMAT: &str = "recexplain-explainer";
pub const CHECKPOINT_VERSION: u32 = 1;

fn check_shape(name: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::Checkpoint(format!(
            "tensor {name} is {}x{}, expected {}x{}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}

/// Verifies that every tensor has the size its config implies.
pub fn validate_lm_shapes(lm: &MiniLm) -> Result<()> {
    lm.config.validate()?;
    let h = lm.config.hidden;
    let f = h * lm.config.ff_mult;
    let v = lm.vocab.len();
    let p = &lm.params;
    let dims = |m: &crate::numerics::DenseMatrix| (m.rows(), m.as_slice().len() / m.rows().max(1));
    check_shape("tok_emb", dims(&p.tok_emb), (v, h))?;
    check_shape("pos_emb", dims(&p.pos_emb), (lm.config.max_context, h))?;
    check_shape("w_out", dims(&p.w_out), (h, v))?;
    if p.layers.len() != lm.config.layers {
        return Err(Error::Checkpoint(format!(
            "{} layers stored, config says {}",
            p.layers.len(),
            lm.config.layers
        )));
    }
    for (l, layer) in p.layers.iter().enumerate() {
        for (name, m, want) in [
            ("wq", &layer.wq, (h, h)),
            ("wk", &layer.wk, (h, h)),
            ("wv", &layer.wv, (h, h)),
            ("wo", &layer.wo, (h, h)),
            ("w1", &layer.w1, (h, f)),
            ("w2", &layer.w2, (f, h)),
        ] {
            check_shape(&format!("layer{l}.{name}"), dims(m), want)?;
            if m.as_slice().len() != m.rows() * m.cols() {
                return Err(Error::Checkpoint(format!("tensor layer{l}.{name} has a bad value count")));
            }
        }
        for (name, b, want) in [
            ("ln1_gain", &layer.ln1_gain, h),
            ("ln1_bias", &layer.ln1_bias, h),
            ("ln2_gain", &layer.ln2_gain, h),
            ("ln2_bias", &layer.ln2_bias, h),
            ("b1", &layer.b1, f),
            ("b2", &layer.b2, h),
        ] {
            if b.len() != want {
                return Err(Error::Checkpoint(format!("vector layer{l}.{name} has {} entries, expected {want}", b.len())));
            }
        }
    }
    for m in [&p.tok_emb, &p.pos_emb, &p.w_out] {
        if m.as_slice().len() != m.rows() * m.cols() {
            return Err(Error::Checkpoint("tensor has a bad value count".into()));
        }
    }
    if p.lnf_gain.len() != h || p.lnf_bias.len() != h || p.b_out.len() != v {
        return Err(Error::Checkpoint("final layer norm or output bias has the wrong size".into()));
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmCheckpoint {
    pub format: String,
    pub version: u32,
    pub model: MiniLm,
    pub lm_hash: String,
}

impl LmCheckpoint {
    pub fn new(model: MiniLm) -> Self {
        let lm_hash = model.content_hash();
        Self {
            format: LM_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model,
            lm_hash,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed language model checkpoint: {e}")))?;
        if ckpt.format != LM_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported language model checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        validate_lm_shapes(&ckpt.model)?;
        if ckpt.model.content_hash() != ckpt.lm_hash {
            return Err(Error::Checkpoint("language model checkpoint hash mismatch".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainerCheckpoint {
    pub format: String,
    pub version: u32,
    pub model: ExplainModel,
    pub lm_hash: String,
    pub adapter_hash: String,
    pub gnn_hash: String,
    pub config: serde_json::Value,
    pub content_hash: String,
}

impl ExplainerCheckpoint {
    pub fn new(model: ExplainModel, gnn_hash: String, config: serde_json::Value) -> Self {
        let mut ckpt = Self {
            format: EXPLAINER_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            lm_hash: model.lm.content_hash(),
            adapter_hash: model.adapters.content_hash(),
            model,
            gnn_hash,
            config,
            content_hash: String::new(),
        };
        ckpt.content_hash = ckpt.compute_hash();
        ckpt
    }

    pub fn compute_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.bytes("format", self.format.as_bytes());
        h.bytes("version", &self.version.to_le_bytes());
        h.bytes("lm_hash", self.lm_hash.as_bytes());
        h.bytes("adapter_hash", self.adapter_hash.as_bytes());
        h.bytes("gnn_hash", self.gnn_hash.as_bytes());
        h.bytes("frozen", &[self.model.lm.frozen as u8]);
        h.bytes("inject", &[self.model.inject as u8]);
        h.bytes("config", self.config.to_string().as_bytes());
        h.finish()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed explainer checkpoint: {e}")))?;
        if ckpt.format != EXPLAINER_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported explainer checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        validate_lm_shapes(&ckpt.model.lm)?;
        if !ckpt.model.lm.frozen {
            return Err(Error::Checkpoint("explainer checkpoint holds an unfrozen language model".into()));
        }
        if ckpt.model.lm.content_hash() != ckpt.lm_hash {
            return Err(Error::Checkpoint("language model hash mismatch in explainer checkpoint".into()));
        }
        if ckpt.model.adapters.content_hash() != ckpt.adapter_hash {
            return Err(Error::Checkpoint("adapter hash mismatch in explainer checkpoint".into()));
        }
        if ckpt.compute_hash() != ckpt.content_hash {
            return Err(Error::Checkpoint("explainer checkpoint content hash mismatch".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::AdapterConfig;
    use crate::minilm::explain::Adapters;
    use crate::minilm::{LmConfig, Vocabulary};
    use crate::numerics::Rng;

    fn model() -> ExplainModel {
        let cfg = LmConfig {
            hidden: 8,
            layers: 1,
            heads: 2,
            ff_mult: 2,
            max_context: 16,
        };
        let mut rng = Rng::new(3);
        let mut lm = MiniLm::new(cfg, Vocabulary::from_pieces(vec!["ab".into()]), &mut rng).unwrap();
        lm.freeze();
        let adapters = Adapters::new(4, 8, &AdapterConfig::default(), &mut rng);
        ExplainModel::new(lm, adapters, true).unwrap()
    }

    #[test]
    fn lm_round_trip_is_bit_exact() {
        let ckpt = LmCheckpoint::new(model().lm);
        let back = LmCheckpoint::from_json(&ckpt.to_json()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.model.vocab.encode("ab"), ckpt.model.vocab.encode("ab"));
    }

    #[test]
    fn tampered_lm_is_rejected() {
        let ckpt = LmCheckpoint::new(model().lm);
        let mut v: serde_json::Value = serde_json::from_str(&ckpt.to_json()).unwrap();
        let x = v["model"]["params"]["w_out"]["values"][3].as_f64().unwrap();
        v["model"]["params"]["w_out"]["values"][3] = serde_json::json!(x + 1e-3);
        assert!(LmCheckpoint::from_json(&v.to_string()).is_err());
        assert!(LmCheckpoint::from_json("{not json").is_err());
    }

    #[test]
    fn explainer_round_trip_and_tamper() {
        let ckpt = ExplainerCheckpoint::new(model(), "abc".into(), serde_json::json!({"seed": 1}));
        let json = ckpt.to_json();
        assert_eq!(ExplainerCheckpoint::from_json(&json).unwrap(), ckpt);
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["gnn_hash"] = serde_json::json!("other");
        assert!(ExplainerCheckpoint::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["model"]["inject"] = serde_json::json!(false);
        assert!(ExplainerCheckpoint::from_json(&v.to_string()).is_err());
    }
}
