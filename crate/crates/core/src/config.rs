//! Run configuration. Every field has a default, so an empty file runs the
//! synthetic pipeline end to end.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterConfig;
use crate::corpus::{BackendConfig, DistillConfig, ProfileConfig, SparsityConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{ExternalScorer, Granularity};
use crate::graph_cf::TokenizerConfig;
use crate::minilm::{AdapterTrainConfig, DecodeConfig, LmConfig, PretrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    pub min_count: usize,
    pub max_pieces: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            min_count: 3,
            max_pieces: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Put user and item profiles into the prompt.
    pub profiles: bool,
    /// Add the adapted embeddings to every layer at the slot positions.
    pub injection: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            profiles: true,
            injection: true,
        }
    }
}

impl AblationConfig {
    /// Directory suffix naming the variant, empty for the full model.
    pub fn suffix(&self) -> String {
        let mut s = String::new();
        if !self.profiles {
            s.push_str("-no-profiles");
        }
        if !self.injection {
            s.push_str("-no-injection");
        }
        s
    }

    pub fn label(&self) -> &'static str {
        match (self.profiles, self.injection) {
            (true, true) => "full",
            (false, true) => "w/o profile",
            (true, false) => "w/o injection",
            (false, false) => "w/o both",
        }
    }

    pub fn all() -> [AblationConfig; 4] {
        [(true, true), (false, true), (true, false), (false, false)].map(|(profiles, injection)| AblationConfig {
            profiles,
            injection,
        })
    }
}

/// Where the language model learns its language.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretrainSource {
    /// A separately synthesised dataset in the same templated language,
    /// with moods drawn independently of any interaction. The model learns
    /// to read profiles but knows nothing about who likes what, the way a
    /// general-purpose model knows nothing about a given recommender.
    #[default]
    Synthetic,
    /// The training pairs of the dataset itself.
    TrainEdges,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainCorpusConfig {
    pub source: PretrainSource,
    /// Also pretrain on every pair without profiles. Off by default: the
    /// profile-free half carries little to learn and halves the copying
    /// practice the full prompt needs.
    pub include_profile_free: bool,
}

impl Default for PretrainCorpusConfig {
    fn default() -> Self {
        Self {
            source: PretrainSource::default(),
            include_profile_free: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub granularity: Granularity,
    /// Scorer processes run besides the built-in token overlap.
    pub external_scorers: Vec<ExternalScorer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seed for every stage. The per-stage `seed` fields are overwritten
    /// with it when the config is resolved.
    pub seed: u64,
    /// Dataset file. Without one, the synthetic dataset in the work
    /// directory is used.
    pub dataset: Option<PathBuf>,
    /// Serve users unseen in training through the propagation rule. Off,
    /// their pairs get an error entry at generation time.
    pub zero_shot: bool,
    pub synth: SynthConfig,
    pub split: SparsityConfig,
    pub gnn: TokenizerConfig,
    pub backend: BackendConfig,
    pub profiles: ProfileConfig,
    pub distill: DistillConfig,
    pub vocab: VocabConfig,
    pub lm: LmConfig,
    pub pretrain_corpus: PretrainCorpusConfig,
    pub pretrain: PretrainConfig,
    pub adapter: AdapterConfig,
    pub adapter_train: AdapterTrainConfig,
    pub decode: DecodeConfig,
    pub ablation: AblationConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: None,
            zero_shot: false,
            synth: SynthConfig::default(),
            split: SparsityConfig::default(),
            gnn: TokenizerConfig::default(),
            backend: BackendConfig::default(),
            profiles: ProfileConfig::default(),
            distill: DistillConfig::default(),
            vocab: VocabConfig::default(),
            lm: LmConfig {
                hidden: 64,
                layers: 2,
                heads: 4,
                ff_mult: 4,
                max_context: 192,
            },
            pretrain_corpus: PretrainCorpusConfig::default(),
            pretrain: PretrainConfig::default(),
            adapter: AdapterConfig::default(),
            adapter_train: AdapterTrainConfig::default(),
            decode: DecodeConfig::default(),
            ablation: AblationConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Copies the top-level seed into every stage.
    pub fn resolved(mut self) -> Self {
        let s = self.seed;
        self.synth.seed = s;
        self.split.seed = s;
        self.gnn.seed = s;
        self.profiles.seed = s;
        self.distill.seed = s;
        self.pretrain.seed = s;
        self.adapter_train.seed = s;
        self.decode.seed = s;
        self
    }

    /// Writes the config as `config.toml` inside `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn toml_round_trip_and_partial_sections() {
        let c = RunConfig::from_toml("seed = 9\n[gnn]\ndim = 16\n[ablation]\ninjection = false\n").unwrap();
        assert_eq!(c.gnn.dim, 16);
        assert_eq!(c.gnn.num_layers, 3);
        assert!(!c.ablation.injection && c.ablation.profiles);
        let r = c.resolved();
        assert_eq!(r.gnn.seed, 9);
        assert_eq!(r.decode.seed, 9);
        assert_eq!(RunConfig::from_toml(&r.to_toml()).unwrap(), r);
    }

    #[test]
    fn unknown_values_are_config_errors() {
        assert!(matches!(RunConfig::from_toml("seed = \"x\""), Err(Error::Config(_))));
    }

    #[test]
    fn variant_names() {
        let names: Vec<_> = AblationConfig::all().iter().map(|a| (a.label(), a.suffix())).collect();
        assert_eq!(names[0], ("full", String::new()));
        assert_eq!(names[3], ("w/o both", "-no-profiles-no-injection".to_string()));
    }
}
