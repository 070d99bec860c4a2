use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minilm::explain::ExplainModel;
use crate::minilm::vocab::{EOS, NUM_SPECIAL};
use crate::minilm::PromptInstance;
use crate::numerics::{softmax_in_place, Rng};
use crate::text::{truncate_words, word_count, MAX_WORDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub temperature: f64,
    pub seed: u64,
    pub max_words: usize,
    /// Hard token budget, independent of the word cap.
    pub max_new_tokens: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            temperature: 1.0,
            seed: 0,
            max_words: MAX_WORDS,
            max_new_tokens: 160,
        }
    }
}

/// The token to emit next: highest logit (lowest id on ties) when greedy,
/// otherwise a draw from `softmax(logits / temperature)`. Special tokens
/// other than `EOS` are never emitted.
fn pick(logits: &[f64], config: &DecodeConfig, rng: &mut Rng) -> usize {
    let allowed = |id: usize| id == EOS || id >= NUM_SPECIAL;
    match config.mode {
        DecodeMode::Greedy => {
            let mut best = EOS;
            for (id, &z) in logits.iter().enumerate() {
                if allowed(id) && z > logits[best] {
                    best = id;
                }
            }
            best
        }
        DecodeMode::Sampled => {
            let mut p: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(id, &z)| if allowed(id) { z / config.temperature } else { f64::NEG_INFINITY })
                .collect();
            softmax_in_place(&mut p);
            let u = rng.next_f64();
            let mut acc = 0.0;
            for (id, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return id;
                }
            }
            p.iter().rposition(|&pi| pi > 0.0).unwrap_or(EOS)
        }
    }
}

/// Decodes an explanation after `EXPLAIN_POS`. Decoding ends at `EOS`, at the
/// token budget or context limit, or once a word beyond `max_words` starts;
/// the text is then cut to `max_words` words.
pub fn generate(
    model: &ExplainModel,
    prompt: &PromptInstance,
    user_embedding: &[f64],
    item_embedding: &[f64],
    config: &DecodeConfig,
) -> Result<String> {
    if config.mode == DecodeMode::Sampled && !(config.temperature > 0.0) {
        return Err(Error::InvalidArgument("sampling temperature must be positive".into()));
    }
    let mut rng = Rng::derived(config.seed, 6);
    let (a_user, a_item) = model.adapted(user_embedding, item_embedding, None)?;
    let mut tokens = prompt.tokens.clone();
    let mut generated = Vec::new();
    let max_len = model.lm.config.max_context;
    while generated.len() < config.max_new_tokens && tokens.len() < max_len {
        let last = tokens.len() - 1;
        let logits = model.logits_with(&tokens, prompt.user_pos, prompt.item_pos, &a_user, &a_item, &[last])?;
        let next = pick(logits.row(0), config, &mut rng);
        if next == EOS {
            break;
        }
        tokens.push(next);
        generated.push(next);
        let text = model.lm.vocab.decode(&generated)?;
        if word_count(&text) > config.max_words {
            break;
        }
    }
    let text = model.lm.vocab.decode(&generated)?;
    Ok(truncate_words(text.trim_start(), config.max_words).to_string())
}
