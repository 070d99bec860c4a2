use serde::{Deserialize, Serialize};

use crate::adapter::Mode;
use crate::error::{Error, Result};
use crate::graph_cf::NodeEmbeddings;
use crate::minilm::explain::{Example, ExplainModel};
use crate::minilm::loss::sequence_nll;
use crate::minilm::{MiniLm, PromptInstance};
use crate::numerics::{Adam, AdamConfig, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate decays linearly to `lr * final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 16,
            lr: 3e-3,
            final_lr_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 16,
            lr: 3e-3,
            final_lr_fraction: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mean explanation NLL over the step's batch.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub steps: Vec<StepRecord>,
    pub heldout_before: f64,
    pub heldout_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterLog {
    pub steps: Vec<StepRecord>,
    pub heldout_before: f64,
    pub heldout_after: f64,
    pub injection: bool,
    pub lm_hash: String,
    pub gnn_hash: String,
    pub adapter_hash_before: String,
    pub adapter_hash_after: String,
}

impl AdapterLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step record serialises"));
            out.push('\n');
        }
        out
    }
}

/// Cycles through shuffled passes over `n` indices.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl BatchSampler {
    fn new(n: usize, rng: Rng) -> Self {
        Self {
            order: (0..n).collect(),
            cursor: n,
            rng,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.cursor == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn scheduled_lr(lr: f64, final_fraction: f64, step: usize, steps: usize) -> f64 {
    if steps <= 1 {
        return lr;
    }
    let t = step as f64 / (steps - 1) as f64;
    lr * (1.0 - t * (1.0 - final_fraction))
}

/// Mean explanation NLL of `prompts` under the unconditioned model, with the
/// slot tokens keeping their learned embeddings.
pub fn prompt_nll(lm: &MiniLm, prompts: &[PromptInstance]) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for p in prompts {
        let e = lm.embed(&p.sequence())?;
        let (logits, _) = lm.forward_embedded(&e, None, &p.scored_positions())?;
        total += sequence_nll(&logits, &p.targets)?.0;
    }
    Ok(total / prompts.len() as f64)
}

/// Trains every parameter of `lm` on the explanation tokens of `train`
/// with Adam, then freezes the model.
pub fn pretrain_lm(
    lm: &mut MiniLm,
    train: &[PromptInstance],
    heldout: &[PromptInstance],
    config: &PretrainConfig,
) -> Result<PretrainLog> {
    if lm.frozen {
        return Err(Error::InvalidArgument("cannot pretrain a frozen language model".into()));
    }
    if train.is_empty() || config.batch_size == 0 {
        return Err(Error::EmptyInput);
    }
    let heldout_before = prompt_nll(lm, heldout)?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut sampler = BatchSampler::new(train.len(), Rng::derived(config.seed, 3));
    let mut steps = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = sampler.next_batch(config.batch_size);
        let mut grads = lm.params.zeros_like();
        let mut loss = 0.0;
        for &k in &batch {
            let p = &train[k];
            let seq = p.sequence();
            let e = lm.embed(&seq)?;
            let (logits, cache) = lm.forward_embedded(&e, None, &p.scored_positions())?;
            let (l, d_logits) = sequence_nll(&logits, &p.targets)?;
            let back = lm.backward(&cache, &d_logits, true)?;
            let g = back.params.expect("parameter gradients requested");
            grads.accumulate(&g);
            lm.accumulate_embedding_grad(&seq, &back.d_embed, &[], &mut grads);
            loss += l;
        }
        let n = batch.len() as f64;
        loss /= n;
        grads.scale(1.0 / n);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Divergence {
                stage: "language model pretraining",
                epoch: 0,
                step,
            });
        }
        adam.set_lr(scheduled_lr(config.lr, config.final_lr_fraction, step, config.steps));
        let g_slices = grads.slices();
        adam.step(&mut lm.params.slices_mut(), &g_slices);
        steps.push(StepRecord { step, loss });
    }
    let heldout_after = prompt_nll(lm, heldout)?;
    lm.freeze();
    Ok(PretrainLog {
        steps,
        heldout_before,
        heldout_after,
    })
}

/// Mean explanation NLL of `examples` with inference-mode adapters.
pub fn explanation_nll(model: &ExplainModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut m = model.clone();
    m.adapters.set_mode(Mode::Inference);
    let mut total = 0.0;
    for ex in examples {
        total += m.example_loss(ex, None)?;
    }
    Ok(total / examples.len() as f64)
}

/// Fits the adapters on `train` with the language model frozen. The LM
/// parameter hash and the hash of `gnn` are compared before and after, and
/// any difference is a hard failure.
pub fn train_adapter(
    model: &mut ExplainModel,
    gnn: &NodeEmbeddings,
    train: &[Example],
    heldout: &[Example],
    config: &AdapterTrainConfig,
) -> Result<AdapterLog> {
    if !model.lm.frozen {
        return Err(Error::InvalidArgument("adapter training requires a frozen language model".into()));
    }
    if train.is_empty() || config.batch_size == 0 {
        return Err(Error::EmptyInput);
    }
    let lm_hash = model.lm.content_hash();
    let gnn_hash = gnn.content_hash();
    let adapter_hash_before = model.adapters.content_hash();
    let heldout_before = explanation_nll(model, heldout)?;

    model.adapters.set_mode(Mode::Training);
    let mut noise_rng = Rng::derived(config.seed, 4);
    let mut sampler = BatchSampler::new(train.len(), Rng::derived(config.seed, 5));
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut steps = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = sampler.next_batch(config.batch_size);
        let mut grads = model.adapters.zero_grads();
        let mut loss = 0.0;
        for &k in &batch {
            let (l, g) = model.example_grad(&train[k], Some(&mut noise_rng))?;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.accumulate(gi);
            }
            loss += l;
        }
        let n = batch.len() as f64;
        loss /= n;
        let flat: Vec<Vec<f64>> = grads
            .iter_mut()
            .map(|g| {
                g.scale(1.0 / n);
                g.flatten()
            })
            .collect();
        if !loss.is_finite() || flat.iter().flatten().any(|v| !v.is_finite()) {
            model.adapters.set_mode(Mode::Inference);
            return Err(Error::Divergence {
                stage: "adapter training",
                epoch: 0,
                step,
            });
        }
        let mut slices: Vec<&[f64]> = Vec::new();
        for (g, a) in flat.iter().zip(model.adapters.all()) {
            let mut off = 0;
            for e in &a.experts {
                let len = e.as_slice().len();
                slices.push(&g[off..off + len]);
                off += len;
            }
            slices.push(&g[off..]);
        }
        adam.set_lr(scheduled_lr(config.lr, config.final_lr_fraction, step, config.steps));
        adam.step(&mut model.adapters.param_slices_mut(), &slices);
        steps.push(StepRecord { step, loss });
    }
    model.adapters.set_mode(Mode::Inference);

    let lm_after = model.lm.content_hash();
    if lm_after != lm_hash {
        return Err(Error::FrozenParameterModified(format!(
            "language model hash changed from {lm_hash} to {lm_after}"
        )));
    }
    let gnn_after = gnn.content_hash();
    if gnn_after != gnn_hash {
        return Err(Error::FrozenParameterModified(format!(
            "graph embedding hash changed from {gnn_hash} to {gnn_after}"
        )));
    }
    let heldout_after = explanation_nll(model, heldout)?;
    Ok(AdapterLog {
        steps,
        heldout_before,
        heldout_after,
        injection: model.inject,
        lm_hash,
        gnn_hash,
        adapter_hash_before,
        adapter_hash_after: model.adapters.content_hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilm::{build_prompt, LmConfig, PromptTemplate, Vocabulary};

    fn corpus() -> (Vocabulary, Vec<PromptInstance>) {
        let texts = ["the user values gritty plot.", "the user values brisk pacing."];
        let vocab = Vocabulary::build(texts.iter().copied(), 1, 50);
        let t = PromptTemplate::parse("<USER_EMBED><ITEM_EMBED><EXPLAIN_POS>").unwrap();
        let prompts = texts
            .iter()
            .map(|s| build_prompt(&vocab, &t, 0, 0, None).with_targets(&vocab, s))
            .collect();
        (vocab, prompts)
    }

    fn small_lm(vocab: Vocabulary) -> MiniLm {
        let cfg = LmConfig {
            hidden: 16,
            layers: 1,
            heads: 2,
            ff_mult: 2,
            max_context: 32,
        };
        MiniLm::new(cfg, vocab, &mut Rng::new(1)).unwrap()
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (vocab, prompts) = corpus();
        let mut lm = small_lm(vocab);
        let before = lm.params.clone();
        let cfg = PretrainConfig {
            steps: 5,
            batch_size: 2,
            lr: 0.0,
            ..PretrainConfig::default()
        };
        pretrain_lm(&mut lm, &prompts, &prompts, &cfg).unwrap();
        assert_eq!(lm.params, before);
        assert!(lm.frozen);
        assert!(pretrain_lm(&mut lm, &prompts, &prompts, &cfg).is_err());
    }

    #[test]
    fn pretraining_is_deterministic_and_learns() {
        let (vocab, prompts) = corpus();
        let cfg = PretrainConfig {
            steps: 60,
            batch_size: 2,
            lr: 1e-2,
            ..PretrainConfig::default()
        };
        let mut a = small_lm(vocab.clone());
        let mut b = small_lm(vocab);
        let la = pretrain_lm(&mut a, &prompts, &prompts, &cfg).unwrap();
        let lb = pretrain_lm(&mut b, &prompts, &prompts, &cfg).unwrap();
        assert_eq!(la, lb);
        assert!(la.heldout_after < 0.5 * la.heldout_before, "{la:?}");
    }

    #[test]
    fn sampler_covers_each_pass() {
        let mut s = BatchSampler::new(5, Rng::new(3));
        let mut seen: Vec<usize> = s.next_batch(3);
        seen.extend(s.next_batch(2));
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next_batch(9).len(), 5);
    }
}
