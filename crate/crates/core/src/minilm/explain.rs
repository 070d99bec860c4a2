//! The language model conditioned on adapted collaborative embeddings.

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterConfig, AdapterGrads, AdapterTrace, Mode, MoeAdapter};
use crate::error::{Error, Result};
use crate::minilm::loss::sequence_nll;
use crate::minilm::{Injection, MiniLm, PromptInstance};
use crate::numerics::{axpy, finite_difference_check, ContentHasher, DenseMatrix, GradCheckReport, Rng};

/// One adapter for both node types, or one per type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adapters {
    Shared(MoeAdapter),
    Separate { user: MoeAdapter, item: MoeAdapter },
}

impl Adapters {
    pub fn new(input_dim: usize, output_dim: usize, config: &AdapterConfig, rng: &mut Rng) -> Self {
        if config.separate_item_adapter {
            let user = MoeAdapter::new(input_dim, output_dim, config, rng);
            let item = MoeAdapter::new(input_dim, output_dim, config, rng);
            Adapters::Separate { user, item }
        } else {
            Adapters::Shared(MoeAdapter::new(input_dim, output_dim, config, rng))
        }
    }

    pub fn user(&self) -> &MoeAdapter {
        match self {
            Adapters::Shared(a) => a,
            Adapters::Separate { user, .. } => user,
        }
    }

    pub fn item(&self) -> &MoeAdapter {
        match self {
            Adapters::Shared(a) => a,
            Adapters::Separate { item, .. } => item,
        }
    }

    /// Distinct adapters, user first.
    pub fn all(&self) -> Vec<&MoeAdapter> {
        match self {
            Adapters::Shared(a) => vec![a],
            Adapters::Separate { user, item } => vec![user, item],
        }
    }

    fn all_mut(&mut self) -> Vec<&mut MoeAdapter> {
        match self {
            Adapters::Shared(a) => vec![a],
            Adapters::Separate { user, item } => vec![user, item],
        }
    }

    fn item_index(&self) -> usize {
        match self {
            Adapters::Shared(_) => 0,
            Adapters::Separate { .. } => 1,
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for a in self.all_mut() {
            a.set_mode(mode);
        }
    }

    pub fn input_dim(&self) -> usize {
        self.user().input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.user().output_dim()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.all_mut().into_iter().flat_map(|a| a.param_slices_mut()).collect()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        self.all().iter().flat_map(|a| a.flatten_params()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for a in self.all_mut() {
            let n = a.num_params();
            a.set_flat_params(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn zero_grads(&self) -> Vec<AdapterGrads> {
        self.all().into_iter().map(AdapterGrads::zeros_like).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.all().iter().all(|a| a.is_finite())
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        for (k, a) in self.all().iter().enumerate() {
            a.hash_into(&format!("adapter{k}"), &mut h);
        }
        h.finish()
    }
}

/// A training or evaluation example: a prompt with targets and the
/// collaborative embeddings of its user and item.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub prompt: PromptInstance,
    pub user_embedding: Vec<f64>,
    pub item_embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainModel {
    pub lm: MiniLm,
    pub adapters: Adapters,
    /// Per-layer injection at the reserved positions. Embedding replacement
    /// is always applied.
    pub inject: bool,
}

struct Conditioned {
    a_user: Vec<f64>,
    a_item: Vec<f64>,
    traces: (AdapterTrace, AdapterTrace),
}

impl ExplainModel {
    pub fn new(lm: MiniLm, adapters: Adapters, inject: bool) -> Result<Self> {
        if adapters.output_dim() != lm.hidden() {
            return Err(Error::Shape(format!(
                "adapter output {} does not match model hidden size {}",
                adapters.output_dim(),
                lm.hidden()
            )));
        }
        Ok(Self { lm, adapters, inject })
    }

    fn condition(&self, user: &[f64], item: &[f64], mut rng: Option<&mut Rng>) -> Result<Conditioned> {
        let (a_user, tu) = self.adapters.user().forward(user, rng.as_deref_mut())?;
        let (a_item, ti) = self.adapters.item().forward(item, rng)?;
        Ok(Conditioned {
            a_user,
            a_item,
            traces: (tu, ti),
        })
    }

    /// Adapted user and item embeddings.
    pub fn adapted(&self, user: &[f64], item: &[f64], rng: Option<&mut Rng>) -> Result<(Vec<f64>, Vec<f64>)> {
        let c = self.condition(user, item, rng)?;
        Ok((c.a_user, c.a_item))
    }

    /// Logits at `outputs` for `tokens`, whose slots sit at `user_pos` and
    /// `item_pos`, given already adapted embeddings.
    pub fn logits_with(
        &self,
        tokens: &[usize],
        user_pos: usize,
        item_pos: usize,
        a_user: &[f64],
        a_item: &[f64],
        outputs: &[usize],
    ) -> Result<DenseMatrix> {
        let e = self.lm.embed_replaced(tokens, user_pos, a_user, item_pos, a_item)?;
        let inj = Injection {
            user_pos,
            item_pos,
            user: a_user,
            item: a_item,
        };
        let (logits, _) = self.lm.forward_embedded(&e, self.inject.then_some(&inj), outputs)?;
        Ok(logits)
    }

    /// Explanation NLL of one example.
    pub fn example_loss(&self, ex: &Example, rng: Option<&mut Rng>) -> Result<f64> {
        let c = self.condition(&ex.user_embedding, &ex.item_embedding, rng)?;
        let p = &ex.prompt;
        let logits = self.logits_with(&p.sequence(), p.user_pos, p.item_pos, &c.a_user, &c.a_item, &p.scored_positions())?;
        Ok(sequence_nll(&logits, &p.targets)?.0)
    }

    /// Explanation NLL of one example and its gradient with respect to the
    /// adapter parameters, one entry per adapter in [`Adapters::all`] order.
    /// The language model is only differentiated with respect to its inputs.
    pub fn example_grad(&self, ex: &Example, rng: Option<&mut Rng>) -> Result<(f64, Vec<AdapterGrads>)> {
        let c = self.condition(&ex.user_embedding, &ex.item_embedding, rng)?;
        let p = &ex.prompt;
        let seq = p.sequence();
        let e = self.lm.embed_replaced(&seq, p.user_pos, &c.a_user, p.item_pos, &c.a_item)?;
        let inj = Injection {
            user_pos: p.user_pos,
            item_pos: p.item_pos,
            user: &c.a_user,
            item: &c.a_item,
        };
        let (logits, cache) = self.lm.forward_embedded(&e, self.inject.then_some(&inj), &p.scored_positions())?;
        let (loss, d_logits) = sequence_nll(&logits, &p.targets)?;
        let back = self.lm.backward(&cache, &d_logits, false)?;

        let mut d_user = back.d_embed.row(p.user_pos).to_vec();
        let mut d_item = back.d_embed.row(p.item_pos).to_vec();
        if let Some((du, di)) = &back.d_inject {
            axpy(1.0, du, &mut d_user);
            axpy(1.0, di, &mut d_item);
        }
        let mut grads = self.adapters.zero_grads();
        let gu = self.adapters.user().backward(&c.traces.0, &d_user)?;
        let gi = self.adapters.item().backward(&c.traces.1, &d_item)?;
        grads[0].accumulate(&gu);
        let item_index = self.adapters.item_index();
        grads[item_index].accumulate(&gi);
        Ok((loss, grads))
    }

    /// Finite-difference check of [`ExplainModel::example_grad`] over all
    /// adapter parameters. Requires inference-mode adapters.
    pub fn check_adapter_gradients(&self, ex: &Example, eps: f64, tol: f64) -> Result<GradCheckReport> {
        if self.adapters.all().iter().any(|a| a.mode == Mode::Training) {
            return Err(Error::StochasticForward);
        }
        let (_, grads) = self.example_grad(ex, None)?;
        let analytic: Vec<f64> = grads.iter().flat_map(AdapterGrads::flatten).collect();
        let params = self.adapters.flatten_params();
        let mut probe = self.clone();
        finite_difference_check(
            |p| {
                probe.adapters.set_flat_params(p);
                probe.example_loss(ex, None).unwrap_or(f64::NAN)
            },
            &params,
            &analytic,
            eps,
            tol,
            None,
        )
    }
}
