//! Pre-norm decoder-only transformer with hand-written backward pass.
//!
//! Row-vector convention throughout: a sequence is a `T x h` matrix and a
//! projection is `X * W`. Each layer computes
//!
//! ```text
//! z   = LN1(x)            (plus injected rows, see below)
//! x  += Attn(z W_q, z W_k, z W_v) W_o
//! x  += GELU(LN2(x) W_1 + b_1) W_2 + b_2
//! ```
//!
//! followed by a final layer norm and an untied output head. Attention has
//! no biases, so adding `a` to row `p` of `z` is the same as adding `a W_q`,
//! `a W_k` and `a W_v` to the query, key and value rows at `p`. That is how
//! the per-layer injection of adapted embeddings is realised, with the
//! layer's own frozen projections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minilm::vocab::Vocabulary;
use crate::numerics::{axpy, dot, gelu, gelu_grad, softmax_in_place, ContentHasher, DenseMatrix, Rng};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `hidden`.
    pub ff_mult: usize,
    pub max_context: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 4,
            heads: 4,
            ff_mult: 4,
            max_context: 512,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.heads == 0 || self.ff_mult == 0 || self.max_context == 0 {
            return Err(Error::InvalidArgument("language model sizes must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
    pub wo: DenseMatrix,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
}

/// Every trainable tensor of the model. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmParams {
    pub tok_emb: DenseMatrix,
    pub pos_emb: DenseMatrix,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Vec<f64>,
    pub lnf_bias: Vec<f64>,
    pub w_out: DenseMatrix,
    pub b_out: Vec<f64>,
}

impl LmParams {
    fn init(config: &LmConfig, vocab_size: usize, rng: &mut Rng) -> Self {
        let h = config.hidden;
        let f = h * config.ff_mult;
        let resid = 1.0 / ((2 * config.layers) as f64).sqrt();
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                ln1_gain: vec![1.0; h],
                ln1_bias: vec![0.0; h],
                wq: DenseMatrix::random_normal(h, h, 1.0 / (h as f64).sqrt(), rng),
                wk: DenseMatrix::random_normal(h, h, 1.0 / (h as f64).sqrt(), rng),
                wv: DenseMatrix::random_normal(h, h, 1.0 / (h as f64).sqrt(), rng),
                wo: DenseMatrix::random_normal(h, h, resid / (h as f64).sqrt(), rng),
                ln2_gain: vec![1.0; h],
                ln2_bias: vec![0.0; h],
                w1: DenseMatrix::random_normal(h, f, 1.0 / (h as f64).sqrt(), rng),
                b1: vec![0.0; f],
                w2: DenseMatrix::random_normal(f, h, resid / (f as f64).sqrt(), rng),
                b2: vec![0.0; h],
            })
            .collect();
        Self {
            tok_emb: DenseMatrix::random_normal(vocab_size, h, 0.1, rng),
            pos_emb: DenseMatrix::random_normal(config.max_context, h, 0.1, rng),
            layers,
            lnf_gain: vec![1.0; h],
            lnf_bias: vec![0.0; h],
            w_out: DenseMatrix::random_normal(h, vocab_size, 0.1 / (h as f64).sqrt(), rng),
            b_out: vec![0.0; vocab_size],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    /// Labelled tensors in a fixed order.
    pub fn named_slices(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("tok_emb".into(), self.tok_emb.as_slice()),
            ("pos_emb".into(), self.pos_emb.as_slice()),
        ];
        for (l, p) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.ln1_gain"), &p.ln1_gain));
            out.push((format!("layer{l}.ln1_bias"), &p.ln1_bias));
            out.push((format!("layer{l}.wq"), p.wq.as_slice()));
            out.push((format!("layer{l}.wk"), p.wk.as_slice()));
            out.push((format!("layer{l}.wv"), p.wv.as_slice()));
            out.push((format!("layer{l}.wo"), p.wo.as_slice()));
            out.push((format!("layer{l}.ln2_gain"), &p.ln2_gain));
            out.push((format!("layer{l}.ln2_bias"), &p.ln2_bias));
            out.push((format!("layer{l}.w1"), p.w1.as_slice()));
            out.push((format!("layer{l}.b1"), &p.b1));
            out.push((format!("layer{l}.w2"), p.w2.as_slice()));
            out.push((format!("layer{l}.b2"), &p.b2));
        }
        out.push(("lnf_gain".into(), &self.lnf_gain));
        out.push(("lnf_bias".into(), &self.lnf_bias));
        out.push(("w_out".into(), self.w_out.as_slice()));
        out.push(("b_out".into(), &self.b_out));
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.named_slices().into_iter().map(|(_, s)| s).collect()
    }

    /// Same order as [`LmParams::named_slices`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.tok_emb.as_mut_slice(), self.pos_emb.as_mut_slice()];
        for p in &mut self.layers {
            out.push(&mut p.ln1_gain);
            out.push(&mut p.ln1_bias);
            out.push(p.wq.as_mut_slice());
            out.push(p.wk.as_mut_slice());
            out.push(p.wv.as_mut_slice());
            out.push(p.wo.as_mut_slice());
            out.push(&mut p.ln2_gain);
            out.push(&mut p.ln2_bias);
            out.push(p.w1.as_mut_slice());
            out.push(&mut p.b1);
            out.push(p.w2.as_mut_slice());
            out.push(&mut p.b2);
        }
        out.push(&mut self.lnf_gain);
        out.push(&mut self.lnf_bias);
        out.push(self.w_out.as_mut_slice());
        out.push(&mut self.b_out);
        out
    }

    pub fn accumulate(&mut self, other: &LmParams) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            axpy(1.0, b, a);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniLm {
    pub config: LmConfig,
    pub vocab: Vocabulary,
    pub params: LmParams,
    pub frozen: bool,
}

/// Adapted embeddings added to the attention inputs of every layer.
#[derive(Clone, Copy, Debug)]
pub struct Injection<'a> {
    pub user_pos: usize,
    pub item_pos: usize,
    pub user: &'a [f64],
    pub item: &'a [f64],
}

#[derive(Clone, Debug)]
struct LnCache {
    xhat: DenseMatrix,
    rstd: Vec<f64>,
}

#[derive(Clone, Debug)]
struct LayerCache {
    ln1: LnCache,
    z: DenseMatrix,
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    /// `probs[head][t]` holds the attention weights over positions `0..=t`.
    probs: Vec<Vec<Vec<f64>>>,
    attn: DenseMatrix,
    ln2: LnCache,
    ln2_out: DenseMatrix,
    ff_pre: DenseMatrix,
    ff_act: DenseMatrix,
}

/// Activations retained by a forward pass for [`MiniLm::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    len: usize,
    injected: Option<(usize, usize)>,
    outputs: Vec<usize>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    lnf_out: DenseMatrix,
}

#[derive(Clone, Debug)]
pub struct LmBackward {
    /// Gradient with respect to the input embedding matrix.
    pub d_embed: DenseMatrix,
    /// Gradients with respect to the injected vectors, summed over layers.
    pub d_inject: Option<(Vec<f64>, Vec<f64>)>,
    pub params: Option<LmParams>,
}

fn layer_norm(x: &DenseMatrix, gain: &[f64], bias: &[f64]) -> (DenseMatrix, LnCache) {
    let (t, h) = (x.rows(), x.cols());
    let mut xhat = DenseMatrix::zeros(t, h);
    let mut out = DenseMatrix::zeros(t, h);
    let mut rstd = Vec::with_capacity(t);
    for r in 0..t {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(s);
        let xr = xhat.row_mut(r);
        for c in 0..h {
            xr[c] = (row[c] - mean) * s;
        }
        let or = out.row_mut(r);
        for c in 0..h {
            or[c] = gain[c] * xhat.get(r, c) + bias[c];
        }
    }
    (out, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &DenseMatrix,
    cache: &LnCache,
    gain: &[f64],
    grads: Option<(&mut [f64], &mut [f64])>,
) -> DenseMatrix {
    let (t, h) = (dy.rows(), dy.cols());
    let mut dx = DenseMatrix::zeros(t, h);
    let mut dxhat = vec![0.0; h];
    for r in 0..t {
        let g = dy.row(r);
        let xh = cache.xhat.row(r);
        for c in 0..h {
            dxhat[c] = g[c] * gain[c];
        }
        let m1 = dxhat.iter().sum::<f64>() / h as f64;
        let m2 = dot(&dxhat, xh) / h as f64;
        let s = cache.rstd[r];
        let out = dx.row_mut(r);
        for c in 0..h {
            out[c] = s * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
    if let Some((dg, db)) = grads {
        for r in 0..t {
            let g = dy.row(r);
            let xh = cache.xhat.row(r);
            for c in 0..h {
                dg[c] += g[c] * xh[c];
                db[c] += g[c];
            }
        }
    }
    dx
}

fn add_bias(m: &mut DenseMatrix, b: &[f64]) {
    for r in 0..m.rows() {
        axpy(1.0, b, m.row_mut(r));
    }
}

fn add_column_sums(m: &DenseMatrix, out: &mut [f64]) {
    for r in 0..m.rows() {
        axpy(1.0, m.row(r), out);
    }
}

impl MiniLm {
    pub fn new(config: LmConfig, vocab: Vocabulary, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let params = LmParams::init(&config, vocab.len(), rng);
        Ok(Self {
            config,
            vocab,
            params,
            frozen: false,
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// SHA-256 over the vocabulary and every parameter tensor.
    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        for p in self.vocab.pieces() {
            h.bytes("piece", p.as_bytes());
        }
        h.bytes("config", serde_json::to_string(&self.config).expect("config serialises").as_bytes());
        for (name, values) in self.params.named_slices() {
            h.tensor(&name, values);
        }
        h.finish()
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        if tokens.len() > self.config.max_context {
            return Err(Error::ContextOverflow {
                len: tokens.len(),
                max: self.config.max_context,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size()) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }

    /// Token plus position embeddings, one row per token.
    pub fn embed(&self, tokens: &[usize]) -> Result<DenseMatrix> {
        self.check_tokens(tokens)?;
        let h = self.hidden();
        let mut e = DenseMatrix::zeros(tokens.len(), h);
        for (t, &tok) in tokens.iter().enumerate() {
            let row = e.row_mut(t);
            row.copy_from_slice(self.params.tok_emb.row(tok));
            axpy(1.0, self.params.pos_emb.row(t), row);
        }
        Ok(e)
    }

    /// Embeddings of `tokens` with the token-embedding component at
    /// `user_pos` and `item_pos` replaced by `a_user` and `a_item`. Position
    /// embeddings are kept, and every other row is exactly [`MiniLm::embed`].
    pub fn embed_replaced(
        &self,
        tokens: &[usize],
        user_pos: usize,
        a_user: &[f64],
        item_pos: usize,
        a_item: &[f64],
    ) -> Result<DenseMatrix> {
        let h = self.hidden();
        if a_user.len() != h || a_item.len() != h {
            return Err(Error::Shape(format!(
                "adapted embeddings have {} and {} dims, model hidden size {h}",
                a_user.len(),
                a_item.len()
            )));
        }
        if user_pos >= tokens.len() || item_pos >= tokens.len() || user_pos == item_pos {
            return Err(Error::InvalidArgument("slot positions outside the sequence".into()));
        }
        let mut e = self.embed(tokens)?;
        for (pos, a) in [(user_pos, a_user), (item_pos, a_item)] {
            let row = e.row_mut(pos);
            row.copy_from_slice(a);
            axpy(1.0, self.params.pos_emb.row(pos), row);
        }
        Ok(e)
    }

    /// Logits for every position of `tokens`, without any conditioning.
    pub fn forward(&self, tokens: &[usize]) -> Result<DenseMatrix> {
        let e = self.embed(tokens)?;
        let all: Vec<usize> = (0..tokens.len()).collect();
        Ok(self.forward_embedded(&e, None, &all)?.0)
    }

    /// Runs the decoder on an embedding matrix and returns logits for the
    /// rows listed in `outputs` (in that order).
    pub fn forward_embedded(
        &self,
        embedded: &DenseMatrix,
        injection: Option<&Injection>,
        outputs: &[usize],
    ) -> Result<(DenseMatrix, ForwardCache)> {
        let (t_len, h) = (embedded.rows(), embedded.cols());
        if h != self.hidden() {
            return Err(Error::Shape(format!("embeddings have {h} columns, model {}", self.hidden())));
        }
        if t_len == 0 {
            return Err(Error::EmptyInput);
        }
        if t_len > self.config.max_context {
            return Err(Error::ContextOverflow {
                len: t_len,
                max: self.config.max_context,
            });
        }
        if outputs.iter().any(|&o| o >= t_len) {
            return Err(Error::InvalidArgument("output position outside the sequence".into()));
        }
        if let Some(inj) = injection {
            if inj.user.len() != h || inj.item.len() != h {
                return Err(Error::Shape("injected vectors must match the hidden size".into()));
            }
            if inj.user_pos >= t_len || inj.item_pos >= t_len || inj.user_pos == inj.item_pos {
                return Err(Error::InvalidArgument("injection positions outside the sequence".into()));
            }
        }

        let heads = self.config.heads;
        let dh = h / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = embedded.clone();
        let mut caches = Vec::with_capacity(self.params.layers.len());
        for p in &self.params.layers {
            let (mut z, ln1) = layer_norm(&x, &p.ln1_gain, &p.ln1_bias);
            if let Some(inj) = injection {
                axpy(1.0, inj.user, z.row_mut(inj.user_pos));
                axpy(1.0, inj.item, z.row_mut(inj.item_pos));
            }
            let q = z.matmul(&p.wq);
            let k = z.matmul(&p.wk);
            let v = z.matmul(&p.wv);
            let mut attn = DenseMatrix::zeros(t_len, h);
            let mut probs = Vec::with_capacity(heads);
            for head in 0..heads {
                let cols = head * dh..(head + 1) * dh;
                let mut head_probs = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    let qt = &q.row(t)[cols.clone()];
                    let mut w: Vec<f64> = (0..=t).map(|s| scale * dot(qt, &k.row(s)[cols.clone()])).collect();
                    softmax_in_place(&mut w);
                    let out = &mut attn.row_mut(t)[cols.clone()];
                    for (s, &ws) in w.iter().enumerate() {
                        axpy(ws, &v.row(s)[cols.clone()], out);
                    }
                    head_probs.push(w);
                }
                probs.push(head_probs);
            }
            let proj = attn.matmul(&p.wo);
            x.add_assign(&proj);

            let (ln2_out, ln2) = layer_norm(&x, &p.ln2_gain, &p.ln2_bias);
            let mut ff_pre = ln2_out.matmul(&p.w1);
            add_bias(&mut ff_pre, &p.b1);
            let mut ff_act = ff_pre.clone();
            ff_act.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
            let mut ff_out = ff_act.matmul(&p.w2);
            add_bias(&mut ff_out, &p.b2);
            x.add_assign(&ff_out);

            caches.push(LayerCache {
                ln1,
                z,
                q,
                k,
                v,
                probs,
                attn,
                ln2,
                ln2_out,
                ff_pre,
                ff_act,
            });
        }

        let picked = DenseMatrix::from_fn(outputs.len(), h, |r, c| x.get(outputs[r], c));
        let (lnf_out, lnf) = layer_norm(&picked, &self.params.lnf_gain, &self.params.lnf_bias);
        let mut logits = lnf_out.matmul(&self.params.w_out);
        add_bias(&mut logits, &self.params.b_out);
        let cache = ForwardCache {
            len: t_len,
            injected: injection.map(|i| (i.user_pos, i.item_pos)),
            outputs: outputs.to_vec(),
            layers: caches,
            lnf,
            lnf_out,
        };
        Ok((logits, cache))
    }

    /// Back-propagates `d_logits` (one row per output of the cached
    /// forward). Parameter gradients are skipped unless `param_grads` is set.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &DenseMatrix, param_grads: bool) -> Result<LmBackward> {
        if d_logits.rows() != cache.outputs.len() || d_logits.cols() != self.vocab_size() {
            return Err(Error::Shape(format!(
                "logit gradient is {}x{}, expected {}x{}",
                d_logits.rows(),
                d_logits.cols(),
                cache.outputs.len(),
                self.vocab_size()
            )));
        }
        let h = self.hidden();
        let t_len = cache.len;
        let heads = self.config.heads;
        let dh = h / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut grads = param_grads.then(|| self.params.zeros_like());

        let d_lnf_out = d_logits.matmul_nt(&self.params.w_out);
        if let Some(g) = grads.as_mut() {
            g.w_out.add_assign(&cache.lnf_out.matmul_tn(d_logits));
            add_column_sums(d_logits, &mut g.b_out);
        }
        let d_picked = layer_norm_backward(
            &d_lnf_out,
            &cache.lnf,
            &self.params.lnf_gain,
            grads.as_mut().map(|g| (g.lnf_gain.as_mut_slice(), g.lnf_bias.as_mut_slice())),
        );
        let mut dx = DenseMatrix::zeros(t_len, h);
        for (r, &pos) in cache.outputs.iter().enumerate() {
            axpy(1.0, d_picked.row(r), dx.row_mut(pos));
        }

        let mut d_user = vec![0.0; h];
        let mut d_item = vec![0.0; h];
        for (l, (p, c)) in self.params.layers.iter().zip(&cache.layers).enumerate().rev() {
            let mut lg = grads.as_mut().map(|g| &mut g.layers[l]);

            // feed-forward block
            let d_ff_out = &dx;
            let mut d_act = d_ff_out.matmul_nt(&p.w2);
            if let Some(g) = lg.as_deref_mut() {
                g.w2.add_assign(&c.ff_act.matmul_tn(d_ff_out));
                add_column_sums(d_ff_out, &mut g.b2);
            }
            for (d, &pre) in d_act.as_mut_slice().iter_mut().zip(c.ff_pre.as_slice()) {
                *d *= gelu_grad(pre);
            }
            let d_ln2_out = d_act.matmul_nt(&p.w1);
            if let Some(g) = lg.as_deref_mut() {
                g.w1.add_assign(&c.ln2_out.matmul_tn(&d_act));
                add_column_sums(&d_act, &mut g.b1);
            }
            let d_mid = layer_norm_backward(
                &d_ln2_out,
                &c.ln2,
                &p.ln2_gain,
                lg.as_deref_mut().map(|g| (g.ln2_gain.as_mut_slice(), g.ln2_bias.as_mut_slice())),
            );
            dx.add_assign(&d_mid);

            // attention block
            let d_proj = &dx;
            let d_attn = d_proj.matmul_nt(&p.wo);
            if let Some(g) = lg.as_deref_mut() {
                g.wo.add_assign(&c.attn.matmul_tn(d_proj));
            }
            let mut dq = DenseMatrix::zeros(t_len, h);
            let mut dk = DenseMatrix::zeros(t_len, h);
            let mut dv = DenseMatrix::zeros(t_len, h);
            for head in 0..heads {
                let cols = head * dh..(head + 1) * dh;
                for t in 0..t_len {
                    let w = &c.probs[head][t];
                    let d_out = &d_attn.row(t)[cols.clone()];
                    let dp: Vec<f64> = (0..=t).map(|s| dot(d_out, &c.v.row(s)[cols.clone()])).collect();
                    let mean = dot(w, &dp);
                    for s in 0..=t {
                        axpy(w[s], d_out, &mut dv.row_mut(s)[cols.clone()]);
                        let ds = w[s] * (dp[s] - mean) * scale;
                        if ds != 0.0 {
                            axpy(ds, &c.k.row(s)[cols.clone()], &mut dq.row_mut(t)[cols.clone()]);
                            axpy(ds, &c.q.row(t)[cols.clone()], &mut dk.row_mut(s)[cols.clone()]);
                        }
                    }
                }
            }
            let mut dz = dq.matmul_nt(&p.wq);
            dz.add_assign(&dk.matmul_nt(&p.wk));
            dz.add_assign(&dv.matmul_nt(&p.wv));
            if let Some(g) = lg.as_deref_mut() {
                g.wq.add_assign(&c.z.matmul_tn(&dq));
                g.wk.add_assign(&c.z.matmul_tn(&dk));
                g.wv.add_assign(&c.z.matmul_tn(&dv));
            }
            if let Some((up, ip)) = cache.injected {
                axpy(1.0, dz.row(up), &mut d_user);
                axpy(1.0, dz.row(ip), &mut d_item);
            }
            let d_in = layer_norm_backward(
                &dz,
                &c.ln1,
                &p.ln1_gain,
                lg.as_deref_mut().map(|g| (g.ln1_gain.as_mut_slice(), g.ln1_bias.as_mut_slice())),
            );
            dx.add_assign(&d_in);
        }

        Ok(LmBackward {
            d_embed: dx,
            d_inject: cache.injected.map(|_| (d_user, d_item)),
            params: grads,
        })
    }

    /// Adds the gradient of an embedding matrix produced by `embed` (or
    /// `embed_replaced`) into token/position embedding gradients. Rows
    /// listed in `skip_token` received replaced token embeddings and only
    /// feed the position table.
    pub fn accumulate_embedding_grad(
        &self,
        tokens: &[usize],
        d_embed: &DenseMatrix,
        skip_token: &[usize],
        grads: &mut LmParams,
    ) {
        for (t, &tok) in tokens.iter().enumerate() {
            let row = d_embed.row(t);
            if !skip_token.contains(&t) {
                axpy(1.0, row, grads.tok_emb.row_mut(tok));
            }
            axpy(1.0, row, grads.pos_emb.row_mut(t));
        }
    }
}
