//! Mixture-of-experts adapter mapping collaborative embeddings into the
//! language model's hidden space.
//!
//! Each expert is a bias-free linear map `y_e = W_e^T x`. A dense gating
//! router weighs the experts with `g = softmax(G^T x + eta)`, where `eta` is
//! Gaussian noise in training mode. In training mode each expert output
//! coordinate is also dropped independently with probability `p` and the
//! survivors are rescaled by `1 / (1 - p)`. The adapted embedding is
//! `a = sum_e g_e * dropout(y_e)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    axpy, dot, finite_difference_check, softmax_in_place, ContentHasher, DenseMatrix,
    GradCheckReport, Rng,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub num_experts: usize,
    pub dropout: f64,
    pub gate_noise: f64,
    /// Use a second adapter for item embeddings instead of sharing one.
    pub separate_item_adapter: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            num_experts: 8,
            dropout: 0.2,
            gate_noise: 0.01,
            separate_item_adapter: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoeAdapter {
    pub experts: Vec<DenseMatrix>,
    pub gate: DenseMatrix,
    pub gate_noise: f64,
    pub dropout: f64,
    pub mode: Mode,
}

/// Everything the backward pass needs from one forward call.
#[derive(Clone, Debug)]
pub struct AdapterTrace {
    input: Vec<f64>,
    weights: Vec<f64>,
    /// Per expert, the output after dropout and rescaling.
    expert_outputs: Vec<Vec<f64>>,
    /// Per expert, the dropout multiplier (0 or 1/(1-p); 1 at inference).
    masks: Vec<Vec<f64>>,
}

impl AdapterTrace {
    pub fn gate_weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterGrads {
    pub experts: Vec<DenseMatrix>,
    pub gate: DenseMatrix,
    pub input: Vec<f64>,
}

impl AdapterGrads {
    pub fn zeros_like(adapter: &MoeAdapter) -> Self {
        Self {
            experts: adapter
                .experts
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
                .collect(),
            gate: DenseMatrix::zeros(adapter.gate.rows(), adapter.gate.cols()),
            input: vec![0.0; adapter.input_dim()],
        }
    }

    pub fn accumulate(&mut self, other: &AdapterGrads) {
        for (a, b) in self.experts.iter_mut().zip(&other.experts) {
            a.add_assign(b);
        }
        self.gate.add_assign(&other.gate);
    }

    pub fn scale(&mut self, s: f64) {
        for e in &mut self.experts {
            e.scale(s);
        }
        self.gate.scale(s);
    }

    /// Experts in order, then the gate, matching [`MoeAdapter::param_slices_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.experts {
            out.extend_from_slice(e.as_slice());
        }
        out.extend_from_slice(self.gate.as_slice());
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&v| v == 0.0)
    }
}

impl MoeAdapter {
    /// Experts drawn from `Normal(0, 1/d_in)`, gate zero-initialised so that
    /// routing starts uniform.
    pub fn new(input_dim: usize, output_dim: usize, config: &AdapterConfig, rng: &mut Rng) -> Self {
        let std = 1.0 / (input_dim as f64).sqrt();
        let experts = (0..config.num_experts)
            .map(|_| DenseMatrix::random_normal(input_dim, output_dim, std, rng))
            .collect();
        Self {
            experts,
            gate: DenseMatrix::zeros(input_dim, config.num_experts),
            gate_noise: config.gate_noise,
            dropout: config.dropout,
            mode: Mode::Training,
        }
    }

    pub fn from_parts(experts: Vec<DenseMatrix>, gate: DenseMatrix, gate_noise: f64, dropout: f64) -> Result<Self> {
        let first = experts.first().ok_or(Error::EmptyInput)?;
        let (d_in, d_out) = (first.rows(), first.cols());
        if experts.iter().any(|e| e.rows() != d_in || e.cols() != d_out) {
            return Err(Error::Shape("experts must share one shape".into()));
        }
        if gate.rows() != d_in || gate.cols() != experts.len() {
            return Err(Error::Shape(format!(
                "gate is {}x{}, expected {d_in}x{}",
                gate.rows(),
                gate.cols(),
                experts.len()
            )));
        }
        if !(0.0..1.0).contains(&dropout) || gate_noise < 0.0 {
            return Err(Error::InvalidArgument("dropout must be in [0, 1) and gate noise >= 0".into()));
        }
        Ok(Self {
            experts,
            gate,
            gate_noise,
            dropout,
            mode: Mode::Inference,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.gate.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.experts[0].cols()
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn num_params(&self) -> usize {
        self.experts.iter().map(|e| e.as_slice().len()).sum::<usize>() + self.gate.as_slice().len()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.experts.iter_mut().map(|e| e.as_mut_slice()).collect();
        out.push(self.gate.as_mut_slice());
        out
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for e in &self.experts {
            out.extend_from_slice(e.as_slice());
        }
        out.extend_from_slice(self.gate.as_slice());
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            let n = slice.len();
            slice.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.experts.iter().all(DenseMatrix::is_finite) && self.gate.is_finite()
    }

    pub fn hash_into(&self, label: &str, h: &mut ContentHasher) {
        for (e, w) in self.experts.iter().enumerate() {
            h.tensor(&format!("{label}.expert{e}"), w.as_slice());
        }
        h.tensor(&format!("{label}.gate"), self.gate.as_slice());
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        self.hash_into("adapter", &mut h);
        h.finish()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "adapter expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite adapter input".into()));
        }
        Ok(())
    }

    fn rng_for_mode<'a>(&self, rng: Option<&'a mut Rng>) -> Result<Option<&'a mut Rng>> {
        match self.mode {
            Mode::Inference => Ok(None),
            Mode::Training => rng
                .map(Some)
                .ok_or_else(|| Error::InvalidArgument("training-mode adapter needs an rng".into())),
        }
    }

    fn weights_with(&self, x: &[f64], rng: &mut Option<&mut Rng>) -> Vec<f64> {
        let mut logits = self.gate.vecmat(x);
        if let Some(rng) = rng.as_deref_mut() {
            if self.gate_noise > 0.0 {
                for z in &mut logits {
                    *z += self.gate_noise * rng.next_normal();
                }
            }
        }
        softmax_in_place(&mut logits);
        logits
    }

    /// Routing distribution for `x`. Noise is drawn from `rng` in training
    /// mode only.
    pub fn gate_weights(&self, x: &[f64], rng: Option<&mut Rng>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut rng = self.rng_for_mode(rng)?;
        Ok(self.weights_with(x, &mut rng))
    }

    pub fn forward(&self, x: &[f64], rng: Option<&mut Rng>) -> Result<(Vec<f64>, AdapterTrace)> {
        self.check_input(x)?;
        let mut rng = self.rng_for_mode(rng)?;
        let weights = self.weights_with(x, &mut rng);
        let d_out = self.output_dim();
        let keep = 1.0 - self.dropout;
        let mut out = vec![0.0; d_out];
        let mut expert_outputs = Vec::with_capacity(self.num_experts());
        let mut masks = Vec::with_capacity(self.num_experts());
        for (e, w) in self.experts.iter().enumerate() {
            let mut y = w.vecmat(x);
            let mask: Vec<f64> = match rng.as_deref_mut() {
                Some(rng) if self.dropout > 0.0 => (0..d_out)
                    .map(|_| if rng.bernoulli(self.dropout) { 0.0 } else { 1.0 / keep })
                    .collect(),
                _ => vec![1.0; d_out],
            };
            for (v, m) in y.iter_mut().zip(&mask) {
                *v *= m;
            }
            axpy(weights[e], &y, &mut out);
            expert_outputs.push(y);
            masks.push(mask);
        }
        let trace = AdapterTrace {
            input: x.to_vec(),
            weights,
            expert_outputs,
            masks,
        };
        Ok((out, trace))
    }

    pub fn adapt(&self, x: &[f64], rng: Option<&mut Rng>) -> Result<Vec<f64>> {
        self.forward(x, rng).map(|(a, _)| a)
    }

    /// Gradients of a loss with respect to the experts, the gate and the
    /// input, given the loss gradient `upstream` at the adapter output.
    pub fn backward(&self, trace: &AdapterTrace, upstream: &[f64]) -> Result<AdapterGrads> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, adapter output {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let x = &trace.input;
        let mut grads = AdapterGrads::zeros_like(self);
        let e_count = self.num_experts();
        let mut d_weights = vec![0.0; e_count];
        let mut scaled = vec![0.0; self.output_dim()];
        for e in 0..e_count {
            d_weights[e] = dot(&trace.expert_outputs[e], upstream);
            // d a / d (W_e^T x) = g_e * mask_e
            for ((s, u), m) in scaled.iter_mut().zip(upstream).zip(&trace.masks[e]) {
                *s = trace.weights[e] * m * u;
            }
            grads.experts[e].add_outer(1.0, x, &scaled);
            let back = self.experts[e].matvec(&scaled);
            axpy(1.0, &back, &mut grads.input);
        }
        let g = &trace.weights;
        let mean: f64 = g.iter().zip(&d_weights).map(|(a, b)| a * b).sum();
        let d_logits: Vec<f64> = g.iter().zip(&d_weights).map(|(gi, di)| gi * (di - mean)).collect();
        grads.gate.add_outer(1.0, x, &d_logits);
        let back = self.gate.matvec(&d_logits);
        axpy(1.0, &back, &mut grads.input);
        Ok(grads)
    }

    /// Finite-difference check of [`MoeAdapter::backward`] for
    /// `loss(adapt(x))`, where `loss` returns the value and its gradient at
    /// the adapter output. Only valid in inference mode.
    pub fn check_gradients(
        &self,
        x: &[f64],
        loss: impl Fn(&[f64]) -> (f64, Vec<f64>),
        eps: f64,
        tol: f64,
    ) -> Result<GradCheckReport> {
        if self.mode == Mode::Training {
            return Err(Error::StochasticForward);
        }
        let (out, trace) = self.forward(x, None)?;
        let (_, upstream) = loss(&out);
        let analytic = self.backward(&trace, &upstream)?.flatten();
        let params = self.flatten_params();
        let mut probe = self.clone();
        finite_difference_check(
            |p| {
                probe.set_flat_params(p);
                match probe.adapt(x, None) {
                    Ok(a) => loss(&a).0,
                    Err(_) => f64::NAN,
                }
            },
            &params,
            &analytic,
            eps,
            tol,
            None,
        )
    }
}
