//! Toy pre-norm transformer encoder classifier with temperature-scalable
//! self-attention.
//!
//! Each block computes
//!
//! ```text
//! x ← x + Attnβ(LN(x)) · W_O
//! x ← x + ReLU(LN(x) · W_1 + b_1) · W_2 + b_2
//! ```
//!
//! where `Attnβ` is multi-head attention with logits `β · q·k / √d_k`. The
//! layer norms carry no learnable gain or bias. The class logits are read
//! from the final-normed hidden state at position 0 (the begin-of-sequence
//! token).
//!
//! Inputs may be right-padded with [`PAD_ID`]. Padded positions are never
//! computed: they are masked out as keys for every query, and since the
//! classifier only reads position 0, dropping them as queries changes
//! nothing downstream.

mod io;

pub use io::{load_weights, load_weights_expecting, save_weights, WeightsIoError, FORMAT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, matmul, Matrix, NumericsError};

pub type TokenId = u32;

/// A token sequence with a gold label.
pub trait LabeledSequence: Sync {
    fn tokens(&self) -> &[TokenId];
    fn label(&self) -> u8;
}

impl LabeledSequence for (Vec<TokenId>, u8) {
    fn tokens(&self) -> &[TokenId] {
        &self.0
    }
    fn label(&self) -> u8 {
        self.1
    }
}

/// Reserved right-padding token.
pub const PAD_ID: TokenId = 0;
/// Reserved begin-of-sequence token; the classifier pools from it.
pub const BOS_ID: TokenId = 1;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("sequence length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("token id {id} at position {position} is outside the vocabulary of {vocab_size}")]
    OutOfVocabulary { id: TokenId, position: usize, vocab_size: usize },
    #[error("non-pad token after padding at position {0}")]
    PaddingNotTrailing(usize),
    #[error("temperature must be finite and non-negative, got {0}")]
    NegativeTemperature(f64),
    #[error("threshold must lie in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error("probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("attention shape mismatch: {0}")]
    AttentionShape(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub head_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Builds a config with `head_dim = model_dim / num_heads` and two classes.
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        model_dim: usize,
        max_len: usize,
        vocab_size: usize,
    ) -> Result<Self, ModelError> {
        let head_dim = model_dim.checked_div(num_heads).unwrap_or(0);
        let cfg = Self {
            num_layers,
            num_heads,
            model_dim,
            head_dim,
            max_len,
            vocab_size,
            num_classes: 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1".into());
        }
        if self.num_heads == 0 || self.head_dim == 0 {
            return bad("num_heads and head_dim must be positive".into());
        }
        if self.num_heads * self.head_dim != self.model_dim {
            return bad(format!(
                "num_heads ({}) x head_dim ({}) != model_dim ({})",
                self.num_heads, self.head_dim, self.model_dim
            ));
        }
        if self.max_len < 2 {
            return bad(format!("max_len must be at least 2, got {}", self.max_len));
        }
        if self.vocab_size < 4 {
            return bad(format!("vocab_size must be at least 4, got {}", self.vocab_size));
        }
        if self.num_classes != 2 {
            return bad(format!("num_classes must be 2, got {}", self.num_classes));
        }
        Ok(())
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.model_dim
    }
}

/// Attention temperature scaling factor β. `β = 1` is the unmodulated model.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Temperature(f64);

impl Temperature {
    pub const UNIT: Temperature = Temperature(1.0);

    pub fn new(beta: f64) -> Result<Self, ModelError> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(ModelError::NegativeTemperature(beta));
        }
        Ok(Self(beta))
    }

    pub fn beta(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self::UNIT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    /// Query projection, `d × d`; head `k` owns columns `k·d_k..(k+1)·d_k`.
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub w_1: Matrix,
    /// `1 × 4d`
    pub b_1: Matrix,
    pub w_2: Matrix,
    /// `1 × d`
    pub b_2: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub classifier_w: Matrix,
    /// `1 × num_classes`
    pub classifier_b: Matrix,
}

impl ModelWeights {
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.model_dim;
        let f = config.ffn_dim();
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                w_q: Matrix::zeros(d, d),
                w_k: Matrix::zeros(d, d),
                w_v: Matrix::zeros(d, d),
                w_o: Matrix::zeros(d, d),
                w_1: Matrix::zeros(d, f),
                b_1: Matrix::zeros(1, f),
                w_2: Matrix::zeros(f, d),
                b_2: Matrix::zeros(1, d),
            })
            .collect();
        Ok(Self {
            config,
            token_embedding: Matrix::zeros(config.vocab_size, d),
            position_embedding: Matrix::zeros(config.max_len, d),
            layers,
            classifier_w: Matrix::zeros(d, config.num_classes),
            classifier_b: Matrix::zeros(1, config.num_classes),
        })
    }

    /// Seeded Gaussian initialisation with standard deviation `std`; biases
    /// start at zero. Tensors are filled in [`ModelWeights::tensors`] order.
    pub fn init(config: ModelConfig, seed: u64, std: f64) -> Result<Self, ModelError> {
        let mut w = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        for (name, m) in w.tensors_mut() {
            if is_bias(&name) {
                continue;
            }
            for v in m.data_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(w)
    }

    /// All parameter tensors in canonical order, with stable names.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layers.{l}.w_q"), &layer.w_q));
            out.push((format!("layers.{l}.w_k"), &layer.w_k));
            out.push((format!("layers.{l}.w_v"), &layer.w_v));
            out.push((format!("layers.{l}.w_o"), &layer.w_o));
            out.push((format!("layers.{l}.w_1"), &layer.w_1));
            out.push((format!("layers.{l}.b_1"), &layer.b_1));
            out.push((format!("layers.{l}.w_2"), &layer.w_2));
            out.push((format!("layers.{l}.b_2"), &layer.b_2));
        }
        out.push(("classifier_w".to_string(), &self.classifier_w));
        out.push(("classifier_b".to_string(), &self.classifier_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), &mut self.token_embedding),
            ("position_embedding".to_string(), &mut self.position_embedding),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{l}.w_q"), &mut layer.w_q));
            out.push((format!("layers.{l}.w_k"), &mut layer.w_k));
            out.push((format!("layers.{l}.w_v"), &mut layer.w_v));
            out.push((format!("layers.{l}.w_o"), &mut layer.w_o));
            out.push((format!("layers.{l}.w_1"), &mut layer.w_1));
            out.push((format!("layers.{l}.b_1"), &mut layer.b_1));
            out.push((format!("layers.{l}.w_2"), &mut layer.w_2));
            out.push((format!("layers.{l}.b_2"), &mut layer.b_2));
        }
        out.push(("classifier_w".to_string(), &mut self.classifier_w));
        out.push(("classifier_b".to_string(), &mut self.classifier_b));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Checks every tensor shape against `self.config`.
    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let expected = ModelWeights::zeros(self.config)?;
        if self.layers.len() != expected.layers.len() {
            return Err(ModelError::InvalidConfig(format!(
                "{} layers present, config says {}",
                self.layers.len(),
                expected.layers.len()
            )));
        }
        for ((name, got), (_, want)) in self.tensors().into_iter().zip(expected.tensors()) {
            if got.shape() != want.shape() {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} has shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn is_bias(name: &str) -> bool {
    name.ends_with("b_1") || name.ends_with("b_2") || name == "classifier_b"
}

/// Single-head scaled dot-product attention,
/// `softmax(β · Q Kᵀ / √d_k) · V`, with key columns restricted to `mask`.
///
/// `β = 0` yields exact uniform rows over the live keys without evaluating
/// the logits. Returns the attended values and the attention map.
pub fn scaled_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &[bool],
    beta: Temperature,
) -> Result<(Matrix, Matrix), ModelError> {
    if q.cols() != k.cols() {
        return Err(ModelError::AttentionShape(format!(
            "query width {} != key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() || k.rows() != mask.len() {
        return Err(ModelError::AttentionShape(format!(
            "{} keys, {} values, mask of {}",
            k.rows(),
            v.rows(),
            mask.len()
        )));
    }
    let probs = attention_map(q, k, mask, beta)?;
    let out = matmul(&probs, v)?;
    Ok((out, probs))
}

fn attention_map(
    q: &Matrix,
    k: &Matrix,
    mask: &[bool],
    beta: Temperature,
) -> Result<Matrix, ModelError> {
    let n_q = q.rows();
    let n_k = k.rows();
    let mut probs = Matrix::zeros(n_q, n_k);
    let beta = beta.beta();
    if beta == 0.0 {
        let live = mask.iter().filter(|m| **m).count();
        if live == 0 {
            return Err(NumericsError::AllMasked.into());
        }
        let u = 1.0 / live as f64;
        for i in 0..n_q {
            for (p, &m) in probs.row_mut(i).iter_mut().zip(mask) {
                *p = if m { u } else { 0.0 };
            }
        }
        return Ok(probs);
    }
    let sqrt_dk = (q.cols() as f64).sqrt();
    let mut logits = vec![0.0; n_k];
    for i in 0..n_q {
        let qi = q.row(i);
        for (j, l) in logits.iter_mut().enumerate() {
            *l = if mask[j] { beta * (numerics::dot(qi, k.row(j)) / sqrt_dk) } else { 0.0 };
        }
        numerics::softmax_masked_into(&logits, mask, probs.row_mut(i))?;
    }
    Ok(probs)
}

/// Hard label: 1 iff `prob_positive >= threshold`.
pub fn predict(prob_positive: f64, threshold: f64) -> Result<u8, ModelError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ModelError::BadThreshold(threshold));
    }
    if !(0.0..=1.0).contains(&prob_positive) {
        return Err(ModelError::BadProbability(prob_positive));
    }
    Ok(u8::from(prob_positive >= threshold))
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-layer, per-head attention maps plus the pooled representation and
/// logits of one forward pass.
///
/// Maps are `width × width` where `width` is the padded input length. Rows
/// and columns at padded positions are zero; rows `0..sentence_len` are
/// distributions over columns `0..sentence_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub width: usize,
    pub sentence_len: usize,
    /// `attention[l][h]`
    pub attention: Vec<Vec<Matrix>>,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn num_layers(&self) -> usize {
        self.attention.len()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub probs: Vec<f64>,
    pub trace: Option<ForwardTrace>,
}

impl ForwardOutput {
    pub fn prob_positive(&self) -> f64 {
        self.probs[1]
    }
}

/// Runs the classifier at temperature `beta` (applied in every layer and
/// every head). With `capture` the attention maps are returned as well;
/// capturing does not change the arithmetic.
pub fn forward(
    tokens: &[TokenId],
    weights: &ModelWeights,
    beta: Temperature,
    capture: bool,
) -> Result<ForwardOutput, ModelError> {
    let pass = forward_pass(tokens, weights, beta)?;
    let trace = capture.then(|| pass.trace(tokens.len()));
    Ok(ForwardOutput { probs: pass.probs, trace })
}

/// Length of the unpadded prefix, validating ids and padding layout.
pub fn sentence_len(tokens: &[TokenId], config: &ModelConfig) -> Result<usize, ModelError> {
    if tokens.len() > config.max_len {
        return Err(ModelError::TooLong { len: tokens.len(), max_len: config.max_len });
    }
    let n = tokens.iter().position(|&t| t == PAD_ID).unwrap_or(tokens.len());
    if n == 0 {
        return Err(ModelError::EmptySequence);
    }
    if let Some(p) = tokens[n..].iter().position(|&t| t != PAD_ID) {
        return Err(ModelError::PaddingNotTrailing(n + p));
    }
    for (position, &id) in tokens[..n].iter().enumerate() {
        if id as usize >= config.vocab_size {
            return Err(ModelError::OutOfVocabulary { id, position, vocab_size: config.vocab_size });
        }
    }
    Ok(n)
}

/// Parameter-free layer norm of one row; returns `1/σ`.
#[inline]
pub(crate) fn layer_norm_row(x: &[f64], y: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for (o, &v) in y.iter_mut().zip(x) {
        *o = (v - mean) * inv;
    }
    inv
}

pub(crate) fn layer_norm(x: &Matrix) -> (Matrix, Vec<f64>) {
    let mut y = Matrix::zeros(x.rows(), x.cols());
    let inv = (0..x.rows()).map(|r| layer_norm_row(x.row(r), y.row_mut(r))).collect();
    (y, inv)
}

/// Activations of one block, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub normed_in: Matrix,
    pub inv_std_in: Vec<f64>,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// one `n × n` map per head
    pub attention: Vec<Matrix>,
    pub heads_out: Matrix,
    pub normed_mid: Matrix,
    pub inv_std_mid: Vec<f64>,
    pub ffn_pre: Matrix,
    pub ffn_act: Matrix,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardPass {
    pub tokens: Vec<TokenId>,
    pub layers: Vec<LayerCache>,
    pub pooled: Vec<f64>,
    pub pooled_inv_std: f64,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardPass {
    pub fn sentence_len(&self) -> usize {
        self.tokens.len()
    }

    fn trace(&self, width: usize) -> ForwardTrace {
        let n = self.sentence_len();
        let attention = self
            .layers
            .iter()
            .map(|layer| {
                layer
                    .attention
                    .iter()
                    .map(|p| {
                        let mut m = Matrix::zeros(width, width);
                        for i in 0..n {
                            m.row_mut(i)[..n].copy_from_slice(p.row(i));
                        }
                        m
                    })
                    .collect()
            })
            .collect();
        ForwardTrace {
            width,
            sentence_len: n,
            attention,
            pooled: self.pooled.clone(),
            logits: self.logits.clone(),
        }
    }
}

pub(crate) fn forward_pass(
    tokens: &[TokenId],
    weights: &ModelWeights,
    beta: Temperature,
) -> Result<ForwardPass, ModelError> {
    let cfg = &weights.config;
    let n = sentence_len(tokens, cfg)?;
    let tokens = &tokens[..n];
    let d = cfg.model_dim;
    let dk = cfg.head_dim;
    let mask = vec![true; n];

    let mut x = Matrix::zeros(n, d);
    for (i, &t) in tokens.iter().enumerate() {
        let te = weights.token_embedding.row(t as usize);
        let pe = weights.position_embedding.row(i);
        for ((o, a), b) in x.row_mut(i).iter_mut().zip(te).zip(pe) {
            *o = a + b;
        }
    }

    let mut caches = Vec::with_capacity(cfg.num_layers);
    for lw in &weights.layers {
        let (normed_in, inv_std_in) = layer_norm(&x);
        let q = matmul(&normed_in, &lw.w_q)?;
        let k = matmul(&normed_in, &lw.w_k)?;
        let v = matmul(&normed_in, &lw.w_v)?;
        let mut heads_out = Matrix::zeros(n, d);
        let mut attention = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let qh = q.col_block(h * dk, dk);
            let kh = k.col_block(h * dk, dk);
            let vh = v.col_block(h * dk, dk);
            let (oh, ph) = scaled_attention(&qh, &kh, &vh, &mask, beta)?;
            heads_out.set_col_block(h * dk, &oh);
            attention.push(ph);
        }
        x.add_assign(&matmul(&heads_out, &lw.w_o)?);

        let (normed_mid, inv_std_mid) = layer_norm(&x);
        let mut ffn_pre = matmul(&normed_mid, &lw.w_1)?;
        ffn_pre.add_row_vector(lw.b_1.data());
        let mut ffn_act = ffn_pre.clone();
        for v in ffn_act.data_mut() {
            *v = v.max(0.0);
        }
        let mut ffn_out = matmul(&ffn_act, &lw.w_2)?;
        ffn_out.add_row_vector(lw.b_2.data());
        x.add_assign(&ffn_out);

        caches.push(LayerCache {
            normed_in,
            inv_std_in,
            q,
            k,
            v,
            attention,
            heads_out,
            normed_mid,
            inv_std_mid,
            ffn_pre,
            ffn_act,
        });
    }

    let mut pooled = vec![0.0; d];
    let pooled_inv_std = layer_norm_row(x.row(0), &mut pooled);
    let c = cfg.num_classes;
    let mut logits = weights.classifier_b.data().to_vec();
    for (j, l) in logits.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &p) in pooled.iter().enumerate() {
            acc += p * weights.classifier_w.get(i, j);
        }
        *l += acc;
    }
    let mut probs = vec![0.0; c];
    numerics::softmax_into(&logits, &mut probs);

    Ok(ForwardPass {
        tokens: tokens.to_vec(),
        layers: caches,
        pooled,
        pooled_inv_std,
        logits,
        probs,
    })
}
