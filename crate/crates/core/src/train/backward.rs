use crate::model::{forward_pass, ModelError, ModelWeights, Temperature, TokenId};
use crate::numerics::{matmul_nt, matmul_tn, Matrix};

use super::cross_entropy;

/// Gradient of the loss with respect to every tensor of [`ModelWeights`];
/// same shapes, same canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub ModelWeights);

impl Gradients {
    pub fn zeros_like(weights: &ModelWeights) -> Self {
        Gradients(ModelWeights::zeros(weights.config).expect("config already validated"))
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.0.tensors()
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &Gradients) {
        for ((_, a), (_, b)) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (_, m) in self.0.tensors_mut() {
            m.scale(k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }
}

/// Output of one reverse pass.
#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub loss: f64,
    pub prob_positive: f64,
    pub gradients: Gradients,
}

/// Backprop of a parameter-free layer norm row: `dx = (dy − mean(dy) − y·mean(dy⊙y)) / σ`.
fn layer_norm_backward_row(dy: &[f64], y: &[f64], inv_std: f64, dx: &mut [f64]) {
    let n = dy.len() as f64;
    let mean_dy = dy.iter().sum::<f64>() / n;
    let mean_dy_y = dy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
    for ((o, &g), &yy) in dx.iter_mut().zip(dy).zip(y) {
        *o += inv_std * (g - mean_dy - yy * mean_dy_y);
    }
}

fn layer_norm_backward(dy: &Matrix, y: &Matrix, inv_std: &[f64], dx: &mut Matrix) {
    for r in 0..dy.rows() {
        layer_norm_backward_row(dy.row(r), y.row(r), inv_std[r], dx.row_mut(r));
    }
}

/// Column sums as a `1 × cols` matrix.
fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

/// Loss and exact gradients for one example. Training is always at `β = 1`.
pub fn backward(
    tokens: &[TokenId],
    gold: u8,
    weights: &ModelWeights,
) -> Result<BackwardOutput, ModelError> {
    let pass = forward_pass(tokens, weights, Temperature::UNIT)?;
    let cfg = &weights.config;
    let n = pass.sentence_len();
    let d = cfg.model_dim;
    let dk = cfg.head_dim;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut grads = Gradients::zeros_like(weights);
    let g = &mut grads.0;

    let loss = cross_entropy(&pass.probs, gold);

    // softmax + cross-entropy
    let mut d_logits = pass.probs.clone();
    d_logits[gold as usize] -= 1.0;
    for (o, v) in g.classifier_b.data_mut().iter_mut().zip(&d_logits) {
        *o = *v;
    }
    let mut d_pooled = vec![0.0; d];
    for i in 0..d {
        for (j, &dl) in d_logits.iter().enumerate() {
            g.classifier_w.set(i, j, pass.pooled[i] * dl);
            d_pooled[i] += weights.classifier_w.get(i, j) * dl;
        }
    }

    let mut dx = Matrix::zeros(n, d);
    layer_norm_backward_row(&d_pooled, &pass.pooled, pass.pooled_inv_std, dx.row_mut(0));

    for (l, (lw, cache)) in weights.layers.iter().zip(&pass.layers).enumerate().rev() {
        let lg = &mut g.layers[l];

        // feed-forward sublayer
        lg.w_2 = matmul_tn(&cache.ffn_act, &dx)?;
        lg.b_2 = column_sums(&dx);
        let mut d_pre = matmul_nt(&dx, &lw.w_2)?;
        for (gv, &pre) in d_pre.data_mut().iter_mut().zip(cache.ffn_pre.data()) {
            if pre <= 0.0 {
                *gv = 0.0;
            }
        }
        lg.w_1 = matmul_tn(&cache.normed_mid, &d_pre)?;
        lg.b_1 = column_sums(&d_pre);
        let d_normed_mid = matmul_nt(&d_pre, &lw.w_1)?;
        layer_norm_backward(&d_normed_mid, &cache.normed_mid, &cache.inv_std_mid, &mut dx);

        // attention sublayer
        lg.w_o = matmul_tn(&cache.heads_out, &dx)?;
        let d_heads = matmul_nt(&dx, &lw.w_o)?;
        let mut dq = Matrix::zeros(n, d);
        let mut dkm = Matrix::zeros(n, d);
        let mut dv = Matrix::zeros(n, d);
        for (h, p) in cache.attention.iter().enumerate() {
            let off = h * dk;
            let qh = cache.q.col_block(off, dk);
            let kh = cache.k.col_block(off, dk);
            let vh = cache.v.col_block(off, dk);
            let doh = d_heads.col_block(off, dk);
            let dp = matmul_nt(&doh, &vh)?;
            dv.set_col_block(off, &matmul_tn(p, &doh)?);
            // softmax Jacobian, then the 1/√d_k factor (β = 1)
            let mut ds = Matrix::zeros(n, n);
            for i in 0..n {
                let pr = p.row(i);
                let dpr = dp.row(i);
                let inner: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
                for (o, (&pij, &dpij)) in ds.row_mut(i).iter_mut().zip(pr.iter().zip(dpr)) {
                    *o = pij * (dpij - inner) * scale;
                }
            }
            dq.set_col_block(off, &crate::numerics::matmul(&ds, &kh)?);
            dkm.set_col_block(off, &matmul_tn(&ds, &qh)?);
        }
        lg.w_q = matmul_tn(&cache.normed_in, &dq)?;
        lg.w_k = matmul_tn(&cache.normed_in, &dkm)?;
        lg.w_v = matmul_tn(&cache.normed_in, &dv)?;
        let mut d_normed_in = matmul_nt(&dq, &lw.w_q)?;
        d_normed_in.add_assign(&matmul_nt(&dkm, &lw.w_k)?);
        d_normed_in.add_assign(&matmul_nt(&dv, &lw.w_v)?);
        layer_norm_backward(&d_normed_in, &cache.normed_in, &cache.inv_std_in, &mut dx);
    }

    for (i, &t) in pass.tokens.iter().enumerate() {
        let row = dx.row(i);
        for (o, v) in g.token_embedding.row_mut(t as usize).iter_mut().zip(row) {
            *o += v;
        }
        for (o, v) in g.position_embedding.row_mut(i).iter_mut().zip(row) {
            *o += v;
        }
    }

    Ok(BackwardOutput { loss, prob_positive: pass.probs[1], gradients: grads })
}
