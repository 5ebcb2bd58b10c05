//! Independent oracles shared by the integration tests. The reference
//! forward pass uses plain nested loops, not the library's matrix helpers.

#![allow(dead_code)]

pub mod metrics;

use eat_core::model::{ModelConfig, ModelWeights, TokenId, PAD_ID};
use eat_core::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

fn norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - mu) / (var + 1e-5).sqrt()).collect()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Attention logits are scaled by `beta` when given and left untouched
/// otherwise.
pub fn reference_logits(tokens: &[TokenId], w: &ModelWeights, beta: Option<f64>) -> Vec<f64> {
    let c = &w.config;
    let n = tokens.iter().take_while(|&&t| t != PAD_ID).count();
    let (d, dk) = (c.model_dim, c.head_dim);
    let tok = mat(&w.token_embedding);
    let pos = mat(&w.position_embedding);
    let mut x: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|j| tok[tokens[i] as usize][j] + pos[i][j]).collect()).collect();
    for l in &w.layers {
        let h: Vec<Vec<f64>> = x.iter().map(|r| norm(r)).collect();
        let (q, k, v) = (mul(&h, &mat(&l.w_q)), mul(&h, &mat(&l.w_k)), mul(&h, &mat(&l.w_v)));
        let mut att = vec![vec![0.0; d]; n];
        for head in 0..c.num_heads {
            let cols = head * dk..(head + 1) * dk;
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        let s = cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt();
                        match beta {
                            Some(b) => b * s,
                            None => s,
                        }
                    })
                    .collect();
                let p = softmax(&scores);
                for c in cols.clone() {
                    att[i][c] = (0..n).map(|j| p[j] * v[j][c]).sum();
                }
            }
        }
        let o = mul(&att, &mat(&l.w_o));
        for (xr, or) in x.iter_mut().zip(&o) {
            for (a, b) in xr.iter_mut().zip(or) {
                *a += b;
            }
        }
        let h: Vec<Vec<f64>> = x.iter().map(|r| norm(r)).collect();
        let mut f = mul(&h, &mat(&l.w_1));
        for r in f.iter_mut() {
            for (a, b) in r.iter_mut().zip(l.b_1.data()) {
                *a = (*a + b).max(0.0);
            }
        }
        let f = mul(&f, &mat(&l.w_2));
        for (xr, fr) in x.iter_mut().zip(&f) {
            for ((a, b), bias) in xr.iter_mut().zip(fr).zip(l.b_2.data()) {
                *a += b + bias;
            }
        }
    }
    let pooled = norm(&x[0]);
    let cw = mat(&w.classifier_w);
    (0..c.num_classes)
        .map(|j| w.classifier_b.data()[j] + pooled.iter().zip(&cw).map(|(p, r)| p * r[j]).sum::<f64>())
        .collect()
}

/// Random small config, nonzero biases and a right-padded input.
pub fn random_case(seed: u64) -> (ModelWeights, Vec<TokenId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = rng.random_range(1..=3);
    let dk = rng.random_range(2..=5);
    let max_len = rng.random_range(2..=10);
    let vocab = rng.random_range(4..=20);
    let cfg = ModelConfig::new(rng.random_range(1..=3), heads, heads * dk, max_len, vocab).unwrap();
    let mut w = ModelWeights::init(cfg, rng.random(), rng.random_range(0.1..1.0)).unwrap();
    for (_, m) in w.tensors_mut() {
        for v in m.data_mut() {
            if *v == 0.0 {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    let width = rng.random_range(1..=max_len);
    let len = rng.random_range(1..=width);
    let tokens = (0..width)
        .map(|i| if i < len { rng.random_range(1..vocab as TokenId) } else { PAD_ID })
        .collect();
    (w, tokens)
}
