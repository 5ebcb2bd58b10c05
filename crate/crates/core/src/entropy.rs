//! Attention entropy of a captured forward pass.
//!
//! Per layer `l` and sentence length `T_s`:
//!
//! 1. average the raw maps over heads, `a′[i][j] = mean_h a[h][i][j]`;
//! 2. renormalise each row with a softmax over its first `T_s` columns;
//! 3. take the Shannon entropy `H_i` (nats) of rows `0..T_s`;
//! 4. `H^l = mean_i H_i`, and the sentence total is `H = Σ_l H^l`.
//!
//! Padded columns are dropped before step 2, so the pad count never enters
//! the result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{forward, LabeledSequence, ModelError, ModelWeights, Temperature, ForwardTrace};
use crate::numerics::{entropy_of, format_significant, softmax_into};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("sentence length {len} exceeds trace width {width}")]
    SentenceTooLong { len: usize, width: usize },
    #[error("sentence length must be at least 1")]
    EmptySentence,
    #[error("trace holds no attention maps")]
    MissingTrace,
    #[error("beta grid must contain 1.0 as the baseline")]
    MissingBaseline,
    #[error("entropy sample is empty")]
    EmptySample,
    #[error("baseline entropy is zero; percentage change undefined")]
    ZeroBaseline,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// `H^l` in nats, one per layer.
    pub per_layer: Vec<f64>,
    /// `Σ_l H^l` in nats.
    pub total: f64,
    pub sentence_len: usize,
}

/// Per-layer and total attention entropy of one sentence.
pub fn attention_entropy(trace: &ForwardTrace, sentence_len: usize) -> Result<EntropyReport, EntropyError> {
    if trace.attention.is_empty() || trace.attention.iter().any(Vec::is_empty) {
        return Err(EntropyError::MissingTrace);
    }
    if sentence_len == 0 {
        return Err(EntropyError::EmptySentence);
    }
    if sentence_len > trace.width {
        return Err(EntropyError::SentenceTooLong { len: sentence_len, width: trace.width });
    }
    let ts = sentence_len;
    let mut per_layer = Vec::with_capacity(trace.attention.len());
    let mut averaged = vec![0.0; ts];
    let mut renormed = vec![0.0; ts];
    for heads in &trace.attention {
        let h = heads.len() as f64;
        let mut layer_sum = 0.0;
        for i in 0..ts {
            averaged.fill(0.0);
            for map in heads {
                for (a, v) in averaged.iter_mut().zip(&map.row(i)[..ts]) {
                    *a += v;
                }
            }
            for a in averaged.iter_mut() {
                *a /= h;
            }
            softmax_into(&averaged, &mut renormed);
            layer_sum += entropy_of(&renormed);
        }
        per_layer.push(layer_sum / ts as f64);
    }
    let total = per_layer.iter().sum();
    Ok(EntropyReport { per_layer, total, sentence_len: ts })
}

/// Convenience: forward at `beta`, then [`attention_entropy`].
pub fn sentence_entropy(
    tokens: &[crate::model::TokenId],
    weights: &ModelWeights,
    beta: Temperature,
) -> Result<EntropyReport, EntropyError> {
    let out = forward(tokens, weights, beta, true)?;
    let trace = out.trace.ok_or(EntropyError::MissingTrace)?;
    let len = trace.sentence_len;
    attention_entropy(&trace, len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub mean_total_entropy: f64,
    pub pct_change_vs_beta1: f64,
}

/// Mean total attention entropy over `sample` for every β in `grid`, with
/// the percentage change relative to the β = 1 row. Rows follow grid order.
pub fn entropy_sweep<E: LabeledSequence>(
    weights: &ModelWeights,
    sample: &[E],
    grid: &[f64],
) -> Result<Vec<SweepRow>, EntropyError> {
    if sample.is_empty() {
        return Err(EntropyError::EmptySample);
    }
    if !grid.contains(&1.0) {
        return Err(EntropyError::MissingBaseline);
    }
    let means = grid
        .iter()
        .map(|&b| mean_total_entropy(weights, sample, Temperature::new(b)?))
        .collect::<Result<Vec<f64>, EntropyError>>()?;
    let base = means[grid.iter().position(|&b| b == 1.0).expect("checked above")];
    if base == 0.0 {
        return Err(EntropyError::ZeroBaseline);
    }
    Ok(grid
        .iter()
        .zip(means)
        .map(|(&beta, m)| SweepRow { beta, mean_total_entropy: m, pct_change_vs_beta1: pct_change(m, base) })
        .collect())
}

/// `100 · (value − base) / base`; exactly zero when `value == base`.
pub fn pct_change(value: f64, base: f64) -> f64 {
    if value == base {
        0.0
    } else {
        100.0 * (value - base) / base
    }
}

pub fn mean_total_entropy<E: LabeledSequence>(
    weights: &ModelWeights,
    sample: &[E],
    beta: Temperature,
) -> Result<f64, EntropyError> {
    let totals: Vec<f64> = sample
        .par_iter()
        .map(|e| sentence_entropy(e.tokens(), weights, beta).map(|r| r.total))
        .collect::<Result<_, _>>()?;
    Ok(totals.iter().sum::<f64>() / totals.len() as f64)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("beta,mean_total_entropy_nats,pct_change_vs_beta1\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.beta,
            format_significant(r.mean_total_entropy, 6),
            format_significant(r.pct_change_vs_beta1, 6)
        ));
    }
    out
}
