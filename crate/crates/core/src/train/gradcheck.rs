use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{forward, ModelError, ModelWeights, Temperature, TokenId};

use super::{backward, cross_entropy};

/// Finite-difference stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    /// `(L(w+h) − L(w−h)) / 2h`
    Central,
    /// `(−L(w+2h) + 8L(w+h) − 8L(w−h) + L(w−2h)) / 12h`
    FivePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub stencil: Stencil,
    /// Finite-difference step `h`.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Relative error is `|a − n| / max(|a|, |n|, abs_floor)`.
    pub abs_floor: f64,
    /// Check at most this many parameters, sampled with `seed`; `None`
    /// checks every parameter.
    pub max_params: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { stencil: Stencil::Central, step: 1e-5, tolerance: 1e-4, abs_floor: 1e-6, max_params: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offender {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameters whose error exceeds the tolerance, worst first.
    pub offenders: Vec<Offender>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.offenders.is_empty()
    }
}

/// Compares analytic gradients against central finite differences of the
/// cross-entropy loss. Failures are reported, never raised; the only error
/// is an invalid sample.
pub fn grad_check(
    weights: &ModelWeights,
    tokens: &[TokenId],
    gold: u8,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, ModelError> {
    let analytic = backward(tokens, gold, weights)?.gradients;
    let sizes: Vec<usize> = weights.tensors().iter().map(|(_, m)| m.data().len()).collect();
    let total: usize = sizes.iter().sum();

    let mut picks: Vec<usize> = match config.max_params {
        Some(k) if k < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rand::seq::index::sample(&mut rng, total, k).into_vec()
        }
        _ => (0..total).collect(),
    };
    picks.sort_unstable();

    let loss_at = |w: &ModelWeights| -> Result<f64, ModelError> {
        let out = forward(tokens, w, Temperature::UNIT, false)?;
        Ok(cross_entropy(&out.probs, gold))
    };

    let names: Vec<String> = weights.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic_flat: Vec<&[f64]> = analytic.tensors().into_iter().map(|(_, m)| m.data()).collect();
    let mut probe = weights.clone();
    let mut offenders = Vec::new();
    let mut max_rel_error = 0.0f64;

    for flat in &picks {
        let (mut t, mut idx) = (0usize, *flat);
        while idx >= sizes[t] {
            idx -= sizes[t];
            t += 1;
        }
        let original = weights.tensors()[t].1.data()[idx];
        let set = |w: &mut ModelWeights, v: f64| {
            w.tensors_mut()[t].1.data_mut()[idx] = v;
        };
        let h = config.step;
        let mut loss_shifted = |k: f64| -> Result<f64, ModelError> {
            set(&mut probe, original + k * h);
            loss_at(&probe)
        };
        let numeric = match config.stencil {
            Stencil::Central => (loss_shifted(1.0)? - loss_shifted(-1.0)?) / (2.0 * h),
            Stencil::FivePoint => {
                let (p2, p1, m1, m2) =
                    (loss_shifted(2.0)?, loss_shifted(1.0)?, loss_shifted(-1.0)?, loss_shifted(-2.0)?);
                (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h)
            }
        };
        set(&mut probe, original);
        let a = analytic_flat[t][idx];
        let denom = a.abs().max(numeric.abs()).max(config.abs_floor);
        let rel_error = (a - numeric).abs() / denom;
        max_rel_error = max_rel_error.max(rel_error);
        if rel_error > config.tolerance || !rel_error.is_finite() {
            offenders.push(Offender { tensor: names[t].clone(), index: idx, analytic: a, numeric, rel_error });
        }
    }
    offenders.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    Ok(GradCheckReport { checked: picks.len(), max_rel_error, offenders })
}
