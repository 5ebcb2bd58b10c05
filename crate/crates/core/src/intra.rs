//! Post-training interventions: the temperature search and the random
//! weight-perturbation baseline, both scored on the same evaluation sets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{template_halves, Example, GeneratedCorpus};
use crate::metrics::{auc, fairness_report, FairnessReport, MetricsError, PredictionRecord};
use crate::model::{forward, predict, ModelError, ModelWeights, Temperature, DEFAULT_THRESHOLD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntraError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// AUC is measured on `performance`; the fairness metrics on the paired
/// `fairness` set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSet {
    pub performance: Vec<Example>,
    pub fairness: Vec<Example>,
}

impl EvalSet {
    /// Validation examples with the even-indexed templates.
    pub fn validation(corpus: &GeneratedCorpus) -> Self {
        let (fairness, _) = template_halves(&corpus.templates);
        EvalSet { performance: corpus.validation.clone(), fairness }
    }

    /// Test examples with the odd-indexed templates.
    pub fn test(corpus: &GeneratedCorpus) -> Self {
        let (_, fairness) = template_halves(&corpus.templates);
        EvalSet { performance: corpus.test.clone(), fairness }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: FairnessReport,
    pub performance: Vec<PredictionRecord>,
    pub fairness: Vec<PredictionRecord>,
}

fn score_all(weights: &ModelWeights, beta: Temperature, set: &[Example]) -> Result<Vec<PredictionRecord>, IntraError> {
    set.par_iter()
        .map(|e| {
            let score = forward(&e.tokens, weights, beta, false)?.prob_positive();
            Ok(PredictionRecord {
                score,
                y_hat: predict(score, DEFAULT_THRESHOLD)?,
                y: e.label,
                z: e.z,
                pair_id: e.pair_id,
                subgroups: e.subgroups.clone(),
            })
        })
        .collect()
}

pub fn evaluate_at_beta(weights: &ModelWeights, beta: Temperature, set: &EvalSet) -> Result<Evaluation, IntraError> {
    let performance = score_all(weights, beta, &set.performance)?;
    let fairness = score_all(weights, beta, &set.fairness)?;
    let mut report = fairness_report(&fairness)?;
    report.auc = auc(&performance)?;
    Ok(Evaluation { report, performance, fairness })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Closest to β = 1, then the smaller β.
    ClosestToOneThenSmaller,
}

pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub beta_grid: Vec<f64>,
    pub max_auc_degradation: f64,
    pub tie_break: TieBreak,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { beta_grid: default_grid(), max_auc_degradation: 0.03, tie_break: TieBreak::ClosestToOneThenSmaller }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), IntraError> {
        let bad = |m: &str| Err(IntraError::InvalidConfig(m.to_string()));
        if !self.beta_grid.contains(&1.0) {
            return bad("beta_grid must contain 1.0");
        }
        if self.beta_grid.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return bad("beta_grid values must be finite and non-negative");
        }
        if !(self.max_auc_degradation > 0.0 && self.max_auc_degradation < 1.0) {
            return bad("max_auc_degradation must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn auc_floor(&self, baseline_auc: f64) -> f64 {
        (1.0 - self.max_auc_degradation) * baseline_auc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Maximization,
    Minimization,
    None,
}

impl Regime {
    pub fn of(beta: f64) -> Self {
        if beta < 1.0 {
            Regime::Maximization
        } else if beta > 1.0 {
            Regime::Minimization
        } else {
            Regime::None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub beta: f64,
    pub auc: f64,
    pub dp: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_beta: f64,
    pub regime: Regime,
    pub baseline_auc: f64,
    pub rows: Vec<SearchRow>,
}

impl SearchResult {
    pub fn best_row(&self) -> &SearchRow {
        self.rows.iter().find(|r| r.beta == self.best_beta).expect("best beta comes from the table")
    }

    pub fn baseline_row(&self) -> &SearchRow {
        self.rows.iter().find(|r| r.beta == 1.0).expect("grid contains 1.0")
    }
}

/// Picks the feasible row with the highest DP from a table of
/// `(beta, auc, dp)` values.
pub fn select_beta(table: &[(f64, f64, f64)], config: &SearchConfig) -> Result<SearchResult, IntraError> {
    config.validate()?;
    let baseline_auc = table
        .iter()
        .find(|r| r.0 == 1.0)
        .map(|r| r.1)
        .ok_or_else(|| IntraError::InvalidConfig("table has no beta = 1 row".into()))?;
    let floor = config.auc_floor(baseline_auc);
    let rows: Vec<SearchRow> = table
        .iter()
        .map(|&(beta, auc, dp)| SearchRow { beta, auc, dp, feasible: beta == 1.0 || auc >= floor })
        .collect();
    let better = |a: &SearchRow, b: &SearchRow| {
        if a.dp != b.dp {
            return a.dp > b.dp;
        }
        match config.tie_break {
            TieBreak::ClosestToOneThenSmaller => {
                let (da, db) = ((a.beta - 1.0).abs(), (b.beta - 1.0).abs());
                da < db || (da == db && a.beta < b.beta)
            }
        }
    };
    let mut best = rows.iter().find(|r| r.beta == 1.0).expect("checked above");
    for r in rows.iter().filter(|r| r.feasible) {
        if better(r, best) {
            best = r;
        }
    }
    let best_beta = best.beta;
    Ok(SearchResult { best_beta, regime: Regime::of(best_beta), baseline_auc, rows })
}

/// Evaluates every grid point on `validation` and selects β.
pub fn eat_search(weights: &ModelWeights, validation: &EvalSet, config: &SearchConfig) -> Result<SearchResult, IntraError> {
    config.validate()?;
    let table = config
        .beta_grid
        .iter()
        .map(|&b| {
            let r = evaluate_at_beta(weights, Temperature::new(b)?, validation)?.report;
            Ok((b, r.auc, r.dp))
        })
        .collect::<Result<Vec<_>, IntraError>>()?;
    select_beta(&table, config)
}

/// Adds i.i.d. Gaussian noise to every tensor, with standard deviation
/// `sigma` times the tensor's RMS. `sigma = 0` returns an exact copy.
pub fn random_perturbation(weights: &ModelWeights, sigma: f64, seed: u64) -> Result<ModelWeights, IntraError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(IntraError::InvalidConfig(format!("sigma {sigma} must be finite and non-negative")));
    }
    let mut out = weights.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, m) in out.tensors_mut() {
        let std = sigma * m.rms();
        if std == 0.0 {
            continue;
        }
        let noise = Normal::new(0.0, std).expect("std is positive and finite");
        for v in m.data_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbRow {
    pub sigma: f64,
    pub trial: usize,
    pub seed: u64,
    pub auc: f64,
    pub dp: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbResult {
    pub best_sigma: f64,
    pub best_seed: u64,
    pub baseline_auc: f64,
    pub rows: Vec<PerturbRow>,
}

impl PerturbResult {
    pub fn best_row(&self) -> &PerturbRow {
        self.rows
            .iter()
            .find(|r| r.sigma == self.best_sigma && r.seed == self.best_seed)
            .expect("best candidate comes from the table")
    }
}

/// Trial `t` uses seed `base_seed + t` for every sigma.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    base_seed.wrapping_add(trial as u64)
}

/// Candidates are the unperturbed model plus `trials` draws per non-zero
/// sigma. Same feasibility rule as [`eat_search`]; ties go to the earlier
/// candidate, so the unperturbed model wins any tie it is part of.
pub fn perturb_search(
    weights: &ModelWeights,
    validation: &EvalSet,
    sigma_grid: &[f64],
    trials: usize,
    base_seed: u64,
    config: &SearchConfig,
) -> Result<PerturbResult, IntraError> {
    if trials == 0 {
        return Err(IntraError::InvalidConfig("trials must be at least 1".into()));
    }
    if !(config.max_auc_degradation > 0.0 && config.max_auc_degradation < 1.0) {
        return Err(IntraError::InvalidConfig("max_auc_degradation must lie in (0, 1)".into()));
    }
    let mut candidates = vec![(0.0, 0usize, trial_seed(base_seed, 0))];
    let mut sigmas: Vec<f64> = sigma_grid.iter().copied().filter(|s| *s != 0.0).collect();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    for &s in &sigmas {
        for t in 0..trials {
            candidates.push((s, t, trial_seed(base_seed, t)));
        }
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for (sigma, trial, seed) in candidates {
        let w = random_perturbation(weights, sigma, seed)?;
        let r = evaluate_at_beta(&w, Temperature::UNIT, validation)?.report;
        rows.push(PerturbRow { sigma, trial, seed, auc: r.auc, dp: r.dp, feasible: false });
    }
    let baseline_auc = rows[0].auc;
    let floor = config.auc_floor(baseline_auc);
    for (i, r) in rows.iter_mut().enumerate() {
        r.feasible = i == 0 || r.auc >= floor;
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.feasible && r.dp > rows[best].dp {
            best = i;
        }
    }
    Ok(PerturbResult { best_sigma: rows[best].sigma, best_seed: rows[best].seed, baseline_auc, rows })
}

/// Held-out reports for a chosen intervention and for the unmodified model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestComparison {
    pub selected: FairnessReport,
    pub baseline: FairnessReport,
    pub delta_dp: f64,
    /// Relative AUC change, `(selected − baseline) / baseline`.
    pub relative_auc_change: f64,
}

impl TestComparison {
    pub fn new(selected: FairnessReport, baseline: FairnessReport) -> Self {
        let delta_dp = selected.dp - baseline.dp;
        let relative_auc_change = (selected.auc - baseline.auc) / baseline.auc;
        Self { selected, baseline, delta_dp, relative_auc_change }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_eval_templates, gen_train_corpus, CorpusConfig, Lexicon};
    use crate::model::ModelConfig;
    use crate::numerics::Matrix;

    fn small_set() -> (ModelWeights, EvalSet) {
        let lex = Lexicon::builtin();
        let cfg = CorpusConfig { corpus_size: 40, eval_templates: 2, ..Default::default() };
        let vocab = cfg.vocab(&lex).unwrap();
        let set = EvalSet {
            performance: gen_train_corpus(&cfg, &lex).unwrap(),
            fairness: gen_eval_templates(&cfg, &lex).unwrap(),
        };
        let mc = ModelConfig::new(2, 2, 8, cfg.max_len, vocab.size()).unwrap();
        (ModelWeights::init(mc, 3, 0.3).unwrap(), set)
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 101);
        assert_eq!((g[0], g[10], g[100]), (0.0, 1.0, 10.0));
        assert!(g.contains(&0.4) && g.contains(&2.3));
    }

    #[test]
    fn constant_dp_keeps_unit_temperature() {
        let table: Vec<_> = default_grid().into_iter().map(|b| (b, 0.9, 0.8)).collect();
        let r = select_beta(&table, &SearchConfig::default()).unwrap();
        assert_eq!(r.best_beta, 1.0);
        assert_eq!(r.regime, Regime::None);
    }

    #[test]
    fn planted_peak_is_found() {
        let table: Vec<_> = default_grid()
            .into_iter()
            .map(|b| (b, 0.9, if b == 0.4 { 0.95 } else { 0.8 }))
            .collect();
        let r = select_beta(&table, &SearchConfig::default()).unwrap();
        assert_eq!(r.best_beta, 0.4);
        assert_eq!(r.regime, Regime::Maximization);
    }

    #[test]
    fn infeasible_peak_is_skipped_and_ties_break_toward_one() {
        let table = vec![(0.0, 0.5, 0.99), (0.5, 0.89, 0.9), (1.0, 0.9, 0.8), (1.5, 0.88, 0.9), (3.0, 0.95, 0.85)];
        let r = select_beta(&table, &SearchConfig::default()).unwrap();
        assert!(!r.rows[0].feasible);
        assert_eq!(r.best_beta, 0.5);
        let table = vec![(0.5, 0.9, 0.9), (1.0, 0.9, 0.8), (1.5, 0.9, 0.9)];
        assert_eq!(select_beta(&table, &SearchConfig::default()).unwrap().best_beta, 0.5);
        let table = vec![(0.4, 0.9, 0.9), (1.0, 0.9, 0.8), (1.5, 0.9, 0.9)];
        let r = select_beta(&table, &SearchConfig::default()).unwrap();
        assert_eq!(r.best_beta, 1.5);
        assert_eq!(r.regime, Regime::Minimization);
    }

    #[test]
    fn feasibility_boundary_is_inclusive() {
        let cfg = SearchConfig { max_auc_degradation: 0.5, ..Default::default() };
        let table = vec![(1.0, 0.8, 0.5), (2.0, 0.4, 0.9)];
        assert_eq!(select_beta(&table, &cfg).unwrap().best_beta, 2.0);
    }

    #[test]
    fn config_errors() {
        let cfg = SearchConfig { beta_grid: vec![0.0, 2.0], ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = SearchConfig { max_auc_degradation: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = SearchConfig { beta_grid: vec![-1.0, 1.0], ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn constant_model_is_fair_and_uninformative() {
        let (mut w, set) = small_set();
        w.classifier_w = Matrix::zeros(w.classifier_w.rows(), 2);
        let e = evaluate_at_beta(&w, Temperature::UNIT, &set).unwrap();
        assert_eq!(e.report.dp, 1.0);
        assert_eq!(e.report.auc, 0.5);
        assert!(e.report.pinned_auc_ed.values().all(|v| *v == 0.0));
    }

    #[test]
    fn search_is_repeatable_and_feasible() {
        let (w, set) = small_set();
        let cfg = SearchConfig { beta_grid: vec![0.0, 0.5, 1.0, 2.0, 4.0], ..Default::default() };
        let a = eat_search(&w, &set, &cfg).unwrap();
        assert_eq!(a, eat_search(&w, &set, &cfg).unwrap());
        assert!(a.best_row().feasible);
        assert_eq!(a.baseline_auc, evaluate_at_beta(&w, Temperature::UNIT, &set).unwrap().report.auc);
        assert_eq!(a.regime, Regime::of(a.best_beta));
    }

    #[test]
    fn zero_sigma_is_bit_exact_and_seeded_noise_repeats() {
        let (w, _) = small_set();
        assert_eq!(random_perturbation(&w, 0.0, 9).unwrap(), w);
        let a = random_perturbation(&w, 0.05, 9).unwrap();
        assert_eq!(a, random_perturbation(&w, 0.05, 9).unwrap());
        assert_ne!(a, w);
        assert_ne!(a, random_perturbation(&w, 0.05, 10).unwrap());
        // zero tensors (untrained biases) stay zero
        assert!(a.layers[0].b_1.data().iter().all(|v| *v == 0.0));
        assert!(random_perturbation(&w, -0.1, 0).is_err());
    }

    #[test]
    fn perturbation_noise_scales_with_rms() {
        let (w, _) = small_set();
        let p = random_perturbation(&w, 0.1, 4).unwrap();
        let (a, b) = (&w.token_embedding, &p.token_embedding);
        let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| y - x).collect();
        let std = (diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64).sqrt();
        assert!((std / (0.1 * a.rms()) - 1.0).abs() < 0.1, "{std}");
    }

    #[test]
    fn perturb_candidate_counts() {
        let (w, set) = small_set();
        let cfg = SearchConfig::default();
        let r = perturb_search(&w, &set, &[0.0], 4, 0, &cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.best_sigma, 0.0);
        let r = perturb_search(&w, &set, &[0.0, 0.01, 0.05], 3, 0, &cfg).unwrap();
        assert_eq!(r.rows.len(), 7);
        assert!(r.best_row().feasible);
        assert!(perturb_search(&w, &set, &[0.1], 0, 0, &cfg).is_err());
    }
}
