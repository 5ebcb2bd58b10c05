//! Performance and fairness metrics over prediction records.
//!
//! Fairness rates are computed from hard labels `y_hat`. AUC is the
//! Mann–Whitney statistic with midranks, i.e. ties earn half credit.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("AUC needs both classes; no records with gold label {missing}")]
    SingleClass { missing: u8 },
    #[error("length mismatch: {scores} scores, {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no records with z = {z}")]
    EmptyStratum { z: u8 },
    #[error("no records in cell (z = {z}, y = {y})")]
    EmptyCell { z: u8, y: u8 },
    #[error("subgroups of family '{family}' lack one gold class: {tags:?}")]
    SubgroupSingleClass { family: String, tags: Vec<String> },
    #[error("no records tagged with family '{0}'")]
    UnknownFamily(String),
    #[error("counterfactual record (pair {0}) has no original twin")]
    MissingTwin(u64),
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
}

/// One evaluated example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Probability of class 1.
    pub score: f64,
    pub y_hat: u8,
    pub y: u8,
    /// 0 = genders as written, 1 = flipped.
    pub z: u8,
    pub pair_id: u64,
    /// `(family, tag)` labels such as `("religion", "muslim")`.
    pub subgroups: Vec<(String, String)>,
}

impl PredictionRecord {
    pub fn has_tag(&self, family: &str, tag: &str) -> bool {
        self.subgroups.iter().any(|(f, t)| f == family && t == tag)
    }
}

/// Fails if some `z = 1` record has no `z = 0` twin with the same `pair_id`.
pub fn check_twins(records: &[PredictionRecord]) -> Result<(), MetricsError> {
    let originals: HashSet<u64> = records.iter().filter(|r| r.z == 0).map(|r| r.pair_id).collect();
    match records.iter().find(|r| r.z == 1 && !originals.contains(&r.pair_id)) {
        Some(r) => Err(MetricsError::MissingTwin(r.pair_id)),
        None => Ok(()),
    }
}

/// Midrank AUC of `scores` against binary `labels`.
pub fn auc_from_scores(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(*s));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(MetricsError::SingleClass { missing: 1 });
    }
    if n_neg == 0 {
        return Err(MetricsError::SingleClass { missing: 0 });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of 1-based midranks of the positives
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += midrank * positives as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn auc(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.y).collect();
    auc_from_scores(&scores, &labels)
}

fn positive_rate<'a>(
    records: impl Iterator<Item = &'a PredictionRecord>,
) -> Option<f64> {
    let (mut n, mut pos) = (0usize, 0usize);
    for r in records {
        n += 1;
        pos += usize::from(r.y_hat == 1);
    }
    (n > 0).then(|| pos as f64 / n as f64)
}

/// `1 − |p(ŷ=1 | z=1) − p(ŷ=1 | z=0)|`.
pub fn demographic_parity(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    let flipped = positive_rate(records.iter().filter(|r| r.z == 1)).ok_or(MetricsError::EmptyStratum { z: 1 })?;
    let kept = positive_rate(records.iter().filter(|r| r.z == 0)).ok_or(MetricsError::EmptyStratum { z: 0 })?;
    Ok(1.0 - (flipped - kept).abs())
}

fn equal_opportunity(records: &[PredictionRecord], y: u8) -> Result<f64, MetricsError> {
    let rate = |z: u8| {
        positive_rate(records.iter().filter(|r| r.z == z && r.y == y)).ok_or(MetricsError::EmptyCell { z, y })
    };
    let flipped = rate(1)?;
    let kept = rate(0)?;
    Ok(1.0 - (flipped - kept).abs())
}

/// Equality of opportunity on gold-positive records.
pub fn eq_opp1(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    equal_opportunity(records, 1)
}

/// Equality of opportunity on gold-negative records.
pub fn eq_opp0(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    equal_opportunity(records, 0)
}

/// Mean of [`eq_opp1`] and [`eq_opp0`].
pub fn eq_odd(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    Ok(0.5 * (eq_opp1(records)? + eq_opp0(records)?))
}

/// Tags of `family` that occur in `records`, sorted.
pub fn family_tags(records: &[PredictionRecord], family: &str) -> BTreeSet<String> {
    records
        .iter()
        .flat_map(|r| r.subgroups.iter())
        .filter(|(f, _)| f == family)
        .map(|(_, t)| t.clone())
        .collect()
}

/// `Σ_t |AUC − AUC_t|` over the tags `t` of `family`, where `AUC_t` uses only
/// the records tagged `t`. Lower is less biased.
pub fn pinned_auc_ed(records: &[PredictionRecord], family: &str) -> Result<f64, MetricsError> {
    let tags = family_tags(records, family);
    if tags.is_empty() {
        return Err(MetricsError::UnknownFamily(family.to_string()));
    }
    let overall = auc(records)?;
    let mut offending = Vec::new();
    let mut total = 0.0;
    for tag in &tags {
        let subset: Vec<PredictionRecord> =
            records.iter().filter(|r| r.has_tag(family, tag)).cloned().collect();
        match auc(&subset) {
            Ok(a) => total += (overall - a).abs(),
            Err(MetricsError::SingleClass { .. }) => offending.push(tag.clone()),
            Err(e) => return Err(e),
        }
    }
    if !offending.is_empty() {
        return Err(MetricsError::SubgroupSingleClass { family: family.to_string(), tags: offending });
    }
    Ok(total)
}

/// Every metric for one evaluation set. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub auc: f64,
    pub dp: f64,
    pub eq_opp1: f64,
    pub eq_opp0: f64,
    pub eq_odd: f64,
    pub pinned_auc_ed: BTreeMap<String, f64>,
}

/// Computes the full report; pinned AUC ED is reported for every subgroup
/// family that appears in `records`.
pub fn fairness_report(records: &[PredictionRecord]) -> Result<FairnessReport, MetricsError> {
    check_twins(records)?;
    let families: BTreeSet<&str> =
        records.iter().flat_map(|r| r.subgroups.iter()).map(|(f, _)| f.as_str()).collect();
    let mut pinned = BTreeMap::new();
    for family in families {
        pinned.insert(family.to_string(), pinned_auc_ed(records, family)?);
    }
    let eq_opp1 = eq_opp1(records)?;
    let eq_opp0 = eq_opp0(records)?;
    Ok(FairnessReport {
        auc: auc(records)?,
        dp: demographic_parity(records)?,
        eq_opp1,
        eq_opp0,
        eq_odd: 0.5 * (eq_opp1 + eq_opp0),
        pinned_auc_ed: pinned,
    })
}
