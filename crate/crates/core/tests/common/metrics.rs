//! Brute-force metric oracle: pairwise AUC and direct rate counts.

use std::collections::BTreeSet;

use eat_core::metrics::{
    auc, demographic_parity, eq_odd, eq_opp0, eq_opp1, fairness_report, pinned_auc_ed, PredictionRecord,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pairwise_auc(recs: &[&PredictionRecord]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for p in recs.iter().filter(|r| r.y == 1) {
        for n in recs.iter().filter(|r| r.y == 0) {
            pairs += 1.0;
            if p.score > n.score {
                wins += 1.0;
            } else if p.score == n.score {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn rate(recs: &[PredictionRecord], keep: impl Fn(&PredictionRecord) -> bool) -> f64 {
    let sel: Vec<_> = recs.iter().filter(|r| keep(r)).collect();
    sel.iter().filter(|r| r.y_hat == 1).count() as f64 / sel.len() as f64
}

fn random_set(rng: &mut ChaCha8Rng) -> Vec<PredictionRecord> {
    let tags = ["a", "b", "c"];
    loop {
        let n = rng.random_range(4..16);
        let mut recs = Vec::new();
        for i in 0..n {
            let y = rng.random_range(0..2u8);
            let tag = tags[rng.random_range(0..tags.len())];
            for z in 0..2u8 {
                let score = rng.random_range(0..9) as f64 / 8.0;
                recs.push(PredictionRecord {
                    score,
                    y_hat: u8::from(score >= 0.5),
                    y,
                    z,
                    pair_id: i,
                    subgroups: vec![("family".into(), tag.into())],
                });
            }
        }
        let ok = |keep: &dyn Fn(&PredictionRecord) -> bool| {
            let ys: BTreeSet<u8> = recs.iter().filter(|r| keep(r)).map(|r| r.y).collect();
            ys.len() == 2
        };
        let present: BTreeSet<&str> = recs.iter().map(|r| r.subgroups[0].1.as_str()).collect();
        if ok(&|_| true) && present.iter().all(|t| ok(&|r: &PredictionRecord| r.subgroups[0].1 == *t)) {
            return recs;
        }
    }
}

/// Compares every metric with the brute-force values on `cases` random
/// record sets. Returns the first disagreement.
pub fn check_metrics(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let recs = random_set(&mut rng);
        let all: Vec<&PredictionRecord> = recs.iter().collect();
        let want_auc = pairwise_auc(&all);
        let want_dp = 1.0 - (rate(&recs, |r| r.z == 1) - rate(&recs, |r| r.z == 0)).abs();
        let opp = |y: u8| 1.0 - (rate(&recs, |r| r.z == 1 && r.y == y) - rate(&recs, |r| r.z == 0 && r.y == y)).abs();
        let tags: BTreeSet<&str> = recs.iter().map(|r| r.subgroups[0].1.as_str()).collect();
        let want_ed: f64 = tags
            .iter()
            .map(|t| {
                let sub: Vec<&PredictionRecord> = recs.iter().filter(|r| r.subgroups[0].1 == *t).collect();
                (want_auc - pairwise_auc(&sub)).abs()
            })
            .sum();
        let report = fairness_report(&recs).map_err(|e| e.to_string())?;
        let checks = [
            ("auc", auc(&recs).map_err(|e| e.to_string())?, want_auc),
            ("dp", demographic_parity(&recs).map_err(|e| e.to_string())?, want_dp),
            ("eq_opp1", eq_opp1(&recs).map_err(|e| e.to_string())?, opp(1)),
            ("eq_opp0", eq_opp0(&recs).map_err(|e| e.to_string())?, opp(0)),
            ("eq_odd", eq_odd(&recs).map_err(|e| e.to_string())?, 0.5 * (opp(1) + opp(0))),
            ("pinned_auc_ed", pinned_auc_ed(&recs, "family").map_err(|e| e.to_string())?, want_ed),
            ("report eq_odd", report.eq_odd, 0.5 * (report.eq_opp1 + report.eq_opp0)),
        ];
        for (what, got, want) in checks {
            if (got - want).abs() > 1e-12 {
                return Err(format!("case {case} {what}: {got} vs {want}"));
            }
        }
    }
    Ok(())
}
