use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::commands::{TestReport, TEST_REPORT_FILE};
use super::{config_failure, load_config, out_dir, runtime_failure, Classify, Failure, ReportArgs, RunManifest};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportConfig {}

/// One run's held-out results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub seed: Option<u64>,
    pub method: String,
    pub setting: String,
    pub auc: f64,
    pub dp: f64,
    pub delta_dp: f64,
    pub relative_auc_change: f64,
    pub eq_opp1: f64,
    pub eq_opp0: f64,
    pub eq_odd: f64,
    pub pinned_auc_ed: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub method: String,
    pub seeds: usize,
    /// Mean over seeds of the DP rank within the seed (1 = fairest, ties
    /// share the average rank).
    pub mean_rank: f64,
    /// Seeds on which the method has the highest DP, ties included.
    pub best: usize,
    pub mean_dp: f64,
    pub mean_delta_dp: f64,
}

fn method_order(m: &str) -> usize {
    match m {
        "vanilla" => 0,
        "eat" => 1,
        "perturbation" => 2,
        _ => 3,
    }
}

/// Ranks rows by test DP within each seed and averages per method.
pub fn rank_summary(rows: &[ReportRow]) -> Vec<RankRow> {
    let mut by_seed: BTreeMap<Option<u64>, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r);
    }
    let mut acc: BTreeMap<&str, (usize, f64, usize, f64, f64)> = BTreeMap::new();
    for group in by_seed.values() {
        let top = group.iter().map(|r| r.dp).fold(f64::NEG_INFINITY, f64::max);
        for r in group {
            let better = group.iter().filter(|o| o.dp > r.dp).count() as f64;
            let tied = group.iter().filter(|o| o.dp == r.dp).count() as f64;
            let rank = better + (tied + 1.0) / 2.0;
            let e = acc.entry(r.method.as_str()).or_default();
            e.0 += 1;
            e.1 += rank;
            e.2 += usize::from(r.dp == top);
            e.3 += r.dp;
            e.4 += r.delta_dp;
        }
    }
    let mut out: Vec<RankRow> = acc
        .into_iter()
        .map(|(m, (n, rank, best, dp, delta))| RankRow {
            method: m.to_string(),
            seeds: n,
            mean_rank: rank / n as f64,
            best,
            mean_dp: dp / n as f64,
            mean_delta_dp: delta / n as f64,
        })
        .collect();
    out.sort_by(|a, b| a.mean_rank.total_cmp(&b.mean_rank).then_with(|| method_order(&a.method).cmp(&method_order(&b.method))));
    out
}

fn families(rows: &[ReportRow]) -> Vec<String> {
    rows.iter().flat_map(|r| r.pinned_auc_ed.keys().cloned()).collect::<BTreeSet<_>>().into_iter().collect()
}

fn seed_text(s: Option<u64>) -> String {
    s.map(|v| v.to_string()).unwrap_or_default()
}

fn rows_csv(rows: &[ReportRow]) -> String {
    let fams = families(rows);
    let mut s = String::from("run,seed,method,setting,auc,dp,delta_dp,relative_auc_change,eq_opp1,eq_opp0,eq_odd");
    for f in &fams {
        write!(s, ",pinned_auc_ed_{f}").unwrap();
    }
    s.push('\n');
    for r in rows {
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.run,
            seed_text(r.seed),
            r.method,
            r.setting,
            r.auc,
            r.dp,
            r.delta_dp,
            r.relative_auc_change,
            r.eq_opp1,
            r.eq_opp0,
            r.eq_odd
        )
        .unwrap();
        for f in &fams {
            let v = r.pinned_auc_ed.get(f).map(|v| v.to_string()).unwrap_or_default();
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn ranks_csv(ranks: &[RankRow]) -> String {
    let mut s = String::from("method,seeds,mean_rank,best,mean_dp,mean_delta_dp\n");
    for r in ranks {
        writeln!(s, "{},{},{},{},{},{}", r.method, r.seeds, r.mean_rank, r.best, r.mean_dp, r.mean_delta_dp).unwrap();
    }
    s
}

fn markdown(rows: &[ReportRow], ranks: &[RankRow]) -> String {
    let fams = families(rows);
    let mut s = String::from("# Test-set comparison\n\n| run | seed | method | setting | AUC | DP | ΔDP | EqOdd |");
    for f in &fams {
        write!(s, " AUC ED ({f}) |").unwrap();
    }
    s.push_str("\n|---|---|---|---|---|---|---|---|");
    s.push_str(&"---|".repeat(fams.len()));
    s.push('\n');
    for r in rows {
        write!(
            s,
            "| {} | {} | {} | {} | {:.4} | {:.4} | {:+.4} | {:.4} |",
            r.run,
            seed_text(r.seed),
            r.method,
            r.setting,
            r.auc,
            r.dp,
            r.delta_dp,
            r.eq_odd
        )
        .unwrap();
        for f in &fams {
            match r.pinned_auc_ed.get(f) {
                Some(v) => write!(s, " {v:.4} |").unwrap(),
                None => s.push_str(" |"),
            }
        }
        s.push('\n');
    }
    s.push_str("\n## Rank summary (by test DP, 1 = fairest)\n\n| method | seeds | mean rank | best | mean DP | mean ΔDP |\n|---|---|---|---|---|---|\n");
    for r in ranks {
        writeln!(
            s,
            "| {} | {} | {:.2} | {} | {:.4} | {:+.4} |",
            r.method, r.seeds, r.mean_rank, r.best, r.mean_dp, r.mean_delta_dp
        )
        .unwrap();
    }
    s
}

pub fn report(args: ReportArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let (cfg, prior) = load_config::<ReportConfig>(args.common.config.as_deref())?;
    let runs: Vec<PathBuf> = if !args.runs.is_empty() {
        args.runs
    } else {
        prior.as_ref().map(|m| m.inputs.values().map(PathBuf::from).collect()).unwrap_or_default()
    };
    if runs.is_empty() {
        return Err(config_failure("no run directories given"));
    }

    let mut rows = Vec::with_capacity(runs.len());
    let mut digests = BTreeSet::new();
    for dir in &runs {
        let m = RunManifest::read(dir).runtime_err()?;
        let path = dir.join(TEST_REPORT_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| runtime_failure(format!("{}: {e} (not a train or search run?)", path.display())))?;
        let tr: TestReport = serde_json::from_str(&text).runtime_err()?;
        digests.insert(m.corpus_digest.clone().unwrap_or_default());
        let sel = &tr.comparison.selected;
        rows.push(ReportRow {
            run: dir.display().to_string(),
            seed: tr.model_seed,
            method: tr.method.clone(),
            setting: tr.setting.clone(),
            auc: sel.auc,
            dp: sel.dp,
            delta_dp: tr.comparison.delta_dp,
            relative_auc_change: tr.comparison.relative_auc_change,
            eq_opp1: sel.eq_opp1,
            eq_opp0: sel.eq_opp0,
            eq_odd: sel.eq_odd,
            pinned_auc_ed: sel.pinned_auc_ed.clone(),
        });
    }
    if digests.len() > 1 {
        return Err(config_failure("runs were produced from different corpora"));
    }
    rows.sort_by(|a, b| {
        (a.seed.is_none(), a.seed, method_order(&a.method), &a.run).cmp(&(b.seed.is_none(), b.seed, method_order(&b.method), &b.run))
    });
    let ranks = rank_summary(&rows);

    let out = out_dir(args.common.out.as_deref(), "report");
    fs::create_dir_all(&out).runtime_err()?;
    for (name, body) in [("report.md", markdown(&rows, &ranks)), ("report.csv", rows_csv(&rows)), ("ranks.csv", ranks_csv(&ranks))] {
        fs::write(out.join(name), body).runtime_err()?;
    }
    let mut m = RunManifest::new("report", serde_json::to_value(&cfg).expect("serializable"));
    for (i, r) in runs.iter().enumerate() {
        m.inputs.insert(format!("run{i:03}"), r.display().to_string());
    }
    m.corpus_digest = digests.into_iter().next().filter(|d| !d.is_empty());
    m.outputs = vec!["report.md".into(), "report.csv".into(), "ranks.csv".into()];
    super::commands::finish(m, &out, start)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, method: &str, dp: f64) -> ReportRow {
        ReportRow {
            run: format!("{method}-{seed}"),
            seed: Some(seed),
            method: method.into(),
            setting: String::new(),
            auc: 0.9,
            dp,
            delta_dp: 0.0,
            relative_auc_change: 0.0,
            eq_opp1: 1.0,
            eq_opp0: 1.0,
            eq_odd: 1.0,
            pinned_auc_ed: BTreeMap::new(),
        }
    }

    #[test]
    fn hand_ranked_fixture() {
        // seed 0: eat 0.9 > perturbation 0.8 > vanilla 0.7 → 1, 2, 3
        // seed 1: perturbation 0.95 > eat = vanilla 0.85 → 1, 2.5, 2.5
        // seed 2: eat 0.99 > vanilla 0.6 = perturbation 0.6 → 1, 2.5, 2.5
        let rows = vec![
            row(0, "vanilla", 0.7),
            row(0, "eat", 0.9),
            row(0, "perturbation", 0.8),
            row(1, "vanilla", 0.85),
            row(1, "eat", 0.85),
            row(1, "perturbation", 0.95),
            row(2, "vanilla", 0.6),
            row(2, "eat", 0.99),
            row(2, "perturbation", 0.6),
        ];
        let r = rank_summary(&rows);
        let names: Vec<&str> = r.iter().map(|x| x.method.as_str()).collect();
        assert_eq!(names, ["eat", "perturbation", "vanilla"]);
        assert!((r[0].mean_rank - 4.5 / 3.0).abs() < 1e-12);
        assert!((r[1].mean_rank - 5.5 / 3.0).abs() < 1e-12);
        assert!((r[2].mean_rank - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!((r[0].best, r[1].best, r[2].best), (2, 1, 0));
        assert!(r.iter().all(|x| x.seeds == 3));
    }

    #[test]
    fn single_row_markdown() {
        let rows = vec![row(0, "eat", 0.9)];
        let md = markdown(&rows, &rank_summary(&rows));
        let table_rows = md.lines().filter(|l| l.starts_with("| eat-0")).count();
        assert_eq!(table_rows, 1);
        assert_eq!(rows_csv(&rows).lines().count(), 2);
    }
}
