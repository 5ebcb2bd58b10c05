//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs on the shipped configs in `configs/`.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use eat_core::cli::{PerturbRunConfig, TrainRunConfig};
use eat_core::corpus::{generate, CorpusConfig, GeneratedCorpus, Lexicon};
use eat_core::entropy::attention_entropy;
use eat_core::intra::{
    eat_search, evaluate_at_beta, perturb_search, random_perturbation, EvalSet, Regime, SearchConfig, SearchResult,
    TestComparison,
};
use eat_core::model::{forward, ModelConfig, ModelWeights, Temperature, TokenId, BOS_ID};
use eat_core::numerics::{shannon_entropy, softmax_row};
use eat_core::train::{fit, grad_check, GradCheckConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load<T: DeserializeOwned>(name: &str) -> T {
    let path = configs_dir().join(name);
    toml::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn identity_invariance() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (w, tokens) = common::random_case(seed);
        let got = forward(&tokens, &w, Temperature::UNIT, true).unwrap().trace.unwrap().logits;
        let want = common::reference_logits(&tokens, &w, None);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-12 && secs < 10.0, format!("max |Δlogit| {worst:.2e} over 100 pairs, {secs:.2}s"))
}

fn uniform_limit() -> Outcome {
    let zero = Temperature::new(0.0).unwrap();
    let (mut rows_ok, mut worst) = (true, 0.0f64);
    for seed in 0..100 {
        let (w, tokens) = common::random_case(1000 + seed);
        let trace = forward(&tokens, &w, zero, true).unwrap().trace.unwrap();
        let n = trace.sentence_len;
        for map in trace.attention.iter().flatten() {
            rows_ok &= (0..n).all(|i| map.row(i)[..n].iter().all(|&p| p == 1.0 / n as f64));
        }
        let total = attention_entropy(&trace, n).unwrap().total;
        worst = worst.max((total - w.config.num_layers as f64 * (n as f64).ln()).abs());
    }
    outcome(rows_ok && worst <= 1e-9, format!("rows exactly uniform: {rows_ok}, max |H − L·ln T_s| {worst:.2e}"))
}

fn gibbs_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_rise = f64::NEG_INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(2..16);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
        let mask = vec![true; n];
        let h: Vec<f64> = (0..=100)
            .map(|i| {
                let b = i as f64 / 10.0;
                let scaled: Vec<f64> = logits.iter().map(|l| b * l).collect();
                shannon_entropy(&softmax_row(&scaled, &mask).unwrap())
            })
            .collect();
        for p in h.windows(2) {
            worst_rise = worst_rise.max(p[1] - p[0]);
        }
    }
    outcome(worst_rise <= 1e-12, format!("largest entropy step across the grid {worst_rise:.2e}"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::new(2, 2, 8, 8, 16).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in SEEDS {
        let w = ModelWeights::init(cfg, seed, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tokens: Vec<TokenId> = vec![BOS_ID];
        tokens.extend((1..8).map(|_| rng.random_range(2..16)));
        let conf = GradCheckConfig { max_params: Some(500), seed, ..Default::default() };
        let r = grad_check(&w, &tokens, (seed % 2) as u8, &conf).unwrap();
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && checked >= 2500 && secs < 120.0,
        format!("max relative error {worst:.2e} over {checked} parameters (5 seeds), {secs:.1}s"),
    )
}

fn metric_oracles() -> Outcome {
    match common::metrics::check_metrics(1000, 77) {
        Ok(()) => outcome(true, "1000 random record sets agree within 1e-12"),
        Err(e) => outcome(false, e),
    }
}

struct SeedRun {
    secs: f64,
    vanilla: eat_core::metrics::FairnessReport,
    search: SearchResult,
    eat: TestComparison,
    perturb: Option<TestComparison>,
}

fn run_seed(corpus: &GeneratedCorpus, cc: &CorpusConfig, seed: u64, with_perturb: bool) -> SeedRun {
    let start = Instant::now();
    let vocab = cc.vocab(&Lexicon::builtin()).unwrap();
    let tr: TrainRunConfig = load("train.toml");
    let mut train = tr.train.clone();
    train.seed = seed;
    let mc = ModelConfig::new(tr.model.num_layers, tr.model.num_heads, tr.model.model_dim, cc.max_len, vocab.size())
        .unwrap();
    let w = fit(&corpus.train, mc, &train, seed).unwrap().weights;
    let (val, test) = (EvalSet::validation(corpus), EvalSet::test(corpus));
    let sc: SearchConfig = load("search.toml");
    let vanilla = evaluate_at_beta(&w, Temperature::UNIT, &test).unwrap().report;
    let search = eat_search(&w, &val, &sc).unwrap();
    let chosen = evaluate_at_beta(&w, Temperature::new(search.best_beta).unwrap(), &test).unwrap().report;
    let eat = TestComparison::new(chosen, vanilla.clone());
    let secs = start.elapsed().as_secs_f64();
    let perturb = with_perturb.then(|| {
        let pc: PerturbRunConfig = load("perturb.toml");
        let cfg = SearchConfig { max_auc_degradation: pc.max_auc_degradation, ..sc.clone() };
        let p = perturb_search(&w, &val, &pc.sigma_grid, pc.trials, pc.seed, &cfg).unwrap();
        let pw = random_perturbation(&w, p.best_sigma, p.best_seed).unwrap();
        let r = evaluate_at_beta(&pw, Temperature::UNIT, &test).unwrap().report;
        TestComparison::new(r, vanilla.clone())
    });
    SeedRun { secs, vanilla, search, eat, perturb }
}

fn corpus_for(name: &str) -> (CorpusConfig, GeneratedCorpus) {
    let cc: CorpusConfig = load(name);
    let corpus = generate(&cc, &Lexicon::builtin()).unwrap();
    (cc, corpus)
}

fn eat_effect(runs: &[SeedRun]) -> Outcome {
    let shortcut = runs.iter().filter(|r| r.vanilla.dp < 0.95).count();
    let effect = runs
        .iter()
        .filter(|r| r.search.best_beta != 1.0 && r.eat.delta_dp >= 0.01 && -r.eat.relative_auc_change <= 0.035)
        .count();
    let slowest = runs.iter().map(|r| r.secs).fold(0.0, f64::max);
    let lines: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "β={} DP {:.3}→{:.3} AUC {:+.2}%",
                r.search.best_beta,
                r.vanilla.dp,
                r.eat.selected.dp,
                100.0 * r.eat.relative_auc_change
            )
        })
        .collect();
    outcome(
        shortcut == 5 && effect >= 4 && slowest < 300.0,
        format!(
            "vanilla DP < 0.95 in {shortcut}/5, effect in {effect}/5, slowest seed {slowest:.0}s [{}]",
            lines.join("; ")
        ),
    )
}

fn non_monotone(search: &SearchResult) -> bool {
    let dp: Vec<f64> = search.rows.iter().map(|r| r.dp).collect();
    let up = dp.windows(2).any(|p| p[1] > p[0]);
    let down = dp.windows(2).any(|p| p[1] < p[0]);
    up && down
}

fn regime_dependence(near: &[SeedRun], far: &[SeedRun]) -> Outcome {
    let opposite = near
        .iter()
        .zip(far)
        .filter(|(a, b)| {
            matches!(
                (Regime::of(a.search.best_beta), Regime::of(b.search.best_beta)),
                (Regime::Maximization, Regime::Minimization) | (Regime::Minimization, Regime::Maximization)
            )
        })
        .count();
    let betas = |rs: &[SeedRun]| rs.iter().map(|r| r.search.best_beta.to_string()).collect::<Vec<_>>().join(",");
    let detail = format!("near β* [{}], distal β* [{}], opposite sides in {opposite}/5", betas(near), betas(far));
    if opposite >= 3 {
        return outcome(true, detail);
    }
    let bumpy = near.iter().chain(far).filter(|r| non_monotone(&r.search)).count();
    outcome(
        bumpy >= 1,
        format!("{detail}; regimes did not separate, fallback: DP(β) non-monotone in {bumpy}/10 search tables"),
    )
}

fn generalization(runs: &[SeedRun]) -> Outcome {
    let mut shift: BTreeMap<String, f64> = BTreeMap::new();
    for r in runs {
        for (fam, ed) in &r.eat.selected.pinned_auc_ed {
            *shift.entry(fam.clone()).or_default() += (ed - r.vanilla.pinned_auc_ed[fam]) / runs.len() as f64;
        }
    }
    let pass = !shift.is_empty() && shift.values().all(|d| *d <= 0.02);
    let parts: Vec<String> = shift.iter().map(|(f, d)| format!("{f} {d:+.4}")).collect();
    outcome(pass, format!("mean change in pinned AUC ED vs vanilla: {}", parts.join(", ")))
}

fn intra_comparison(runs: &[SeedRun]) -> Outcome {
    let pairs: Vec<(f64, f64)> =
        runs.iter().map(|r| (r.eat.delta_dp, r.perturb.as_ref().expect("perturbation run").delta_dp)).collect();
    let wins = pairs.iter().filter(|(e, p)| e >= p).count();
    let parts: Vec<String> = pairs.iter().map(|(e, p)| format!("{e:+.3} vs {p:+.3}")).collect();
    outcome(wins >= 3, format!("test ΔDP EAT vs perturbation, 101 candidates each: {} → {wins}/5", parts.join("; ")))
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let p = dir.path();
    let configs = configs_dir();
    let cfg = |n: &str| configs.join(n).display().to_string();
    let run = |args: &[String]| {
        let o = Command::new(env!("CARGO_BIN_EXE_eat")).args(args).current_dir(p).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("gen", s(&["--config", &cfg("corpus.toml")])),
        ("train", s(&["--config", &cfg("train.toml"), "--data", "gen-1"])),
        ("entropy-sweep", s(&["--config", &cfg("sweep.toml"), "--weights", "train-1", "--data", "gen-1"])),
        ("eat-search", s(&["--config", &cfg("search.toml"), "--weights", "train-1", "--data", "gen-1"])),
        ("perturb-search", s(&["--config", &cfg("perturb.toml"), "--weights", "train-1", "--data", "gen-1"])),
        ("report", s(&["train-1", "eat-search-1", "perturb-search-1"])),
    ];
    let mut differing = Vec::new();
    for (cmd, extra) in &steps {
        let mut first = s(&["--threads", "1", cmd]);
        first.extend(extra.iter().cloned());
        first.extend(s(&["--out", &format!("{cmd}-1")]));
        run(&first);
        let manifest = format!("{cmd}-1/manifest.json");
        run(&s(&["--threads", "4", cmd, "--config", &manifest, "--out", &format!("{cmd}-4")]));
        let read = |d: &str| {
            let mut v: Vec<_> = std::fs::read_dir(p.join(d))
                .unwrap()
                .map(|e| e.unwrap().path())
                .map(|f| (f.file_name().unwrap().to_owned(), std::fs::read(&f).unwrap()))
                .collect();
            v.sort();
            v
        };
        if read(&format!("{cmd}-1")) != read(&format!("{cmd}-4")) {
            differing.push(*cmd);
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            "all six commands byte-identical on manifest re-run, --threads 1 vs 4".to_string()
        } else {
            format!("outputs differ for {differing:?}")
        },
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "identity invariance", identity_invariance());
    report(2, "uniform limit", uniform_limit());
    report(3, "Gibbs monotonicity", gibbs_monotonicity());
    report(4, "gradient correctness", gradient_check());
    report(5, "metric oracles", metric_oracles());

    let (near_cfg, near_corpus) = corpus_for("corpus.toml");
    let near: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(&near_corpus, &near_cfg, s, true)).collect();
    report(6, "end-to-end EAT effect", eat_effect(&near));
    let (far_cfg, far_corpus) = corpus_for("corpus-distal.toml");
    let far: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(&far_corpus, &far_cfg, s, false)).collect();
    report(7, "regime dependence", regime_dependence(&near, &far));
    report(8, "generalization reporting", generalization(&near));
    report(9, "intra-processing comparison", intra_comparison(&near));
    report(10, "determinism", cli_determinism());

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
