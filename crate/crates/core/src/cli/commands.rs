use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusConfig, GeneratedCorpus, Lexicon, Vocab};
use crate::entropy::{mean_total_entropy, pct_change};
use crate::intra::{self, default_grid, EvalSet, SearchConfig, TestComparison};
use crate::metrics::FairnessReport;
use crate::model::{load_weights, save_weights, ModelConfig, ModelWeights, Temperature};
use crate::train::{fit, EpochRecord, TrainConfig, TrainError};

use super::manifest::digest_files;
use super::{
    config_failure, load_config, out_dir, runtime_failure, Classify, Failure, GenArgs, PerturbArgs, RunManifest,
    SearchArgs, Split, SweepArgs, TrainArgs,
};

pub(crate) const CORPUS_FILES: [&str; 5] =
    ["train.jsonl", "validation.jsonl", "test.jsonl", "templates.jsonl", "lexicon.json"];
pub(crate) const WEIGHTS_FILE: &str = "weights.bin";
pub(crate) const TEST_REPORT_FILE: &str = "test_report.json";

fn create_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime_failure(format!("creating {}: {e}", dir.display())))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let p = dir.join(name);
    fs::write(&p, contents).map_err(|e| runtime_failure(format!("writing {}: {e}", p.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// Writes the manifest. Timing goes to stderr so outputs stay byte-identical.
pub(crate) fn finish(m: RunManifest, dir: &Path, start: Instant) -> Result<(), Failure> {
    m.write(dir).runtime_err()?;
    eprintln!("{}: wrote {} in {:.1}s", m.command, dir.display(), start.elapsed().as_secs_f64());
    Ok(())
}

/// Flag, else the manifest's recorded input, else an error.
fn input_path(flag: Option<PathBuf>, manifest: Option<&RunManifest>, key: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| manifest.and_then(|m| m.inputs.get(key)).map(PathBuf::from))
        .ok_or_else(|| config_failure(format!("--{key} is required")))
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

pub(crate) struct DataDir {
    pub config: CorpusConfig,
    pub vocab: Vocab,
    pub corpus: GeneratedCorpus,
    pub digest: String,
}

impl DataDir {
    pub fn load(dir: &Path) -> Result<Self, Failure> {
        if !dir.is_dir() {
            return Err(runtime_failure(format!("data directory {} does not exist", dir.display())));
        }
        let m = RunManifest::read(dir).runtime_err()?;
        if m.command != "gen" {
            return Err(config_failure(format!("{} was not written by `gen`", dir.display())));
        }
        let config: CorpusConfig = serde_json::from_value(m.config).runtime_err()?;
        let lex_text = fs::read_to_string(dir.join("lexicon.json")).runtime_err()?;
        let lexicon = Lexicon::from_json(&lex_text).runtime_err()?;
        let vocab = config.vocab(&lexicon).runtime_err()?;
        let read = |name: &str| corpus::read_jsonl(&dir.join(name)).runtime_err();
        let corpus = GeneratedCorpus {
            train: read("train.jsonl")?,
            validation: read("validation.jsonl")?,
            test: read("test.jsonl")?,
            templates: read("templates.jsonl")?,
        };
        let digest = digest_files(dir, &CORPUS_FILES).runtime_err()?;
        Ok(DataDir { config, vocab, corpus, digest })
    }

    pub fn eval_set(&self, split: Split) -> EvalSet {
        match split {
            Split::Validation => EvalSet::validation(&self.corpus),
            Split::Test => EvalSet::test(&self.corpus),
        }
    }

    fn check_weights(&self, w: &ModelWeights) -> Result<(), Failure> {
        let c = &w.config;
        if c.vocab_size != self.vocab.size() || c.max_len < self.config.max_len {
            return Err(config_failure(format!(
                "weights (vocab {}, max_len {}) do not fit the corpus (vocab {}, max_len {})",
                c.vocab_size,
                c.max_len,
                self.vocab.size(),
                self.config.max_len
            )));
        }
        Ok(())
    }
}

/// Weights plus the seed of the `train` run that produced them, if known.
fn load_model(path: &Path) -> Result<(ModelWeights, PathBuf, Option<u64>), Failure> {
    let file = if path.is_dir() { path.join(WEIGHTS_FILE) } else { path.to_path_buf() };
    let w = load_weights(&file).runtime_err()?;
    let seed = file
        .parent()
        .and_then(|d| RunManifest::read(d).ok())
        .filter(|m| m.command == "train")
        .and_then(|m| m.seeds.get("model").copied());
    Ok((w, file, seed))
}

pub fn gen(args: GenArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let (mut cfg, _) = load_config::<CorpusConfig>(args.common.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate().config_err()?;
    let lexicon = Lexicon::builtin();
    let g = corpus::generate(&cfg, &lexicon).runtime_err()?;
    let out = out_dir(args.common.out.as_deref(), "gen");
    create_out(&out)?;
    for (name, set) in
        [("train.jsonl", &g.train), ("validation.jsonl", &g.validation), ("test.jsonl", &g.test), ("templates.jsonl", &g.templates)]
    {
        corpus::write_jsonl(&out.join(name), set).runtime_err()?;
    }
    write_file(&out, "lexicon.json", &(lexicon.to_json() + "\n"))?;

    let mut m = RunManifest::new("gen", serde_json::to_value(&cfg).expect("serializable"));
    m.seeds.insert("corpus".into(), cfg.seed);
    m.outputs = CORPUS_FILES.iter().map(|s| s.to_string()).collect();
    m.corpus_digest = Some(digest_files(&out, &CORPUS_FILES).runtime_err()?);
    finish(m, &out, start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self { num_layers: 2, num_heads: 2, model_dim: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub model: ModelShape,
    pub train: TrainConfig,
}

/// Held-out results of one run, shared by `train`, `eat-search` and
/// `perturb-search`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: String,
    pub setting: String,
    pub model_seed: Option<u64>,
    #[serde(flatten)]
    pub comparison: TestComparison,
}

fn epoch_log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,mean_loss,train_auc\n");
    for r in log {
        let auc = r.train_auc.map(|a| a.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{}\n", r.epoch, r.mean_loss, auc));
    }
    s
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let (mut cfg, prior) = load_config::<TrainRunConfig>(args.common.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.validate().config_err()?;
    let data_path = input_path(args.data, prior.as_ref(), "data")?;
    let data = DataDir::load(&data_path)?;
    let s = &cfg.model;
    let mc = ModelConfig::new(s.num_layers, s.num_heads, s.model_dim, data.config.max_len, data.vocab.size())
        .config_err()?;
    let out = out_dir(args.common.out.as_deref(), "train");
    create_out(&out)?;

    let mut m = RunManifest::new("train", serde_json::to_value(&cfg).expect("serializable"));
    m.seeds.insert("model".into(), cfg.train.seed);
    m.inputs.insert("data".into(), path_string(&data_path));
    m.corpus_digest = Some(data.digest.clone());

    let seed = cfg.train.seed;
    let fitted = match fit(&data.corpus.train, mc, &cfg.train, seed) {
        Ok(f) => f,
        Err(TrainError::Diverged { epoch, checkpoint }) => {
            save_weights(&checkpoint, out.join("checkpoint.bin")).runtime_err()?;
            m.status = format!("diverged in epoch {epoch}");
            m.outputs = vec!["checkpoint.bin".into()];
            finish(m, &out, start)?;
            return Err(runtime_failure(format!(
                "training diverged in epoch {epoch}; last finite weights kept in {}",
                out.join("checkpoint.bin").display()
            )));
        }
        Err(e @ TrainError::InvalidConfig(_)) => return Err(Failure::Config(e.into())),
        Err(e) => return Err(Failure::Runtime(e.into())),
    };
    save_weights(&fitted.weights, out.join(WEIGHTS_FILE)).runtime_err()?;
    write_file(&out, "epoch_log.csv", &epoch_log_csv(&fitted.log))?;

    let test = data.eval_set(Split::Test);
    let report = intra::evaluate_at_beta(&fitted.weights, Temperature::UNIT, &test).runtime_err()?.report;
    let tr = TestReport {
        method: "vanilla".into(),
        setting: String::new(),
        model_seed: Some(seed),
        comparison: TestComparison::new(report.clone(), report),
    };
    write_file(&out, TEST_REPORT_FILE, &to_json(&tr))?;
    m.outputs = vec![WEIGHTS_FILE.into(), "epoch_log.csv".into(), TEST_REPORT_FILE.into()];
    finish(m, &out, start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub beta_grid: Vec<f64>,
    pub split: Split,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { beta_grid: default_grid(), split: Split::Validation }
    }
}

fn parse_grid(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| config_failure(format!("bad grid value {s:?}: {e}"))))
        .collect()
}

pub fn entropy_sweep(args: SweepArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let (mut cfg, prior) = load_config::<SweepConfig>(args.common.config.as_deref())?;
    if let Some(g) = &args.grid {
        cfg.beta_grid = parse_grid(g)?;
    }
    if let Some(s) = args.split {
        cfg.split = s;
    }
    if !cfg.beta_grid.contains(&1.0) {
        return Err(config_failure("beta grid must contain 1.0"));
    }
    let temps: Vec<Temperature> =
        cfg.beta_grid.iter().map(|&b| Temperature::new(b)).collect::<Result<_, _>>().config_err()?;
    let weights_path = input_path(args.weights, prior.as_ref(), "weights")?;
    let data_path = input_path(args.data, prior.as_ref(), "data")?;
    let (w, weights_file, _) = load_model(&weights_path)?;
    let data = DataDir::load(&data_path)?;
    data.check_weights(&w)?;
    let set = data.eval_set(cfg.split);

    let mut rows = Vec::with_capacity(temps.len());
    for &t in &temps {
        let h = mean_total_entropy(&w, &set.performance, t).runtime_err()?;
        let r = intra::evaluate_at_beta(&w, t, &set).runtime_err()?.report;
        rows.push((t.beta(), h, r.auc, r.dp));
    }
    let base = *rows.iter().find(|r| r.0 == 1.0).expect("grid contains 1.0");
    let mut csv = String::from("beta,mean_entropy,pct_entropy_change,auc,pct_auc_change,dp,pct_dp_change\n");
    for (b, h, auc, dp) in &rows {
        csv.push_str(&format!(
            "{b},{h},{},{auc},{},{dp},{}\n",
            pct_change(*h, base.1),
            pct_change(*auc, base.2),
            pct_change(*dp, base.3)
        ));
    }
    let out = out_dir(args.common.out.as_deref(), "entropy-sweep");
    create_out(&out)?;
    write_file(&out, "sweep.csv", &csv)?;

    let mut m = RunManifest::new("entropy-sweep", serde_json::to_value(&cfg).expect("serializable"));
    m.inputs.insert("weights".into(), path_string(&weights_file));
    m.inputs.insert("data".into(), path_string(&data_path));
    m.corpus_digest = Some(data.digest);
    m.outputs = vec!["sweep.csv".into()];
    finish(m, &out, start)
}

pub fn eat_search(args: SearchArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let (mut cfg, prior) = load_config::<SearchConfig>(args.common.config.as_deref())?;
    if let Some(d) = args.max_auc_degradation {
        cfg.max_auc_degradation = d;
    }
    cfg.validate().config_err()?;
    let weights_path = input_path(args.weights, prior.as_ref(), "weights")?;
    let data_path = input_path(args.data, prior.as_ref(), "data")?;
    let (w, weights_file, model_seed) = load_model(&weights_path)?;
    let data = DataDir::load(&data_path)?;
    data.check_weights(&w)?;

    let result = intra::eat_search(&w, &data.eval_set(Split::Validation), &cfg).runtime_err()?;
    let test = data.eval_set(Split::Test);
    let at = |b: f64| -> Result<FairnessReport, Failure> {
        Ok(intra::evaluate_at_beta(&w, Temperature::new(b).runtime_err()?, &test).runtime_err()?.report)
    };
    let tr = TestReport {
        method: "eat".into(),
        setting: format!("beta={}", result.best_beta),
        model_seed,
        comparison: TestComparison::new(at(result.best_beta)?, at(1.0)?),
    };
    let out = out_dir(args.common.out.as_deref(), "eat-search");
    create_out(&out)?;
    write_file(&out, "search.json", &to_json(&result))?;
    write_file(&out, TEST_REPORT_FILE, &to_json(&tr))?;

    let mut m = RunManifest::new("eat-search", serde_json::to_value(&cfg).expect("serializable"));
    if let Some(s) = model_seed {
        m.seeds.insert("model".into(), s);
    }
    m.inputs.insert("weights".into(), path_string(&weights_file));
    m.inputs.insert("data".into(), path_string(&data_path));
    m.corpus_digest = Some(data.digest);
    m.outputs = vec!["search.json".into(), TEST_REPORT_FILE.into()];
    finish(m, &out, start)
}

pub fn default_sigma_grid() -> Vec<f64> {
    vec![0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.75, 1.0]
}

/// The default budget is the unperturbed model plus 10 sigmas × 10 trials,
/// the same 101 candidates as the default temperature grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbRunConfig {
    pub sigma_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub max_auc_degradation: f64,
}

impl Default for PerturbRunConfig {
    fn default() -> Self {
        Self { sigma_grid: default_sigma_grid(), trials: 10, seed: 0, max_auc_degradation: 0.03 }
    }
}

pub fn perturb_search(args: PerturbArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let (mut cfg, prior) = load_config::<PerturbRunConfig>(args.common.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if cfg.trials == 0 {
        return Err(config_failure("trials must be at least 1"));
    }
    if cfg.sigma_grid.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(config_failure("sigma_grid values must be finite and non-negative"));
    }
    let search = SearchConfig { max_auc_degradation: cfg.max_auc_degradation, ..Default::default() };
    search.validate().config_err()?;
    let weights_path = input_path(args.weights, prior.as_ref(), "weights")?;
    let data_path = input_path(args.data, prior.as_ref(), "data")?;
    let (w, weights_file, model_seed) = load_model(&weights_path)?;
    let data = DataDir::load(&data_path)?;
    data.check_weights(&w)?;

    let result = intra::perturb_search(&w, &data.eval_set(Split::Validation), &cfg.sigma_grid, cfg.trials, cfg.seed, &search)
        .runtime_err()?;
    let test = data.eval_set(Split::Test);
    let chosen = intra::random_perturbation(&w, result.best_sigma, result.best_seed).runtime_err()?;
    let eval = |m: &ModelWeights| -> Result<FairnessReport, Failure> {
        Ok(intra::evaluate_at_beta(m, Temperature::UNIT, &test).runtime_err()?.report)
    };
    let tr = TestReport {
        method: "perturbation".into(),
        setting: format!("sigma={} seed={}", result.best_sigma, result.best_seed),
        model_seed,
        comparison: TestComparison::new(eval(&chosen)?, eval(&w)?),
    };
    let out = out_dir(args.common.out.as_deref(), "perturb-search");
    create_out(&out)?;
    write_file(&out, "search.json", &to_json(&result))?;
    write_file(&out, TEST_REPORT_FILE, &to_json(&tr))?;

    let mut m = RunManifest::new("perturb-search", serde_json::to_value(&cfg).expect("serializable"));
    m.seeds.insert("noise".into(), cfg.seed);
    if let Some(s) = model_seed {
        m.seeds.insert("model".into(), s);
    }
    m.inputs.insert("weights".into(), path_string(&weights_file));
    m.inputs.insert("data".into(), path_string(&data_path));
    m.corpus_digest = Some(data.digest);
    m.outputs = vec!["search.json".into(), TEST_REPORT_FILE.into()];
    finish(m, &out, start)
}
