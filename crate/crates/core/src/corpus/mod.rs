//! Synthetic corpus with a planted gender shortcut, paired evaluation
//! templates, and the train/validation/test split.
//!
//! Training sentences look like `<bos> w1 … wn`. The label is the majority
//! polarity of the task words, except that with probability `label_noise`
//! the task words are drawn for the opposite label. Each sentence also
//! carries one gendered word; with probability `shortcut_strength` it sits
//! on the side linked to the label (side B for label 1, side A for label 0).
//! With `label_noise = 0` the task words fully determine the label and the
//! gendered word adds nothing a well-trained model needs.
//!
//! Templates carry one gendered word (always side A in the original), one
//! identity word, and task words mirrored between the two labels, so labels
//! are independent of gender and identity by construction.

mod lexicon;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{flip_gender, IdentityToken, Lexicon, Vocab, BUILTIN_LEXICON, LEXICON_FORMAT_VERSION};

use crate::model::{LabeledSequence, TokenId, BOS_ID};

pub const MIN_CORPUS_SIZE: usize = 20;

/// Template pair ids live above this base; bits 20.. hold the template
/// index and the low 20 bits the pair within the template.
pub const TEMPLATE_PAIR_BASE: u64 = 1 << 40;
const TEMPLATE_SHIFT: u32 = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
    #[error("unknown word {0:?}")]
    UnknownWord(String),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// Where the gendered word sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Right after `<bos>`.
    Near,
    /// Last position of the sentence.
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    /// Number of examples before the split.
    pub corpus_size: usize,
    /// Number of template skeletons; each yields one pair per identity tag
    /// and label.
    pub eval_templates: usize,
    /// Probability that the gendered word sits on the side linked to the
    /// label.
    pub shortcut_strength: f64,
    /// Distinct task words, half of each polarity.
    pub task_tokens: usize,
    /// Distinct filler words.
    pub noise_tokens: usize,
    /// Task words per sentence; odd so the majority is defined.
    pub task_per_sentence: usize,
    /// Probability that a task word carries the label's polarity, drawn
    /// independently per word and redrawn until the majority matches.
    pub task_agreement: f64,
    /// Probability that a sentence's task words are drawn for the opposite
    /// label.
    pub label_noise: f64,
    /// Sentence length range, `<bos>` included.
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a training sentence mentions an identity word.
    pub identity_rate: f64,
    pub placement: Placement,
    pub split_ratios: [f64; 3],
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus_size: 4000,
            eval_templates: 60,
            shortcut_strength: 0.9,
            task_tokens: 8,
            noise_tokens: 24,
            task_per_sentence: 3,
            task_agreement: 1.0,
            label_noise: 0.1,
            min_len: 8,
            max_len: 12,
            identity_rate: 0.5,
            placement: Placement::Near,
            split_ratios: [0.8, 0.1, 0.1],
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.shortcut_strength) {
            return bad("shortcut_strength must lie in [0, 1]");
        }
        if !(self.task_agreement > 0.5 && self.task_agreement <= 1.0) {
            return bad("task_agreement must lie in (0.5, 1]");
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.identity_rate) {
            return bad("identity_rate must lie in [0, 1]");
        }
        if self.corpus_size < MIN_CORPUS_SIZE {
            return bad("corpus_size is too small for a balanced split");
        }
        if self.eval_templates < 2 {
            return bad("eval_templates must be at least 2 (one per evaluation split)");
        }
        if self.task_per_sentence.is_multiple_of(2) {
            return bad("task_per_sentence must be odd");
        }
        // bos + gendered word + identity word + task words
        if self.min_len < self.task_per_sentence + 3 {
            return bad("min_len too short for the task words");
        }
        if self.max_len < self.min_len {
            return bad("max_len must be at least min_len");
        }
        check_ratios(&self.split_ratios)
    }

    pub fn vocab(&self, lexicon: &Lexicon) -> Result<Vocab, CorpusError> {
        Vocab::new(lexicon, self.task_tokens, self.noise_tokens)
    }
}

fn check_ratios(r: &[f64; 3]) -> Result<(), CorpusError> {
    if r.iter().any(|v| !v.is_finite() || *v < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidConfig(format!(
            "split ratios {r:?} must be non-negative and sum to 1"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<TokenId>,
    pub text: Vec<String>,
    pub label: u8,
    pub z: u8,
    pub pair_id: u64,
    pub subgroups: Vec<(String, String)>,
}

impl LabeledSequence for Example {
    fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    fn label(&self) -> u8 {
        self.label
    }
}

impl Example {
    fn new(id: String, tokens: Vec<TokenId>, label: u8, z: u8, pair_id: u64, vocab: &Vocab) -> Self {
        let subgroups = tokens
            .iter()
            .filter_map(|&t| vocab.identity_of(t))
            .map(|it| (it.family.clone(), it.tag.clone()))
            .collect();
        Example { id, text: vocab.decode(&tokens), tokens, label, z, pair_id, subgroups }
    }

    /// The counterfactual twin: genders flipped, `z` toggled, same pair.
    pub fn twin(&self, vocab: &Vocab) -> Example {
        let tokens = flip_gender(&self.tokens, vocab);
        let id = match self.id.strip_suffix("-z0") {
            Some(stem) => format!("{stem}-z1"),
            None => format!("{}-flip", self.id),
        };
        Example { id, text: vocab.decode(&tokens), tokens, z: 1 - self.z, ..self.clone() }
    }
}

/// Task words with majority polarity `label`.
fn draw_task_words(rng: &mut ChaCha8Rng, vocab: &Vocab, count: usize, agreement: f64, label: u8) -> Vec<TokenId> {
    let agree = loop {
        let agree: Vec<bool> = (0..count).map(|_| rng.random_bool(agreement)).collect();
        if 2 * agree.iter().filter(|a| **a).count() > count {
            break agree;
        }
    };
    let (with, against) = if label == 1 { (&vocab.positive, &vocab.negative) } else { (&vocab.negative, &vocab.positive) };
    agree
        .into_iter()
        .map(|a| {
            let pool = if a { with } else { against };
            pool[rng.random_range(0..pool.len())]
        })
        .collect()
}

/// Sentence skeleton: `<bos>` plus the gendered slot, with the other slots
/// shuffled so the caller can fill them in order.
fn skeleton(rng: &mut ChaCha8Rng, config: &CorpusConfig) -> (Vec<TokenId>, usize, Vec<usize>) {
    let n = rng.random_range(config.min_len..=config.max_len);
    let gender_slot = match config.placement {
        Placement::Near => 1,
        Placement::Far => n - 1,
    };
    let mut free: Vec<usize> = (1..n).filter(|&p| p != gender_slot).collect();
    free.shuffle(rng);
    (vec![BOS_ID; n], gender_slot, free)
}

/// Training corpus, exactly balanced up to one example.
pub fn gen_train_corpus(config: &CorpusConfig, lexicon: &Lexicon) -> Result<Vec<Example>, CorpusError> {
    config.validate()?;
    let vocab = config.vocab(lexicon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.corpus_size;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n / 2)).collect();
    labels.shuffle(&mut rng);

    let c = config.task_per_sentence;
    let mut out = Vec::with_capacity(n);
    for (i, &y) in labels.iter().enumerate() {
        let (mut tokens, g, free) = skeleton(&mut rng, config);
        let linked = y;
        let side = if rng.random_bool(config.shortcut_strength) { linked } else { 1 - linked };
        let (a, b) = vocab.gender_pairs[rng.random_range(0..vocab.gender_pairs.len())];
        tokens[g] = if side == 0 { a } else { b };

        let content = if rng.random_bool(config.label_noise) { 1 - y } else { y };
        let task = draw_task_words(&mut rng, &vocab, c, config.task_agreement, content);
        let mut slots = free.into_iter();
        for (w, p) in task.into_iter().zip(slots.by_ref()) {
            tokens[p] = w;
        }
        if rng.random_bool(config.identity_rate) {
            let p = slots.next().expect("min_len leaves room for an identity word");
            tokens[p] = vocab.identity[rng.random_range(0..vocab.identity.len())].id;
        }
        for p in slots {
            tokens[p] = vocab.filler[rng.random_range(0..vocab.filler.len())];
        }
        out.push(Example::new(format!("ex{i:05}"), tokens, y, 0, i as u64, &vocab));
    }
    Ok(out)
}

pub fn template_pair_id(template: usize, pair: usize) -> u64 {
    TEMPLATE_PAIR_BASE + ((template as u64) << TEMPLATE_SHIFT) + pair as u64
}

/// Template index encoded in a template pair id.
pub fn template_index(pair_id: u64) -> Option<usize> {
    pair_id.checked_sub(TEMPLATE_PAIR_BASE).map(|v| (v >> TEMPLATE_SHIFT) as usize)
}

/// Paired templates, `z = 0` original followed by its `z = 1` twin. Every
/// template yields one pair per identity tag and label.
pub fn gen_eval_templates(config: &CorpusConfig, lexicon: &Lexicon) -> Result<Vec<Example>, CorpusError> {
    config.validate()?;
    let vocab = config.vocab(lexicon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let c = config.task_per_sentence;
    let mut out = Vec::new();
    for t in 0..config.eval_templates {
        let (mut base, g, free) = skeleton(&mut rng, config);
        let (a, _) = vocab.gender_pairs[rng.random_range(0..vocab.gender_pairs.len())];
        base[g] = a;
        let task = draw_task_words(&mut rng, &vocab, c, config.task_agreement, 1);
        let task_slots = &free[..c];
        let identity_slot = free[c];
        for &p in &free[c + 1..] {
            base[p] = vocab.filler[rng.random_range(0..vocab.filler.len())];
        }
        let mut pair = 0;
        for ident in &vocab.identity {
            for y in [0u8, 1] {
                let mut tokens = base.clone();
                tokens[identity_slot] = ident.id;
                for (&p, &w) in task_slots.iter().zip(&task) {
                    tokens[p] = if y == 1 { w } else { mirror(&vocab, w) };
                }
                let id = format!("tpl{t:03}-{}-{}-y{y}-z0", ident.family, ident.tag);
                let original = Example::new(id, tokens, y, 0, template_pair_id(t, pair), &vocab);
                let twin = original.twin(&vocab);
                out.push(original);
                out.push(twin);
                pair += 1;
            }
        }
    }
    Ok(out)
}

fn mirror(vocab: &Vocab, w: TokenId) -> TokenId {
    if let Some(i) = vocab.positive.iter().position(|&p| p == w) {
        vocab.negative[i]
    } else if let Some(i) = vocab.negative.iter().position(|&p| p == w) {
        vocab.positive[i]
    } else {
        w
    }
}

/// Templates with an even index go to validation, odd to test.
pub fn template_halves(templates: &[Example]) -> (Vec<Example>, Vec<Example>) {
    templates.iter().cloned().partition(|e| template_index(e.pair_id).is_some_and(|t| t % 2 == 0))
}

/// Label-stratified split. Each part keeps corpus order.
pub fn split(
    corpus: &[Example],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>), CorpusError> {
    check_ratios(&ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part = vec![0u8; corpus.len()];
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].label == label).collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = (n * ratios[0]).round() as usize;
        let n_val = ((n * ratios[1]).round() as usize).min(idx.len() - n_train);
        for (k, &i) in idx.iter().enumerate() {
            part[i] = if k < n_train {
                0
            } else if k < n_train + n_val {
                1
            } else {
                2
            };
        }
    }
    let pick = |p: u8| -> Vec<Example> {
        corpus.iter().zip(&part).filter(|(_, q)| **q == p).map(|(e, _)| e.clone()).collect()
    };
    let (train, val, test) = (pick(0), pick(1), pick(2));
    for (name, set) in [("train", &train), ("validation", &val), ("test", &test)] {
        if set.is_empty() {
            return Err(CorpusError::DegenerateSplit(format!("{name} part is empty")));
        }
    }
    Ok((train, val, test))
}

/// Everything `gen` produces.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub templates: Vec<Example>,
}

pub fn generate(config: &CorpusConfig, lexicon: &Lexicon) -> Result<GeneratedCorpus, CorpusError> {
    let corpus = gen_train_corpus(config, lexicon)?;
    let (train, validation, test) = split(&corpus, config.split_ratios, config.seed)?;
    let templates = gen_eval_templates(config, lexicon)?;
    Ok(GeneratedCorpus { train, validation, test, templates })
}

pub fn to_jsonl(examples: &[Example]) -> String {
    let mut s = String::new();
    for e in examples {
        s.push_str(&serde_json::to_string(e).expect("example serializes"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<(), CorpusError> {
    let io = |e: std::io::Error| CorpusError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    w.write_all(to_jsonl(examples).as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>, CorpusError> {
    let shown = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| CorpusError::Io { path: shown.clone(), message: e.to_string() })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io { path: shown.clone(), message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Example = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Parse { path: shown.clone(), line: i + 1, message: e.to_string() })?;
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn lex() -> Lexicon {
        Lexicon::builtin()
    }

    /// Phi coefficient between "gendered word on side B" and the label.
    fn gender_label_phi(examples: &[Example], vocab: &Vocab) -> f64 {
        let mut n = [[0f64; 2]; 2];
        for e in examples {
            let side = e.tokens.iter().find_map(|&t| vocab.gender_side(t)).unwrap();
            n[side as usize][e.label as usize] += 1.0;
        }
        let num = n[1][1] * n[0][0] - n[1][0] * n[0][1];
        let den = ((n[1][1] + n[1][0]) * (n[0][1] + n[0][0]) * (n[1][1] + n[0][1]) * (n[1][0] + n[0][0])).sqrt();
        num / den
    }

    #[test]
    fn no_shortcut_at_half() {
        let cfg = CorpusConfig { shortcut_strength: 0.5, ..Default::default() };
        let ex = gen_train_corpus(&cfg, &lex()).unwrap();
        let phi = gender_label_phi(&ex, &cfg.vocab(&lex()).unwrap());
        assert!(phi.abs() <= 0.05, "phi {phi}");
    }

    #[test]
    fn strong_shortcut_correlates() {
        let cfg = CorpusConfig { shortcut_strength: 0.95, corpus_size: 4000, ..Default::default() };
        let ex = gen_train_corpus(&cfg, &lex()).unwrap();
        let phi = gender_label_phi(&ex, &cfg.vocab(&lex()).unwrap());
        assert!(phi >= 0.8, "phi {phi}");
    }

    #[test]
    fn labels_follow_task_majority_and_balance() {
        let cfg = CorpusConfig { label_noise: 0.0, ..Default::default() };
        let vocab = cfg.vocab(&lex()).unwrap();
        let ex = gen_train_corpus(&cfg, &lex()).unwrap();
        let ones = ex.iter().filter(|e| e.label == 1).count() as f64 / ex.len() as f64;
        assert!((ones - 0.5).abs() <= 0.05);
        for e in &ex {
            let pos = e.tokens.iter().filter(|t| vocab.positive.contains(t)).count();
            let neg = e.tokens.iter().filter(|t| vocab.negative.contains(t)).count();
            assert_eq!(pos + neg, cfg.task_per_sentence);
            assert_eq!(e.label, u8::from(pos > neg));
            assert_eq!(e.tokens[0], BOS_ID);
            assert!(e.tokens.len() <= cfg.max_len);
            assert_eq!(e.tokens.iter().filter(|&&t| vocab.is_gendered(t)).count(), 1);
            assert!(vocab.is_gendered(e.tokens[1]));
        }
    }

    #[test]
    fn label_noise_sets_disagreement_rate() {
        let cfg = CorpusConfig::default();
        let vocab = cfg.vocab(&lex()).unwrap();
        let ex = gen_train_corpus(&cfg, &lex()).unwrap();
        let disagree = ex
            .iter()
            .filter(|e| {
                let pos = e.tokens.iter().filter(|t| vocab.positive.contains(t)).count();
                u8::from(2 * pos > cfg.task_per_sentence) != e.label
            })
            .count() as f64
            / ex.len() as f64;
        assert!((disagree - cfg.label_noise).abs() < 0.02, "{disagree}");
    }

    #[test]
    fn far_placement_puts_gender_last() {
        let cfg = CorpusConfig { placement: Placement::Far, corpus_size: 50, ..Default::default() };
        let vocab = cfg.vocab(&lex()).unwrap();
        for e in gen_train_corpus(&cfg, &lex()).unwrap() {
            assert!(vocab.is_gendered(*e.tokens.last().unwrap()));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = CorpusConfig { corpus_size: 300, ..Default::default() };
        let a = to_jsonl(&gen_train_corpus(&cfg, &lex()).unwrap());
        let b = to_jsonl(&gen_train_corpus(&cfg, &lex()).unwrap());
        assert_eq!(a, b);
        let other = CorpusConfig { seed: 1, ..cfg };
        assert_ne!(a, to_jsonl(&gen_train_corpus(&other, &lex()).unwrap()));
    }

    #[test]
    fn templates_are_paired_balanced_and_gender_independent() {
        let cfg = CorpusConfig { eval_templates: 6, ..Default::default() };
        let vocab = cfg.vocab(&lex()).unwrap();
        let tpl = gen_eval_templates(&cfg, &lex()).unwrap();
        assert_eq!(tpl.len(), 6 * vocab.identity.len() * 2 * 2);
        for pair in tpl.chunks(2) {
            let (o, t) = (&pair[0], &pair[1]);
            assert_eq!((o.z, t.z), (0, 1));
            assert_eq!(o.pair_id, t.pair_id);
            assert_eq!(o.label, t.label);
            assert_eq!(o.subgroups, t.subgroups);
            assert_eq!(o.subgroups.len(), 1);
            for (a, b) in o.tokens.iter().zip(&t.tokens) {
                assert!(a == b || (vocab.is_gendered(*a) && vocab.partner(*a) == *b));
            }
            assert_ne!(o.tokens, t.tokens);
        }
        assert_eq!(gender_label_phi(&tpl, &vocab), 0.0);
        let mut cells: BTreeMap<(String, String), BTreeSet<u8>> = BTreeMap::new();
        let mut per_family: BTreeMap<String, [usize; 2]> = BTreeMap::new();
        for e in &tpl {
            let (f, t) = e.subgroups[0].clone();
            cells.entry((f.clone(), t)).or_default().insert(e.label);
            per_family.entry(f).or_default()[e.label as usize] += 1;
        }
        assert!(cells.values().all(|s| s.len() == 2));
        assert!(per_family.values().all(|c| c[0] == c[1]));
        let ids: BTreeSet<_> = tpl.iter().map(|e| &e.id).collect();
        assert_eq!(ids.len(), tpl.len());
    }

    #[test]
    fn template_halves_split_by_template() {
        let cfg = CorpusConfig { eval_templates: 5, ..Default::default() };
        let tpl = gen_eval_templates(&cfg, &lex()).unwrap();
        let (v, t) = template_halves(&tpl);
        assert_eq!(v.len() + t.len(), tpl.len());
        assert_eq!(v.len(), 3 * tpl.len() / 5);
        assert!(v.iter().all(|e| template_index(e.pair_id).unwrap().is_multiple_of(2)));
        assert!(t.iter().all(|e| template_index(e.pair_id).unwrap() % 2 == 1));
    }

    #[test]
    fn too_few_templates_rejected() {
        let cfg = CorpusConfig { eval_templates: 1, ..Default::default() };
        assert!(matches!(gen_eval_templates(&cfg, &lex()), Err(CorpusError::InvalidConfig(_))));
    }

    #[test]
    fn split_sizes_and_union() {
        let cfg = CorpusConfig { corpus_size: 1000, ..Default::default() };
        let ex = gen_train_corpus(&cfg, &lex()).unwrap();
        let (a, b, c) = split(&ex, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (800, 100, 100));
        let all: BTreeSet<_> = a.iter().chain(&b).chain(&c).map(|e| e.id.clone()).collect();
        let orig: BTreeSet<_> = ex.iter().map(|e| e.id.clone()).collect();
        assert_eq!(all, orig);
        for part in [&b, &c] {
            assert_eq!(part.iter().filter(|e| e.label == 1).count(), 50);
        }
        assert_eq!(split(&ex, [0.8, 0.1, 0.1], 3).unwrap(), (a, b, c));
    }

    #[test]
    fn split_errors() {
        let cfg = CorpusConfig { corpus_size: 20, ..Default::default() };
        let ex = gen_train_corpus(&cfg, &lex()).unwrap();
        assert!(matches!(split(&ex, [0.8, 0.1, 0.2], 0), Err(CorpusError::InvalidConfig(_))));
        assert!(matches!(split(&ex, [1.0, 0.0, 0.0], 0), Err(CorpusError::DegenerateSplit(_))));
        assert!(matches!(split(&ex[..2], [0.8, 0.1, 0.1], 0), Err(CorpusError::DegenerateSplit(_))));
    }

    #[test]
    fn config_validation() {
        let bad = [
            CorpusConfig { shortcut_strength: 1.2, ..Default::default() },
            CorpusConfig { corpus_size: 5, ..Default::default() },
            CorpusConfig { task_per_sentence: 2, ..Default::default() },
            CorpusConfig { task_agreement: 0.5, ..Default::default() },
            CorpusConfig { label_noise: 0.5, ..Default::default() },
            CorpusConfig { min_len: 4, ..Default::default() },
            CorpusConfig { max_len: 6, ..Default::default() },
            CorpusConfig { split_ratios: [0.5, 0.5, 0.5], ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let text = toml::to_string(&CorpusConfig::default()).unwrap();
        assert_eq!(toml::from_str::<CorpusConfig>(&text).unwrap(), CorpusConfig::default());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let cfg = CorpusConfig { eval_templates: 2, ..Default::default() };
        let tpl = gen_eval_templates(&cfg, &lex()).unwrap();
        write_jsonl(&path, &tpl).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), tpl);
        fs::write(&path, "{\"id\": 3}\n").unwrap();
        assert!(matches!(read_jsonl(&path), Err(CorpusError::Parse { line: 1, .. })));
        assert!(matches!(read_jsonl(&dir.path().join("missing")), Err(CorpusError::Io { .. })));
    }
}
