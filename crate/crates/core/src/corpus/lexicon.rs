use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::model::{TokenId, BOS_ID, PAD_ID};

use super::CorpusError;

pub const LEXICON_FORMAT_VERSION: u32 = 1;

/// The lexicon bundled with the crate.
pub const BUILTIN_LEXICON: &str = include_str!("../../resources/lexicon.json");

pub const PAD_TEXT: &str = "<pad>";
pub const BOS_TEXT: &str = "<bos>";

/// Word lists. The first member of each gender pair is side A, the second
/// side B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lexicon {
    pub version: u32,
    pub gender_pairs: Vec<(String, String)>,
    pub identity_families: BTreeMap<String, Vec<String>>,
    pub task_positive: Vec<String>,
    pub task_negative: Vec<String>,
    pub filler: Vec<String>,
}

impl Lexicon {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let lex: Lexicon =
            serde_json::from_str(text).map_err(|e| CorpusError::InvalidLexicon(e.to_string()))?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lexicon serializes")
    }

    /// Every word appears once across all lists, pairs are non-trivial, and
    /// there is at least one identity family with two or more tags.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidLexicon(m));
        if self.version != LEXICON_FORMAT_VERSION {
            return bad(format!("unsupported lexicon version {}", self.version));
        }
        if self.gender_pairs.is_empty() {
            return bad("no gender pairs".into());
        }
        if self.identity_families.is_empty() {
            return bad("no identity families".into());
        }
        for (family, tags) in &self.identity_families {
            if tags.len() < 2 {
                return bad(format!("identity family {family} needs at least two tags"));
            }
        }
        if self.task_positive.len() != self.task_negative.len() || self.task_positive.is_empty() {
            return bad("task_positive and task_negative must be non-empty and equally long".into());
        }
        if self.filler.is_empty() {
            return bad("no filler words".into());
        }
        let mut seen = HashSet::new();
        seen.insert(PAD_TEXT);
        seen.insert(BOS_TEXT);
        for w in self.words() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return bad(format!("word {w:?} must be non-empty and whitespace-free"));
            }
            if !seen.insert(w) {
                return bad(format!("word {w:?} appears more than once"));
            }
        }
        Ok(())
    }

    /// All words in vocabulary order, excluding the reserved tokens.
    fn words(&self) -> impl Iterator<Item = &str> {
        self.gender_pairs
            .iter()
            .flat_map(|(a, b)| [a.as_str(), b.as_str()])
            .chain(self.identity_families.values().flatten().map(String::as_str))
            .chain(self.task_positive.iter().map(String::as_str))
            .chain(self.task_negative.iter().map(String::as_str))
            .chain(self.filler.iter().map(String::as_str))
    }
}

/// Identity token with its family and tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityToken {
    pub family: String,
    pub tag: String,
    pub id: TokenId,
}

/// Token-id layout: `<pad>`, `<bos>`, gender pairs (A, B interleaved),
/// identity tokens by family, positive then negative task tokens, filler.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
    partner: Vec<TokenId>,
    pub gender_pairs: Vec<(TokenId, TokenId)>,
    pub identity: Vec<IdentityToken>,
    pub positive: Vec<TokenId>,
    pub negative: Vec<TokenId>,
    pub filler: Vec<TokenId>,
}

impl Vocab {
    /// Uses the first `task_tokens / 2` words of each polarity and the first
    /// `noise_tokens` filler words.
    pub fn new(lexicon: &Lexicon, task_tokens: usize, noise_tokens: usize) -> Result<Self, CorpusError> {
        lexicon.validate()?;
        let half = task_tokens / 2;
        if task_tokens < 2 || !task_tokens.is_multiple_of(2) || half > lexicon.task_positive.len() {
            return Err(CorpusError::InvalidConfig(format!(
                "task_tokens must be even, at least 2 and at most {}",
                2 * lexicon.task_positive.len()
            )));
        }
        if noise_tokens == 0 || noise_tokens > lexicon.filler.len() {
            return Err(CorpusError::InvalidConfig(format!(
                "noise_tokens must be in 1..={}",
                lexicon.filler.len()
            )));
        }

        let mut words: Vec<String> = vec![PAD_TEXT.into(), BOS_TEXT.into()];
        let mut push = |w: &str| {
            words.push(w.to_string());
            (words.len() - 1) as TokenId
        };
        let gender_pairs: Vec<_> = lexicon.gender_pairs.iter().map(|(a, b)| (push(a), push(b))).collect();
        let identity: Vec<_> = lexicon
            .identity_families
            .iter()
            .flat_map(|(f, tags)| tags.iter().map(move |t| (f, t)))
            .map(|(f, t)| IdentityToken { family: f.clone(), tag: t.clone(), id: push(t) })
            .collect();
        let positive: Vec<_> = lexicon.task_positive[..half].iter().map(|w| push(w)).collect();
        let negative: Vec<_> = lexicon.task_negative[..half].iter().map(|w| push(w)).collect();
        let filler: Vec<_> = lexicon.filler[..noise_tokens].iter().map(|w| push(w)).collect();

        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as TokenId)).collect();
        let mut partner: Vec<TokenId> = (0..words.len() as TokenId).collect();
        for &(a, b) in &gender_pairs {
            partner[a as usize] = b;
            partner[b as usize] = a;
        }
        debug_assert_eq!(words[PAD_ID as usize], PAD_TEXT);
        debug_assert_eq!(words[BOS_ID as usize], BOS_TEXT);
        Ok(Vocab { words, index, partner, gender_pairs, identity, positive, negative, filler })
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &[&str]) -> Result<Vec<TokenId>, CorpusError> {
        text.iter()
            .map(|w| self.id(w).ok_or_else(|| CorpusError::UnknownWord(w.to_string())))
            .collect()
    }

    pub fn decode(&self, tokens: &[TokenId]) -> Vec<String> {
        tokens.iter().map(|&t| self.word(t).unwrap_or("<unk>").to_string()).collect()
    }

    pub fn is_gendered(&self, id: TokenId) -> bool {
        self.partner.get(id as usize).is_some_and(|&p| p != id)
    }

    /// Gender partner of `id`; any other id maps to itself.
    pub fn partner(&self, id: TokenId) -> TokenId {
        self.partner.get(id as usize).copied().unwrap_or(id)
    }

    /// `0` for side A, `1` for side B, `None` for non-gendered ids.
    pub fn gender_side(&self, id: TokenId) -> Option<u8> {
        self.gender_pairs.iter().find_map(|&(a, b)| {
            if id == a {
                Some(0)
            } else if id == b {
                Some(1)
            } else {
                None
            }
        })
    }

    pub fn identity_of(&self, id: TokenId) -> Option<&IdentityToken> {
        self.identity.iter().find(|t| t.id == id)
    }
}

/// Replaces every gendered token with its partner.
pub fn flip_gender(tokens: &[TokenId], vocab: &Vocab) -> Vec<TokenId> {
    tokens.iter().map(|&t| vocab.partner(t)).collect()
}
