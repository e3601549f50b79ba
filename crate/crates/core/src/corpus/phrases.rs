//! Collocation merging.
//!
//! A bigram `(a, b)` is merged when `count(ab) >= min_count` and
//!
//! ```text
//! score(a, b) = (count(ab) - min_count) * T / (count(a) * count(b)) > threshold
//! ```
//!
//! with `T` the total token count of the pass. Each further pass re-counts the
//! merged streams, so two passes produce up to trigrams.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const JOINER: char = '_';

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhraseConfig {
    pub min_count: u64,
    pub threshold: f64,
    pub passes: usize,
    /// Longest n-gram a merge may produce.
    pub max_ngram: usize,
}

impl Default for PhraseConfig {
    fn default() -> Self {
        Self {
            min_count: 5,
            threshold: 10.0,
            passes: 2,
            max_ngram: 3,
        }
    }
}

impl PhraseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_count < 1 {
            return Err(Error::invalid("phrase config", "min_count must be >= 1"));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::invalid("phrase config", "threshold must be > 0"));
        }
        if self.passes < 1 || self.max_ngram < 2 {
            return Err(Error::invalid("phrase config", "passes >= 1 and max_ngram >= 2 required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Merge {
    a: String,
    b: String,
    score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhraseModel {
    merges: HashMap<String, HashMap<String, f64>>,
    pub min_count: u64,
    pub threshold: f64,
    pub passes: usize,
}

#[derive(Serialize, Deserialize)]
struct PhraseModelFile {
    min_count: u64,
    threshold: f64,
    passes: usize,
    merges: Vec<Merge>,
}

impl PhraseModel {
    pub fn empty(config: &PhraseConfig) -> Self {
        Self {
            merges: HashMap::new(),
            min_count: config.min_count,
            threshold: config.threshold,
            passes: config.passes,
        }
    }

    pub fn len(&self) -> usize {
        self.merges.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn score(&self, a: &str, b: &str) -> Option<f64> {
        self.merges.get(a)?.get(b).copied()
    }

    fn insert(&mut self, a: &str, b: &str, score: f64) {
        self.merges.entry(a.to_string()).or_default().insert(b.to_string(), score);
    }

    /// Merges sorted by `(a, b)`.
    pub fn merges(&self) -> Vec<(&str, &str, f64)> {
        let mut out: Vec<_> = self
            .merges
            .iter()
            .flat_map(|(a, bs)| bs.iter().map(move |(b, s)| (a.as_str(), b.as_str(), *s)))
            .collect();
        out.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PhraseModelFile {
            min_count: self.min_count,
            threshold: self.threshold,
            passes: self.passes,
            merges: self
                .merges()
                .into_iter()
                .map(|(a, b, score)| Merge {
                    a: a.into(),
                    b: b.into(),
                    score,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: PhraseModelFile = serde_json::from_str(s)?;
        let mut model = PhraseModel {
            merges: HashMap::new(),
            min_count: file.min_count,
            threshold: file.threshold,
            passes: file.passes.max(1),
        };
        for m in file.merges {
            model.insert(&m.a, &m.b, m.score);
        }
        Ok(model)
    }
}

fn parts(token: &str) -> usize {
    token.split(JOINER).count()
}

pub fn learn_phrases<S: AsRef<[String]>>(sequences: &[S], config: &PhraseConfig) -> Result<PhraseModel> {
    config.validate()?;
    let mut model = PhraseModel::empty(config);
    let mut streams: Vec<Vec<String>> = sequences.iter().map(|s| s.as_ref().to_vec()).collect();

    for _ in 0..config.passes {
        let mut unigrams: HashMap<&str, u64> = HashMap::new();
        let mut bigrams: HashMap<(&str, &str), u64> = HashMap::new();
        let mut total: u64 = 0;
        for s in &streams {
            total += s.len() as u64;
            for t in s {
                *unigrams.entry(t.as_str()).or_default() += 1;
            }
            for w in s.windows(2) {
                *bigrams.entry((w[0].as_str(), w[1].as_str())).or_default() += 1;
            }
        }
        if total == 0 {
            break;
        }
        // BTreeMap keeps insertion order independent of hash seeds.
        let mut accepted: BTreeMap<(String, String), f64> = BTreeMap::new();
        for (&(a, b), &count) in &bigrams {
            if count < config.min_count || parts(a) + parts(b) > config.max_ngram {
                continue;
            }
            if model.score(a, b).is_some() {
                continue;
            }
            let score = (count - config.min_count) as f64 * total as f64 / (unigrams[a] as f64 * unigrams[b] as f64);
            if score > config.threshold {
                accepted.insert((a.to_string(), b.to_string()), score);
            }
        }
        if accepted.is_empty() {
            break;
        }
        for ((a, b), score) in &accepted {
            model.insert(a, b, *score);
        }
        let mut pass_model = PhraseModel::empty(config);
        for ((a, b), score) in accepted {
            pass_model.insert(&a, &b, score);
        }
        streams = streams.iter().map(|s| merge_once(s, &pass_model)).collect();
    }
    Ok(model)
}

fn merge_once(tokens: &[String], model: &PhraseModel) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        if i + 1 < tokens.len() && model.score(&tokens[i], &tokens[i + 1]).is_some() {
            out.push(format!("{}{JOINER}{}", tokens[i], tokens[i + 1]));
            i += 2;
        } else {
            out.push(tokens[i].clone());
            i += 1;
        }
    }
    out
}

/// Greedy left-to-right, non-overlapping merges, repeated `model.passes` times.
pub fn apply_phrases(tokens: &[String], model: &PhraseModel) -> Vec<String> {
    if model.is_empty() {
        return tokens.to_vec();
    }
    let mut cur = tokens.to_vec();
    for _ in 0..model.passes {
        let next = merge_once(&cur, model);
        let done = next.len() == cur.len();
        cur = next;
        if done {
            break;
        }
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|t| t.to_string()).collect()
    }

    fn model_with(pairs: &[(&str, &str)], passes: usize) -> PhraseModel {
        let mut m = PhraseModel::empty(&PhraseConfig {
            passes,
            ..PhraseConfig::default()
        });
        for (a, b) in pairs {
            m.insert(a, b, 100.0);
        }
        m
    }

    /// Builds sentences where `count(ab) = ab`, `count(a) = na`, `count(b) = nb`
    /// and the total token count is `total`.
    fn corpus(ab: usize, na: usize, nb: usize, total: usize) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for _ in 0..ab {
            out.push(s(&["a", "b"]));
        }
        for _ in 0..na - ab {
            out.push(s(&["a"]));
        }
        for _ in 0..nb - ab {
            out.push(s(&["b"]));
        }
        let used = na + nb;
        for i in 0..total - used {
            out.push(vec![format!("f{i}")]);
        }
        out
    }

    #[test]
    fn score_at_threshold_is_not_merged() {
        // (20 - 5) * 1000 / (50 * 30) = 10.0
        let m = learn_phrases(&corpus(20, 50, 30, 1000), &PhraseConfig::default()).unwrap();
        assert!(m.score("a", "b").is_none());
    }

    #[test]
    fn score_above_threshold_is_merged() {
        // (21 - 5) * 1000 / (50 * 30) = 10.666..
        let m = learn_phrases(&corpus(21, 50, 30, 1000), &PhraseConfig::default()).unwrap();
        let score = m.score("a", "b").unwrap();
        assert!((score - 16_000.0 / 1500.0).abs() < 1e-12);
    }

    #[test]
    fn below_min_count_never_merged() {
        let m = learn_phrases(&corpus(4, 4, 4, 1000), &PhraseConfig::default()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn empty_corpus_gives_empty_model() {
        let empty: Vec<Vec<String>> = Vec::new();
        assert!(learn_phrases(&empty, &PhraseConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn second_pass_builds_trigrams() {
        let mut seqs = Vec::new();
        for _ in 0..40 {
            seqs.push(s(&["new", "york", "city"]));
        }
        for i in 0..400 {
            seqs.push(vec![format!("filler{i}")]);
        }
        let m = learn_phrases(&seqs, &PhraseConfig::default()).unwrap();
        assert_eq!(apply_phrases(&s(&["new", "york", "city"]), &m), ["new_york_city"]);
    }

    #[test]
    fn apply_two_pass_greedy() {
        let m = model_with(&[("new", "york"), ("new_york", "city")], 2);
        assert_eq!(apply_phrases(&s(&["new", "york", "city"]), &m), ["new_york_city"]);
        assert_eq!(apply_phrases(&s(&["x", "y"]), &m), ["x", "y"]);
    }

    #[test]
    fn apply_leftmost_first() {
        let m = model_with(&[("b", "b"), ("a", "b")], 2);
        assert_eq!(apply_phrases(&s(&["a", "b", "b"]), &m), ["a_b", "b"]);
    }

    #[test]
    fn json_round_trip() {
        let m = model_with(&[("b", "b"), ("a", "b")], 2);
        let back = PhraseModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn merging_preserves_parts(tokens in prop::collection::vec("[abc]", 0..30)) {
            let m = model_with(&[("a", "b"), ("b", "c"), ("a_b", "c"), ("c", "c")], 2);
            let out = apply_phrases(&tokens, &m);
            prop_assert!(out.len() <= tokens.len());
            let mut before: Vec<String> = tokens.clone();
            let mut after: Vec<String> = out.iter().flat_map(|t| t.split('_').map(String::from)).collect();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);
        }
    }
}
