//! Experiment protocols: temporal generalization of classifiers trained on
//! selected vocabularies, and the practical effect of vocabulary choice on
//! prevalence estimates.
//!
//! Both are pure functions of (plan, data, seed). Outer repeats run on a
//! bounded worker pool and their records are merged in a fixed order.

mod generalization;
mod practical;
pub mod stats;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use generalization::{run_generalization, BestCell, CellSummary, ExperimentPlan, GeneralizationOutput, RunRecord};
pub use practical::{run_practical, Divergence, PracticalCurve, PracticalOutput, PracticalPlan, PracticalRecord, Selection};

use crate::corpus::{learn_phrases, slice_store, DocumentRow, DocumentTermMatrix, Period, PeriodSlice, PhraseConfig, PhraseModel, PostStore, Vocabulary};
use crate::embed::{train_cbow_tokens, EmbedConfig, EmbeddingSpace};
use crate::model::{f1_score, threshold, train_classifier, ClassifierConfig, ClassifierModel};
use crate::select::{Method, SelectedVocabulary, SelectionInputs};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlatformProfile {
    Twitter,
    Reddit,
}

impl PlatformProfile {
    /// Minimum posts per user per time window.
    pub fn min_posts(self) -> usize {
        match self {
            PlatformProfile::Twitter => 200,
            PlatformProfile::Reddit => 100,
        }
    }
}

/// Role of a sampled user subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
    Embedding,
}

/// Constraint check for one emitted user subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetAudit {
    pub outer: usize,
    pub inner: Option<usize>,
    pub window: String,
    pub role: Role,
    pub positives: usize,
    pub negatives: usize,
    /// Fewest posts any member has in the window.
    pub min_posts: usize,
    /// Members that belong to the opposite side of the outer split.
    pub leaked: usize,
}

/// SHA-256 of the sorted, newline-joined terms.
pub fn vocab_hash<S: AsRef<str>>(terms: &[S]) -> String {
    let mut sorted: Vec<&str> = terms.iter().map(AsRef::as_ref).collect();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for (i, t) in sorted.iter().enumerate() {
        if i > 0 {
            h.update(b"\n");
        }
        h.update(t.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Phrased posts and an embedding space for one window.
pub(crate) struct WindowData {
    pub slice: PeriodSlice,
    pub phrases: Option<PhraseModel>,
    pub space: EmbeddingSpace,
}

pub(crate) fn learn_window(store: &PostStore, period: &Period, phrases: Option<&PhraseConfig>, embed: &EmbedConfig) -> Result<WindowData> {
    let periods = std::slice::from_ref(period);
    let raw = slice_store(store, periods, None)?.slices.remove(0);
    if raw.post_count() == 0 {
        return Err(Error::Insufficient(format!("no posts in window `{}`", period.name)));
    }
    let (slice, model) = match phrases {
        Some(cfg) => {
            let sentences: Vec<&Vec<String>> = raw.sentences().collect();
            let model = learn_phrases(&sentences, cfg)?;
            let slice = slice_store(store, periods, Some(std::slice::from_ref(&model)))?.slices.remove(0);
            (slice, Some(model))
        }
        None => (raw, None),
    };
    let sentences: Vec<&Vec<String>> = slice.sentences().collect();
    let space = train_cbow_tokens(&sentences, embed)?.with_name(period.name.clone());
    Ok(WindowData { slice, phrases: model, space })
}

pub(crate) fn apply_window(store: &PostStore, period: &Period, phrases: Option<&PhraseModel>) -> Result<PeriodSlice> {
    let models = phrases.map(std::slice::from_ref);
    Ok(slice_store(store, std::slice::from_ref(period), models)?.slices.remove(0))
}

pub(crate) fn users_dtm(slice: &PeriodSlice, users: &[String], vocab: Arc<Vocabulary>) -> DocumentTermMatrix {
    DocumentTermMatrix::from_rows(
        users.iter().filter_map(|u| {
            slice
                .users
                .get(u)
                .map(|s| DocumentRow::new(u.clone(), s.tokens(), s.label, s.posts.len() as u32))
        }),
        vocab,
    )
}

/// Labelled users of a slice with at least `min_posts` posts, by class.
pub(crate) fn eligible(slice: &PeriodSlice, within: &BTreeSet<&str>, min_posts: usize) -> (Vec<String>, Vec<String>) {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (u, s) in &slice.users {
        if s.posts.len() < min_posts || !within.contains(u.as_str()) {
            continue;
        }
        match s.label {
            Some(true) => pos.push(u.clone()),
            Some(false) => neg.push(u.clone()),
            None => {}
        }
    }
    (pos, neg)
}

/// Stratified split returning (train, test) user ids.
pub(crate) fn stratified_split(users: &[(String, bool)], test_fraction: f64, rng: &mut impl Rng) -> Result<(Vec<String>, Vec<String>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [true, false] {
        let mut ids: Vec<&String> = users.iter().filter(|(_, l)| *l == class).map(|(u, _)| u).collect();
        ids.shuffle(rng);
        let n_test = (test_fraction * ids.len() as f64).round() as usize;
        if n_test == 0 || n_test == ids.len() {
            return Err(Error::Insufficient(format!(
                "{} {} users cannot fill both sides of a {:.0}/{:.0} split",
                ids.len(),
                if class { "positive" } else { "negative" },
                100.0 * (1.0 - test_fraction),
                100.0 * test_fraction
            )));
        }
        test.extend(ids[..n_test].iter().map(|s| s.to_string()));
        train.extend(ids[n_test..].iter().map(|s| s.to_string()));
    }
    train.sort();
    test.sort();
    Ok((train, test))
}

pub(crate) fn draw_balanced(pos: &[String], neg: &[String], per_class: usize, rng: &mut impl Rng) -> Vec<String> {
    let mut out: Vec<String> = pos.choose_multiple(rng, per_class).cloned().collect();
    out.extend(neg.choose_multiple(rng, per_class).cloned());
    out.sort();
    out
}

pub(crate) fn audit(slice: &PeriodSlice, users: &[String], other_side: &BTreeSet<&str>, (outer, inner): (usize, Option<usize>), role: Role) -> SubsetAudit {
    let mut a = SubsetAudit {
        outer,
        inner,
        window: slice.period.name.clone(),
        role,
        positives: 0,
        negatives: 0,
        min_posts: usize::MAX,
        leaked: 0,
    };
    for u in users {
        let s = slice.users.get(u);
        match s.and_then(|s| s.label) {
            Some(true) => a.positives += 1,
            Some(false) => a.negatives += 1,
            None => {}
        }
        a.min_posts = a.min_posts.min(s.map_or(0, |s| s.posts.len()));
        if other_side.contains(u.as_str()) {
            a.leaked += 1;
        }
    }
    if users.is_empty() {
        a.min_posts = 0;
    }
    a
}

/// A classifier for one selected vocabulary and its scores.
#[derive(Debug, Clone)]
pub(crate) struct Fitted {
    pub model: ClassifierModel,
    pub dev_f1: Option<f64>,
    pub hash: String,
}

pub(crate) fn fit_selection(train: &DocumentTermMatrix, sel: &SelectedVocabulary, source: &Vocabulary, cfg: &ClassifierConfig) -> Result<Fitted> {
    if sel.terms.is_empty() {
        return Err(Error::Insufficient(format!("{} selection at p = {} is empty", sel.method, sel.p)));
    }
    let vocab = Arc::new(Vocabulary::from_ordered(sel.terms.iter().map(|t| (t.clone(), source.freq_of(t))))?);
    let mut model = train_classifier(train, vocab, cfg)?;
    model.meta.method = Some(sel.method.name().to_string());
    model.meta.percentile = Some(sel.p);
    let dev_f1 = model
        .meta
        .c_grid
        .iter()
        .position(|&c| c == model.c)
        .and_then(|i| model.meta.cv_mean_f1.get(i).copied());
    Ok(Fitted {
        model,
        dev_f1,
        hash: vocab_hash(&sel.terms),
    })
}

pub(crate) fn test_f1(model: &ClassifierModel, dtm: &DocumentTermMatrix) -> Result<f64> {
    let labels = dtm.labels().ok_or_else(|| Error::invalid("test matrix", "rows are unlabelled"))?;
    Ok(f1_score(&threshold(&model.predict_proba(dtm)), labels).f1)
}

/// Every (method, p) selection of a run, with classifiers shared between
/// identical vocabularies.
pub(crate) fn fit_all(
    inputs: &SelectionInputs<'_>,
    methods: &[Method],
    percentiles: &[u32],
    train: &DocumentTermMatrix,
    cfg: &ClassifierConfig,
    mut visit: impl FnMut(Method, u32, &Fitted) -> Result<()>,
) -> Result<()> {
    let mut cache: HashMap<String, Fitted> = HashMap::new();
    for &method in methods {
        for sel in inputs.sweep(method, percentiles)? {
            let hash = vocab_hash(&sel.terms);
            if !cache.contains_key(&hash) {
                let fitted = fit_selection(train, &sel, inputs.source, cfg)?;
                cache.insert(hash.clone(), fitted);
            }
            visit(method, sel.p, &cache[&hash])?;
        }
    }
    Ok(())
}

pub(crate) fn needs_model(methods: &[Method]) -> bool {
    methods.iter().any(|m| matches!(m, Method::Coefficient | Method::Weighted))
}

pub(crate) fn needs_table(methods: &[Method]) -> bool {
    methods.iter().any(|m| matches!(m, Method::Overlap | Method::Weighted))
}

/// Runs `job` for `0..n` on at most `workers` threads, keeping index order.
pub(crate) fn run_pool<T: Send>(n: usize, workers: usize, job: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    if workers <= 1 {
        return (0..n).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("worker pool", e.to_string()))?;
    pool.install(|| (0..n).into_par_iter().map(&job).collect())
}

pub(crate) fn csv_row(w: &mut impl Write, fields: &[String]) -> Result<()> {
    let line: Vec<String> = fields.iter().map(|f| crate::corpus::vocab::csv_field(f).into_owned()).collect();
    writeln!(w, "{}", line.join(","))?;
    Ok(())
}

pub(crate) fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub(crate) type Grouped<K> = BTreeMap<K, Vec<f64>>;
