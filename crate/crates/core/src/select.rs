//! Vocabulary selection.
//!
//! Cumulative and Intersection are fixed frequency-gated baselines. The other
//! six methods score every Intersection term and keep the top p% for
//! p = 10, 20, .., 100.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{csv_field, split_last_field};
use crate::corpus::{DocumentTermMatrix, Vocabulary};
use crate::model::ClassifierModel;
use crate::seed;
use crate::shift::StabilityTable;
use crate::{Error, Result};

pub const FREQ_FLOOR: u64 = 50;
pub const PERCENTILES: [u32; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cumulative,
    Intersection,
    Frequency,
    Random,
    #[serde(rename = "chi2")]
    ChiSquared,
    Coefficient,
    Overlap,
    Weighted,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Cumulative,
        Method::Intersection,
        Method::Frequency,
        Method::Random,
        Method::ChiSquared,
        Method::Coefficient,
        Method::Overlap,
        Method::Weighted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cumulative => "cumulative",
            Method::Intersection => "intersection",
            Method::Frequency => "frequency",
            Method::Random => "random",
            Method::ChiSquared => "chi2",
            Method::Coefficient => "coefficient",
            Method::Overlap => "overlap",
            Method::Weighted => "weighted",
        }
    }

    /// Methods that rank the Intersection set and sweep p.
    pub fn is_scored(self) -> bool {
        !matches!(self, Method::Cumulative | Method::Intersection)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("selection method", s.to_string()))
    }
}

/// `{t : count_source(t) > floor}`.
pub fn select_cumulative(source: &Vocabulary, floor: u64) -> BTreeSet<String> {
    source.iter().filter(|(_, f)| *f > floor).map(|(t, _)| t.to_string()).collect()
}

/// Terms above `floor` in both periods.
pub fn select_intersection(source: &Vocabulary, target: &Vocabulary, floor: u64) -> BTreeSet<String> {
    source
        .iter()
        .filter(|(t, f)| *f > floor && target.freq_of(t) > floor)
        .map(|(t, _)| t.to_string())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_counts: bool,
    pub labels: bool,
    pub model: bool,
    pub stability: bool,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub method: Method,
    pub scores: HashMap<String, f64>,
    pub provenance: Provenance,
}

impl SelectionScore {
    fn new(method: Method, scores: HashMap<String, f64>, provenance: Provenance) -> Result<Self> {
        if scores.values().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("selection scores"));
        }
        Ok(Self { method, scores, provenance })
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let mut rows: Vec<(&String, &f64)> = self.scores.iter().collect();
        rows.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
        writeln!(w, "term,score")?;
        for (t, s) in rows {
            writeln!(w, "{},{s}", csv_field(t))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl BufRead, method: Method) -> Result<Self> {
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "term,score" => {}
            _ => return Err(Error::format("score csv", "missing header term,score")),
        }
        let mut scores = HashMap::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (t, s) = split_last_field(&line).ok_or_else(|| Error::format("score csv", format!("line {}", n + 2)))?;
            let s: f64 = s.parse().map_err(|_| Error::format("score csv", format!("line {}", n + 2)))?;
            scores.insert(t, s);
        }
        Self::new(method, scores, Provenance::default())
    }
}

pub fn score_frequency(source: &Vocabulary, base: &BTreeSet<String>) -> Result<SelectionScore> {
    let scores = base.iter().map(|t| (t.clone(), source.freq_of(t) as f64)).collect();
    SelectionScore::new(
        Method::Frequency,
        scores,
        Provenance {
            source_counts: true,
            ..Default::default()
        },
    )
}

pub fn score_random(base: &BTreeSet<String>, seed_value: u64) -> Result<SelectionScore> {
    let s = seed::derive(seed_value, "random-selection");
    let scores = base.iter().map(|t| (t.clone(), seed::unit_hash(s, t))).collect();
    SelectionScore::new(
        Method::Random,
        scores,
        Provenance {
            seed: Some(seed_value),
            ..Default::default()
        },
    )
}

/// Count-based chi-squared per column:
///
/// ```text
/// chi2(f) = Σ_c (O_cf - E_cf)² / E_cf,   E_cf = (rows in c / rows) · Σ_c O_cf
/// ```
///
/// with `O_cf` the summed counts of `f` over rows of class `c`.
pub fn chi2_scores(dtm: &DocumentTermMatrix) -> Result<Vec<f64>> {
    let labels = dtm.labels().ok_or(Error::MissingPrerequisite {
        method: "chi2",
        what: "a labelled source matrix",
    })?;
    let n = labels.len();
    if n == 0 {
        return Err(Error::Insufficient("chi2 needs at least one row".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let share = [n_pos as f64 / n as f64, (n - n_pos) as f64 / n as f64];
    let mut obs = vec![[0f64; 2]; dtm.n_cols()];
    for (i, &l) in labels.iter().enumerate() {
        let c = usize::from(!l);
        let (idx, cnt) = dtm.row(i);
        for (&j, &k) in idx.iter().zip(cnt) {
            obs[j as usize][c] += k as f64;
        }
    }
    Ok(obs
        .iter()
        .map(|o| {
            let total = o[0] + o[1];
            (0..2)
                .filter(|&c| share[c] > 0.0 && total > 0.0)
                .map(|c| {
                    let e = share[c] * total;
                    (o[c] - e).powi(2) / e
                })
                .sum()
        })
        .collect())
}

pub fn score_chi2(dtm: Option<&DocumentTermMatrix>, base: &BTreeSet<String>) -> Result<SelectionScore> {
    let dtm = dtm.ok_or(Error::MissingPrerequisite {
        method: "chi2",
        what: "a labelled source matrix",
    })?;
    let chi = chi2_scores(dtm)?;
    let vocab = dtm.vocab();
    let scores = base.iter().map(|t| (t.clone(), vocab.get(t).map_or(0.0, |j| chi[j]))).collect();
    SelectionScore::new(
        Method::ChiSquared,
        scores,
        Provenance {
            labels: true,
            ..Default::default()
        },
    )
}

pub fn score_coefficient(model: Option<&ClassifierModel>, base: &BTreeSet<String>) -> Result<SelectionScore> {
    let model = model.ok_or(Error::MissingPrerequisite {
        method: "coefficient",
        what: "a model trained on the Intersection vocabulary",
    })?;
    let scores = base
        .iter()
        .filter_map(|t| model.vocab.get(t).map(|j| (t.clone(), model.weights[j].abs())))
        .collect();
    SelectionScore::new(
        Method::Coefficient,
        scores,
        Provenance {
            labels: true,
            model: true,
            ..Default::default()
        },
    )
}

pub fn score_overlap(table: Option<&StabilityTable>, base: &BTreeSet<String>) -> Result<SelectionScore> {
    let table = table.ok_or(Error::MissingPrerequisite {
        method: "overlap",
        what: "a stability table",
    })?;
    let scores = table.records.iter().filter(|r| base.contains(&r.term)).map(|r| (r.term.clone(), r.s)).collect();
    SelectionScore::new(
        Method::Overlap,
        scores,
        Provenance {
            stability: true,
            ..Default::default()
        },
    )
}

/// Ascending average ranks scaled to `[0, 1]` by `r / (n - 1)`.
pub fn rank_normalize(scores: &HashMap<String, f64>) -> HashMap<String, f64> {
    let mut items: Vec<(&String, f64)> = scores.iter().map(|(t, s)| (t, *s)).collect();
    items.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let n = items.len();
    let mut out = HashMap::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && items[j + 1].1 == items[i].1 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        let v = if n == 1 { 1.0 } else { avg / (n - 1) as f64 };
        for item in &items[i..=j] {
            out.insert(item.0.clone(), v);
        }
        i = j + 1;
    }
    out
}

pub fn score_weighted(coefficient: Option<&SelectionScore>, overlap: Option<&SelectionScore>) -> Result<SelectionScore> {
    let missing = |what| Error::MissingPrerequisite { method: "weighted", what };
    let coef = coefficient.ok_or(missing("coefficient scores"))?;
    let over = overlap.ok_or(missing("overlap scores"))?;
    let common: HashMap<String, f64> = coef
        .scores
        .iter()
        .filter(|(t, _)| over.scores.contains_key(*t))
        .map(|(t, s)| (t.clone(), *s))
        .collect();
    let common_o: HashMap<String, f64> = common.keys().map(|t| (t.clone(), over.scores[t])).collect();
    let rc = rank_normalize(&common);
    let ro = rank_normalize(&common_o);
    let scores = rc.iter().map(|(t, a)| (t.clone(), 0.5 * a + 0.5 * ro[t])).collect();
    SelectionScore::new(
        Method::Weighted,
        scores,
        Provenance {
            labels: true,
            model: true,
            stability: true,
            ..Default::default()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedVocabulary {
    pub method: Method,
    pub p: u32,
    pub terms: Vec<String>,
}

impl SelectedVocabulary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn term_set(&self) -> BTreeSet<&str> {
        self.terms.iter().map(String::as_str).collect()
    }
}

fn check_p(p: u32) -> Result<()> {
    if p == 0 || p > 100 || !p.is_multiple_of(10) {
        return Err(Error::invalid("percentile", format!("{p} is not one of 10, 20, .., 100")));
    }
    Ok(())
}

/// The top `ceil(p/100 · |base|)` base terms by (score desc, term asc).
pub fn take_top(scores: &SelectionScore, p: u32, base: &BTreeSet<String>) -> Result<SelectedVocabulary> {
    check_p(p)?;
    let mut ranked: Vec<(&String, f64)> = Vec::with_capacity(base.len());
    for t in base {
        let s = scores.scores.get(t).ok_or_else(|| Error::MissingScore(t.clone()))?;
        ranked.push((t, *s));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let n = (p as usize * base.len()).div_ceil(100);
    Ok(SelectedVocabulary {
        method: scores.method,
        p,
        terms: ranked.into_iter().take(n).map(|(t, _)| t.clone()).collect(),
    })
}

/// The fixed baselines: the same set at every p.
pub fn baseline(method: Method, set: &BTreeSet<String>, p: u32) -> Result<SelectedVocabulary> {
    check_p(p)?;
    if method.is_scored() {
        return Err(Error::invalid("baseline", format!("{method} is a scored method")));
    }
    Ok(SelectedVocabulary {
        method,
        p,
        terms: set.iter().cloned().collect(),
    })
}

/// Inputs for computing every method's selections.
pub struct SelectionInputs<'a> {
    pub source: &'a Vocabulary,
    pub target: &'a Vocabulary,
    pub floor: u64,
    pub labelled: Option<&'a DocumentTermMatrix>,
    pub model: Option<&'a ClassifierModel>,
    pub table: Option<&'a StabilityTable>,
    pub seed: u64,
}

impl SelectionInputs<'_> {
    pub fn cumulative(&self) -> BTreeSet<String> {
        select_cumulative(self.source, self.floor)
    }

    pub fn intersection(&self) -> BTreeSet<String> {
        select_intersection(self.source, self.target, self.floor)
    }

    /// Scores for a scored method over the Intersection base.
    pub fn scores(&self, method: Method, base: &BTreeSet<String>) -> Result<SelectionScore> {
        match method {
            Method::Frequency => score_frequency(self.source, base),
            Method::Random => score_random(base, self.seed),
            Method::ChiSquared => score_chi2(self.labelled, base),
            Method::Coefficient => score_coefficient(self.model, base),
            Method::Overlap => score_overlap(self.table, base),
            Method::Weighted => {
                let c = score_coefficient(self.model, base)?;
                let o = score_overlap(self.table, base)?;
                score_weighted(Some(&c), Some(&o))
            }
            Method::Cumulative | Method::Intersection => Err(Error::invalid("scores", format!("{method} is not scored"))),
        }
    }

    /// Selections for `method` at each percentile.
    pub fn sweep(&self, method: Method, percentiles: &[u32]) -> Result<Vec<SelectedVocabulary>> {
        match method {
            Method::Cumulative => {
                let set = self.cumulative();
                percentiles.iter().map(|&p| baseline(method, &set, p)).collect()
            }
            Method::Intersection => {
                let set = self.intersection();
                percentiles.iter().map(|&p| baseline(method, &set, p)).collect()
            }
            _ => {
                let base = self.intersection();
                let scores = self.scores(method, &base)?;
                percentiles.iter().map(|&p| take_top(&scores, p, &base)).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DocumentRow;
    use std::sync::Arc;

    fn vocab(entries: &[(&str, u64)]) -> Vocabulary {
        Vocabulary::from_counts(entries.iter().map(|(t, c)| (t.to_string(), *c)), 0, usize::MAX)
    }

    fn set(terms: &[&str]) -> BTreeSet<String> {
        terms.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn cumulative_is_strict() {
        let v = vocab(&[("a", 51), ("b", 50), ("c", 10), ("d", 60), ("e", 500)]);
        assert_eq!(select_cumulative(&v, 50), set(&["a", "d", "e"]));
        assert!(select_cumulative(&vocab(&[]), 50).is_empty());
    }

    #[test]
    fn intersection_needs_both() {
        let s = vocab(&[("a", 60), ("b", 60)]);
        let t = vocab(&[("a", 40), ("b", 60)]);
        assert_eq!(select_intersection(&s, &t, 50), set(&["b"]));
    }

    fn labelled(rows: &[(&[&str], bool)]) -> DocumentTermMatrix {
        let v = Arc::new(Vocabulary::from_ordered(["x", "y"].map(|t| (t.to_string(), 1))).unwrap());
        DocumentTermMatrix::from_rows(
            rows.iter()
                .enumerate()
                .map(|(i, (t, l))| DocumentRow::new(format!("u{i}"), t.iter().copied(), Some(*l), 1)),
            v,
        )
    }

    #[test]
    fn chi2_hand_values() {
        // x: 6 counts all in class 1; y: 2 counts per class
        let m = labelled(&[(&["x", "x", "x", "y", "y"], true), (&["x", "x", "x"], true), (&["y", "y"], false), (&[], false)]);
        let chi = chi2_scores(&m).unwrap();
        assert!((chi[0] - 6.0).abs() < 1e-12);
        assert_eq!(chi[1], 0.0);
    }

    #[test]
    fn weighted_top_is_one() {
        let c = SelectionScore::new(
            Method::Coefficient,
            [("a", 3.0), ("b", 1.0), ("c", 2.0)].map(|(t, s)| (t.to_string(), s)).into(),
            Provenance::default(),
        )
        .unwrap();
        let o = SelectionScore::new(
            Method::Overlap,
            [("a", 0.9), ("b", 0.5), ("c", 0.1)].map(|(t, s)| (t.to_string(), s)).into(),
            Provenance::default(),
        )
        .unwrap();
        let w = score_weighted(Some(&c), Some(&o)).unwrap();
        assert_eq!(w.scores["a"], 1.0);
        assert_eq!(w.scores["b"], 0.25);
    }

    #[test]
    fn rank_ties_average() {
        let r = rank_normalize(&[("a", 1.0), ("b", 1.0), ("c", 2.0)].map(|(t, s)| (t.to_string(), s)).into());
        assert_eq!(r["a"], 0.25);
        assert_eq!(r["c"], 1.0);
    }

    #[test]
    fn take_top_examples() {
        let base: BTreeSet<String> = (0..10).map(|i| format!("t{i}")).collect();
        let scores = SelectionScore::new(
            Method::Frequency,
            base.iter().enumerate().map(|(i, t)| (t.clone(), i as f64)).collect(),
            Provenance::default(),
        )
        .unwrap();
        assert_eq!(take_top(&scores, 10, &base).unwrap().terms, ["t9"]);
        let all: BTreeSet<String> = take_top(&scores, 100, &base).unwrap().terms.into_iter().collect();
        assert_eq!(all, base);
        let mut partial = scores.clone();
        partial.scores.remove("t3");
        assert!(matches!(take_top(&partial, 50, &base), Err(Error::MissingScore(_))));
        assert!(take_top(&scores, 15, &base).is_err());
    }

    #[test]
    fn missing_prerequisites_name_method() {
        let base = set(&["a"]);
        assert!(matches!(score_overlap(None, &base), Err(Error::MissingPrerequisite { method: "overlap", .. })));
        assert!(matches!(
            score_coefficient(None, &base),
            Err(Error::MissingPrerequisite { method: "coefficient", .. })
        ));
        assert!(matches!(score_chi2(None, &base), Err(Error::MissingPrerequisite { method: "chi2", .. })));
    }

    #[test]
    fn random_reproducible_and_seed_sensitive() {
        let base: BTreeSet<String> = (0..200).map(|i| format!("t{i}")).collect();
        let a = take_top(&score_random(&base, 1).unwrap(), 50, &base).unwrap();
        let b = take_top(&score_random(&base, 1).unwrap(), 50, &base).unwrap();
        let c = take_top(&score_random(&base, 2).unwrap(), 50, &base).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scores_csv_round_trip() {
        let base = set(&["a,b", "c"]);
        let s = score_random(&base, 4).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(SelectionScore::read_csv(&buf[..], Method::Random).unwrap().scores, s.scores);
    }
}
