//! Prevalence estimates, their change between periods, and keyword time series.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::csv_field;
use crate::corpus::{apply_phrases, tokenize, DocumentTermMatrix, PhraseModel, PostStore};
use crate::model::ClassifierModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceEstimate {
    pub period: String,
    pub eligible: usize,
    /// Users with predicted probability strictly above 0.5.
    pub positive: usize,
    pub prevalence: f64,
}

pub fn prevalence_from_probs(period: &str, probs: &[f64]) -> Result<PrevalenceEstimate> {
    if probs.is_empty() {
        return Err(Error::Insufficient(format!("no eligible users in period `{period}`")));
    }
    let positive = probs.iter().filter(|&&p| p > 0.5).count();
    Ok(PrevalenceEstimate {
        period: period.into(),
        eligible: probs.len(),
        positive,
        prevalence: positive as f64 / probs.len() as f64,
    })
}

/// Scores the rows of `dtm` with at least `min_posts` posts (all rows when the
/// matrix carries no post counts).
pub fn estimate_prevalence(model: &ClassifierModel, dtm: &DocumentTermMatrix, min_posts: u32, period: &str) -> Result<PrevalenceEstimate> {
    let mut seen = HashSet::with_capacity(dtm.n_rows());
    if let Some(dup) = dtm.row_ids().iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::invalid("prevalence input", format!("user `{dup}` appears twice")));
    }
    let rows: Vec<usize> = match dtm.post_counts() {
        Some(pc) => (0..dtm.n_rows()).filter(|&i| pc[i] >= min_posts).collect(),
        None => (0..dtm.n_rows()).collect(),
    };
    let probs = model.predict_proba(&dtm.select_rows(&rows));
    prevalence_from_probs(period, &probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceChange {
    pub pre: f64,
    pub during: f64,
    /// `during - pre`, as a proportion (0.05 = 5 percentage points).
    pub absolute: f64,
    /// `(during - pre) / pre`; `None` when `pre` is zero.
    pub relative: Option<f64>,
}

pub fn prevalence_change(pre: &PrevalenceEstimate, during: &PrevalenceEstimate) -> PrevalenceChange {
    let absolute = during.prevalence - pre.prevalence;
    let relative = if pre.prevalence > 0.0 { Some(absolute / pre.prevalence) } else { None };
    if relative.is_none() {
        log::warn!("pre-period prevalence is zero; relative change is undefined");
    }
    PrevalenceChange {
        pre: pre.prevalence,
        during: during.prevalence,
        absolute,
        relative,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSeries {
    pub term: String,
    /// Contiguous `YYYY-MM` buckets.
    pub buckets: Vec<String>,
    /// Fraction of posts containing the term; `None` for buckets with no posts.
    pub proportions: Vec<Option<f64>>,
}

fn month_index(ts: i64) -> Result<i64> {
    let dt = DateTime::from_timestamp(ts, 0).ok_or_else(|| Error::invalid("timestamp", ts.to_string()))?;
    Ok(dt.year() as i64 * 12 + dt.month0() as i64)
}

fn month_label(idx: i64) -> String {
    format!("{:04}-{:02}", idx.div_euclid(12), idx.rem_euclid(12) + 1)
}

/// Monthly share of posts whose token stream contains each term.
pub fn keyword_series(store: &PostStore, terms: &[String], phrases: Option<&PhraseModel>) -> Result<Vec<KeywordSeries>> {
    let mut per_month: BTreeMap<i64, (usize, Vec<usize>)> = BTreeMap::new();
    for post in store.iter_posts() {
        let m = month_index(post.timestamp)?;
        let mut tokens = tokenize(&post.text);
        if let Some(model) = phrases {
            tokens = apply_phrases(&tokens, model);
        }
        let present: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        let entry = per_month.entry(m).or_insert_with(|| (0, vec![0; terms.len()]));
        entry.0 += 1;
        for (k, t) in terms.iter().enumerate() {
            if present.contains(t.as_str()) {
                entry.1[k] += 1;
            }
        }
    }
    let (Some(&first), Some(&last)) = (per_month.keys().next(), per_month.keys().next_back()) else {
        return Ok(terms
            .iter()
            .map(|t| KeywordSeries {
                term: t.clone(),
                buckets: Vec::new(),
                proportions: Vec::new(),
            })
            .collect());
    };
    let buckets: Vec<String> = (first..=last).map(month_label).collect();
    Ok(terms
        .iter()
        .enumerate()
        .map(|(k, t)| KeywordSeries {
            term: t.clone(),
            buckets: buckets.clone(),
            proportions: (first..=last).map(|m| per_month.get(&m).map(|(n, hits)| hits[k] as f64 / *n as f64)).collect(),
        })
        .collect())
}

/// `term,bucket,proportion` with an empty proportion for empty buckets.
pub fn write_keyword_csv(series: &[KeywordSeries], mut w: impl Write) -> Result<()> {
    writeln!(w, "term,bucket,proportion")?;
    for s in series {
        for (b, p) in s.buckets.iter().zip(&s.proportions) {
            match p {
                Some(p) => writeln!(w, "{},{b},{p}", csv_field(&s.term))?,
                None => writeln!(w, "{},{b},", csv_field(&s.term))?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `ln(P(t | positive) / P(t))` per column of a labelled matrix, with add-one
/// smoothing on term counts.
pub fn pmi_class(dtm: &DocumentTermMatrix) -> Result<Vec<f64>> {
    let labels = dtm.labels().ok_or_else(|| Error::invalid("pmi input", "matrix is unlabelled"))?;
    let v = dtm.n_cols() as f64;
    let mut pos = vec![0f64; dtm.n_cols()];
    let mut all = vec![0f64; dtm.n_cols()];
    for (i, &l) in labels.iter().enumerate() {
        let (idx, cnt) = dtm.row(i);
        for (&j, &c) in idx.iter().zip(cnt) {
            all[j as usize] += c as f64;
            if l {
                pos[j as usize] += c as f64;
            }
        }
    }
    let pos_total: f64 = pos.iter().sum();
    let total: f64 = all.iter().sum();
    Ok(pos
        .iter()
        .zip(&all)
        .map(|(&p, &a)| (((p + 1.0) / (pos_total + v)) / ((a + 1.0) / (total + v))).ln())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DocumentRow, Post, Vocabulary};
    use crate::model::{fit_tfidf, LogRegFit, TrainingMeta};
    use std::sync::Arc;

    #[test]
    fn prevalence_counting_and_strict_rule() {
        let mut probs = vec![0.1; 7];
        probs.extend([0.9, 0.6, 0.51]);
        assert_eq!(prevalence_from_probs("A", &probs).unwrap().prevalence, 0.3);
        assert_eq!(prevalence_from_probs("A", &[0.5, 0.5]).unwrap().positive, 0);
        assert!(prevalence_from_probs("A", &[]).is_err());
    }

    #[test]
    fn monotone_transform_fixing_half_keeps_prevalence() {
        let probs = [0.1, 0.7, 0.5, 0.55, 0.93];
        let t: Vec<f64> = probs.iter().map(|p: &f64| 0.5 + (p - 0.5).powi(3)).collect();
        assert_eq!(prevalence_from_probs("A", &probs).unwrap(), prevalence_from_probs("A", &t).unwrap());
    }

    fn est(p: f64) -> PrevalenceEstimate {
        PrevalenceEstimate {
            period: "x".into(),
            eligible: 100,
            positive: (p * 100.0) as usize,
            prevalence: p,
        }
    }

    #[test]
    fn change_examples() {
        let c = prevalence_change(&est(0.20), &est(0.25));
        assert!((c.absolute - 0.05).abs() < 1e-12);
        assert!((c.relative.unwrap() - 0.25).abs() < 1e-12);
        let z = prevalence_change(&est(0.2), &est(0.2));
        assert_eq!((z.absolute, z.relative), (0.0, Some(0.0)));
        let u = prevalence_change(&est(0.0), &est(0.1));
        assert!((u.absolute - 0.1).abs() < 1e-12 && u.relative.is_none());
    }

    fn zero_model(vocab: Arc<Vocabulary>, dtm: &DocumentTermMatrix) -> ClassifierModel {
        let fit = LogRegFit {
            weights: vec![0.0; vocab.len()],
            bias: 0.0,
            objective: 0.0,
            grad_norm: 0.0,
            iterations: 0,
            converged: true,
        };
        ClassifierModel {
            tfidf: fit_tfidf(dtm),
            vocab,
            weights: fit.weights,
            bias: fit.bias,
            c: 1.0,
            meta: TrainingMeta {
                idf_formula: String::new(),
                folds: 0,
                c_grid: vec![],
                cv_mean_f1: vec![],
                n_train: 0,
                zero_rows: 0,
                iterations: 0,
                converged: true,
                objective: 0.0,
                method: None,
                percentile: None,
            },
        }
    }

    #[test]
    fn zero_weight_model_gives_zero_prevalence() {
        let vocab = Arc::new(Vocabulary::from_ordered([("a".to_string(), 1)]).unwrap());
        let dtm = DocumentTermMatrix::from_rows(
            (0..5).map(|i| DocumentRow::new(format!("u{i}"), ["a"].into_iter(), None, 300)),
            Arc::clone(&vocab),
        );
        let m = zero_model(vocab, &dtm);
        let e = estimate_prevalence(&m, &dtm, 200, "pre").unwrap();
        assert_eq!((e.eligible, e.positive, e.prevalence), (5, 0, 0.0));
        assert!(estimate_prevalence(&m, &dtm, 400, "pre").is_err());
    }

    fn post(ts: i64, text: &str) -> Post {
        Post {
            user_id: "u".into(),
            timestamp: ts,
            text: text.into(),
            label: None,
            metadata: Default::default(),
        }
    }

    #[test]
    fn keyword_series_buckets() {
        let jan = 1_577_836_800; // 2020-01-01
        let mar = 1_583_020_800; // 2020-03-01
        let store = PostStore::from_posts(vec![
            post(jan, "sad day"),
            post(jan + 10, "fine"),
            post(jan + 20, "so sad"),
            post(jan + 30, "ok"),
            post(mar, "sad sad"),
        ]);
        let s = keyword_series(&store, &["sad".into(), "zzz".into()], None).unwrap();
        assert_eq!(s[0].buckets, ["2020-01", "2020-02", "2020-03"]);
        assert_eq!(s[0].proportions, [Some(0.5), None, Some(1.0)]);
        assert_eq!(s[1].proportions, [Some(0.0), None, Some(0.0)]);
        let mut buf = Vec::new();
        write_keyword_csv(&s, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("sad,2020-02,\n"));
    }

    #[test]
    fn pmi_favours_positive_terms() {
        let vocab = Arc::new(Vocabulary::from_ordered(["sad", "the"].map(|t| (t.to_string(), 1))).unwrap());
        let rows = [(vec!["sad", "sad", "the"], true), (vec!["the"], false)];
        let dtm = DocumentTermMatrix::from_rows(
            rows.iter()
                .enumerate()
                .map(|(i, (t, l))| DocumentRow::new(format!("u{i}"), t.iter().copied(), Some(*l), 1)),
            vocab,
        );
        let pmi = pmi_class(&dtm).unwrap();
        // P(sad|pos) = 3/5, P(sad) = 3/6
        assert!((pmi[0] - (0.6f64 / 0.5).ln()).abs() < 1e-12);
        assert!(pmi[0] > pmi[1]);
    }
}
