//! TF-IDF features and L2-regularised logistic regression with a
//! cross-validated C.
//!
//! Model file layout (little-endian):
//!
//! ```text
//! magic  b"SEMSHMDL"
//! u32    version (1)
//! u64    header length, then that many bytes of JSON (vocabulary, C, metadata)
//! f64    weights[n], bias, idf[n]
//! ```

mod cv;
mod lbfgs;
mod logreg;
mod metrics;
mod tfidf;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cv::{effective_folds, fold_scores, select_c_cv, stratified_folds, CvConfig, CvReport, DEFAULT_C_GRID};
pub use lbfgs::{minimize, LbfgsOptions, LbfgsResult};
pub use logreg::{objective, predict_proba, sigmoid, signed, train_logreg, LogRegFit};
pub use metrics::{f1_score, threshold, F1Score};
pub use tfidf::{fit_tfidf, CsrMatrix, TfidfTransform, Transformed, IDF_FORMULA};

use crate::corpus::{tokenize, DocumentRow, DocumentTermMatrix, Vocabulary};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"SEMSHMDL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub cv: CvConfig,
    /// Skip cross-validation and train with this C.
    pub fixed_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub idf_formula: String,
    pub folds: usize,
    pub c_grid: Vec<f64>,
    pub cv_mean_f1: Vec<f64>,
    pub n_train: usize,
    pub zero_rows: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub percentile: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub vocab: Arc<Vocabulary>,
    pub tfidf: TfidfTransform,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub meta: TrainingMeta,
}

/// Projects `dtm` onto `vocab`, fits TF-IDF, picks C by cross-validation
/// (unless fixed) and refits on all rows.
pub fn train_classifier(dtm: &DocumentTermMatrix, vocab: Arc<Vocabulary>, cfg: &ClassifierConfig) -> Result<ClassifierModel> {
    let labels = dtm.labels().ok_or_else(|| Error::invalid("training matrix", "rows are unlabelled"))?.to_vec();
    if vocab.is_empty() {
        return Err(Error::invalid("classifier vocabulary", "empty"));
    }
    let projected = dtm.project(Arc::clone(&vocab));
    let tfidf = fit_tfidf(&projected);
    let Transformed { x, zero_rows } = tfidf.transform(&projected);
    let (c, report) = match cfg.fixed_c {
        Some(c) => (c, None),
        None => {
            let r = select_c_cv(&x, &labels, &cfg.cv)?;
            (r.chosen_c, Some(r))
        }
    };
    let fit = train_logreg(&x, &labels, c, &cfg.cv.lbfgs, None)?;
    Ok(ClassifierModel {
        vocab,
        tfidf,
        weights: fit.weights,
        bias: fit.bias,
        c,
        meta: TrainingMeta {
            idf_formula: IDF_FORMULA.into(),
            folds: report.as_ref().map_or(0, |r| r.folds_used),
            c_grid: report.as_ref().map_or_else(|| vec![c], |r| r.grid.clone()),
            cv_mean_f1: report.map_or_else(Vec::new, |r| r.mean_f1),
            n_train: x.n_rows(),
            zero_rows: zero_rows.len(),
            iterations: fit.iterations,
            converged: fit.converged,
            objective: fit.objective,
            method: None,
            percentile: None,
        },
    })
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    terms: Vec<(String, u64)>,
    c: f64,
    n_docs: usize,
    meta: TrainingMeta,
}

impl ClassifierModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_proba(&self, dtm: &DocumentTermMatrix) -> Vec<f64> {
        let t = self.tfidf.transform(dtm);
        predict_proba(&t.x, &self.weights, self.bias)
    }

    pub fn predict_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let dtm = DocumentTermMatrix::from_rows(
            std::iter::once(DocumentRow::new("doc", tokens.iter().map(AsRef::as_ref), None, 1)),
            Arc::clone(&self.vocab),
        );
        self.predict_proba(&dtm)[0]
    }

    /// Tokenizes raw text (without phrase merging) and scores it.
    pub fn predict_text(&self, text: &str) -> f64 {
        self.predict_tokens(&tokenize(text))
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&ModelHeader {
            terms: self.vocab.iter().map(|(t, f)| (t.to_string(), f)).collect(),
            c: self.c,
            n_docs: self.tfidf.n_docs,
            meta: self.meta.clone(),
        })?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity((2 * self.weights.len() + 1) * 8);
        for v in self.weights.iter().chain(std::iter::once(&self.bias)).chain(&self.tfidf.idf) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let bad = |d: &str| Error::format("model file", d);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
        let version = u32::from_le_bytes(b4);
        if version != MODEL_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        let header: ModelHeader = serde_json::from_slice(&header)?;
        let n = header.terms.len();
        let mut raw = vec![0u8; (2 * n + 1) * 8];
        r.read_exact(&mut raw).map_err(|_| bad("truncated weights"))?;
        let vals: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        let vocab = Arc::new(Vocabulary::from_ordered(header.terms)?);
        Ok(Self {
            tfidf: TfidfTransform::from_idf(Arc::clone(&vocab), vals[n + 1..].to_vec(), header.n_docs),
            weights: vals[..n].to_vec(),
            bias: vals[n],
            vocab,
            c: header.c,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled() -> DocumentTermMatrix {
        let vocab = Arc::new(Vocabulary::from_ordered(["sad", "happy", "the", "extra"].map(|t| (t.to_string(), 10))).unwrap());
        let rows: Vec<(String, Vec<&str>, bool)> = (0..40)
            .map(|i| {
                let pos = i % 2 == 0;
                let mut toks = vec!["the"; 3];
                toks.push(if pos { "sad" } else { "happy" });
                if i % 5 == 0 {
                    toks.push("extra");
                }
                (format!("u{i}"), toks, pos)
            })
            .collect();
        DocumentTermMatrix::from_rows(
            rows.iter().map(|(id, t, l)| DocumentRow::new(id.clone(), t.iter().copied(), Some(*l), 1)),
            vocab,
        )
    }

    #[test]
    fn trains_and_round_trips() {
        let dtm = labelled();
        let vocab = Arc::new(Vocabulary::from_ordered(["sad", "happy", "the"].map(|t| (t.to_string(), 10))).unwrap());
        let m = train_classifier(&dtm, vocab, &ClassifierConfig::default()).unwrap();
        assert_eq!(m.n_features(), 3);
        assert!(m.predict_text("so SAD") > 0.5);
        assert!(m.predict_text("happy") < 0.5);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let back = ClassifierModel::read(&buf[..]).unwrap();
        assert_eq!(back.weights, m.weights);
        assert_eq!(back.predict_proba(&dtm), m.predict_proba(&dtm));
    }

    #[test]
    fn out_of_vocabulary_counts_change_nothing() {
        let dtm = labelled();
        let vocab = Arc::new(Vocabulary::from_ordered(["sad", "happy", "the"].map(|t| (t.to_string(), 10))).unwrap());
        let m = train_classifier(
            &dtm,
            Arc::clone(&vocab),
            &ClassifierConfig {
                fixed_c: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.predict_proba(&dtm), m.predict_proba(&dtm.project(vocab)));
    }
}
