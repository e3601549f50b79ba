use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentTermMatrix, Vocabulary};

pub const IDF_FORMULA: &str = "ln((1+N)/(1+df))+1";

/// Row-major sparse real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn select_rows(&self, rows: &[usize]) -> CsrMatrix {
        let mut m = CsrMatrix {
            n_cols: self.n_cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for &r in rows {
            let (idx, val) = self.row(r);
            m.indices.extend_from_slice(idx);
            m.values.extend_from_slice(val);
            m.indptr.push(m.indices.len());
        }
        m
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> CsrMatrix {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut m = CsrMatrix {
            n_cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for r in rows {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    m.indices.push(j as u32);
                    m.values.push(v);
                }
            }
            m.indptr.push(m.indices.len());
        }
        m
    }

    pub fn dot_row(&self, i: usize, w: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&j, &v)| v * w[j as usize]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfTransform {
    #[serde(skip)]
    vocab: Option<Arc<Vocabulary>>,
    pub idf: Vec<f64>,
    pub n_docs: usize,
}

pub fn fit_tfidf(dtm: &DocumentTermMatrix) -> TfidfTransform {
    let n = dtm.n_rows() as f64;
    let idf = dtm.doc_freq().iter().map(|&df| ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0).collect();
    TfidfTransform {
        vocab: Some(Arc::clone(dtm.vocab())),
        idf,
        n_docs: dtm.n_rows(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub x: CsrMatrix,
    /// Rows with no in-vocabulary counts; they stay all-zero.
    pub zero_rows: Vec<usize>,
}

impl TfidfTransform {
    pub fn from_idf(vocab: Arc<Vocabulary>, idf: Vec<f64>, n_docs: usize) -> Self {
        Self {
            vocab: Some(vocab),
            idf,
            n_docs,
        }
    }

    pub fn vocab(&self) -> Option<&Arc<Vocabulary>> {
        self.vocab.as_ref()
    }

    /// Columns are matched by term; counts outside the transform vocabulary
    /// are ignored.
    pub fn transform(&self, dtm: &DocumentTermMatrix) -> Transformed {
        let projected;
        let dtm = match &self.vocab {
            Some(v) if !Arc::ptr_eq(v, dtm.vocab()) && v.terms() != dtm.vocab().terms() => {
                projected = dtm.project(Arc::clone(v));
                &projected
            }
            _ => dtm,
        };
        let mut x = CsrMatrix {
            n_cols: self.idf.len(),
            indptr: vec![0],
            indices: Vec::with_capacity(dtm.nnz()),
            values: Vec::with_capacity(dtm.nnz()),
        };
        let mut zero_rows = Vec::new();
        for i in 0..dtm.n_rows() {
            let (idx, cnt) = dtm.row(i);
            let start = x.values.len();
            for (&j, &c) in idx.iter().zip(cnt) {
                x.indices.push(j);
                x.values.push(c as f64 * self.idf[j as usize]);
            }
            let norm = x.values[start..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                x.values[start..].iter_mut().for_each(|v| *v /= norm);
            } else {
                zero_rows.push(i);
            }
            x.indptr.push(x.values.len());
        }
        if !zero_rows.is_empty() {
            log::debug!("{} rows have no in-vocabulary terms", zero_rows.len());
        }
        Transformed { x, zero_rows }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DocumentRow;

    fn dtm(rows: &[&[&str]], terms: &[&str]) -> DocumentTermMatrix {
        let vocab = Arc::new(Vocabulary::from_ordered(terms.iter().map(|t| (t.to_string(), 1))).unwrap());
        DocumentTermMatrix::from_rows(
            rows.iter()
                .enumerate()
                .map(|(i, r)| DocumentRow::new(format!("u{i}"), r.iter().copied(), None, 1)),
            vocab,
        )
    }

    #[test]
    fn idf_values() {
        let m = dtm(&[&["a", "b"], &["a"], &["a"]], &["a", "b", "c"]);
        let t = fit_tfidf(&m);
        assert_eq!(t.idf[0], 1.0);
        assert!((t.idf[1] - (2f64.ln() + 1.0)).abs() < 1e-15);
        assert!((t.idf[1] - 1.6931).abs() < 1e-4);
        assert!((t.idf[2] - 2.3863).abs() < 1e-4);
    }

    #[test]
    fn three_four_five() {
        let m = dtm(&[&["a", "a", "a", "b", "b", "b", "b"]], &["a", "b"]);
        let t = TfidfTransform::from_idf(Arc::clone(m.vocab()), vec![1.0, 1.0], 1);
        let out = t.transform(&m);
        let (_, v) = out.x.row(0);
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn unit_rows_and_zero_rows() {
        let m = dtm(&[&["a", "b", "b"], &["c"], &["zz"], &["b"]], &["a", "b", "c"]);
        let t = fit_tfidf(&m);
        let out = t.transform(&m);
        assert_eq!(out.zero_rows, [2]);
        for i in [0, 1, 3] {
            let n: f64 = out.x.row(i).1.iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-12);
        }
        assert_eq!(out.x.row(3).1, [1.0]);
    }

    #[test]
    fn scaling_counts_leaves_row_unchanged() {
        let m1 = dtm(&[&["a", "b", "b"], &["c"]], &["a", "b", "c"]);
        let m2 = dtm(&[&["a", "a", "b", "b", "b", "b"], &["c"]], &["a", "b", "c"]);
        let t = fit_tfidf(&m1);
        let (a, b) = (t.transform(&m1), t.transform(&m2));
        for (x, y) in a.x.values.iter().zip(&b.x.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
