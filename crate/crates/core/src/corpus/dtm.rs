use std::io::{BufRead, Write};
use std::sync::Arc;

use super::Vocabulary;
use crate::{Error, Result};

/// Sparse user-by-term count matrix in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentTermMatrix {
    rows: Vec<String>,
    vocab: Arc<Vocabulary>,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    counts: Vec<u32>,
    labels: Option<Vec<bool>>,
    post_counts: Option<Vec<u32>>,
}

/// One aggregated document: a user's concatenated token stream.
pub struct DocumentRow<I> {
    pub id: String,
    pub tokens: I,
    pub label: Option<bool>,
    pub posts: u32,
}

impl<I> DocumentRow<I> {
    pub fn new(id: impl Into<String>, tokens: I, label: Option<bool>, posts: u32) -> Self {
        Self {
            id: id.into(),
            tokens,
            label,
            posts,
        }
    }
}

impl DocumentTermMatrix {
    /// Counts in-vocabulary tokens per row; out-of-vocabulary tokens are ignored.
    /// Labels are kept only when every row carries one.
    pub fn from_rows<'a, I, T>(rows: impl IntoIterator<Item = DocumentRow<I>>, vocab: Arc<Vocabulary>) -> Self
    where
        I: IntoIterator<Item = &'a T>,
        T: AsRef<str> + 'a + ?Sized,
    {
        let mut m = DocumentTermMatrix {
            rows: Vec::new(),
            vocab,
            indptr: vec![0],
            indices: Vec::new(),
            counts: Vec::new(),
            labels: Some(Vec::new()),
            post_counts: Some(Vec::new()),
        };
        let mut scratch: Vec<(u32, u32)> = Vec::new();
        let mut dense: Vec<u32> = vec![0; m.vocab.len()];
        for row in rows {
            scratch.clear();
            for t in row.tokens {
                if let Some(j) = m.vocab.get(t.as_ref()) {
                    if dense[j] == 0 {
                        scratch.push((j as u32, 0));
                    }
                    dense[j] += 1;
                }
            }
            scratch.sort_unstable_by_key(|e| e.0);
            for (j, _) in &scratch {
                m.indices.push(*j);
                m.counts.push(dense[*j as usize]);
                dense[*j as usize] = 0;
            }
            m.indptr.push(m.indices.len());
            m.rows.push(row.id);
            match (&mut m.labels, row.label) {
                (Some(ls), Some(l)) => ls.push(l),
                (labels, None) => *labels = None,
                _ => {}
            }
            if let Some(pc) = &mut m.post_counts {
                pc.push(row.posts);
            }
        }
        m
    }

    /// Builds a matrix from explicit `(row, col, count)` triplets.
    pub fn from_triplets(rows: Vec<String>, vocab: Arc<Vocabulary>, triplets: &[(usize, usize, u32)], labels: Option<Vec<bool>>) -> Result<Self> {
        if let Some(ls) = &labels {
            if ls.len() != rows.len() {
                return Err(Error::invalid("document-term matrix", "labels must align with rows"));
            }
        }
        let mut per_row: Vec<Vec<(u32, u32)>> = vec![Vec::new(); rows.len()];
        for &(r, c, n) in triplets {
            if r >= rows.len() || c >= vocab.len() {
                return Err(Error::invalid("document-term matrix", format!("triplet ({r},{c}) out of bounds")));
            }
            if n > 0 {
                per_row[r].push((c as u32, n));
            }
        }
        let mut m = DocumentTermMatrix {
            rows,
            vocab,
            indptr: vec![0],
            indices: Vec::new(),
            counts: Vec::new(),
            labels,
            post_counts: None,
        };
        for mut entries in per_row {
            entries.sort_unstable_by_key(|e| e.0);
            let mut last: Option<u32> = None;
            for (c, n) in entries {
                if last == Some(c) {
                    *m.counts.last_mut().expect("previous entry") += n;
                } else {
                    m.indices.push(c);
                    m.counts.push(n);
                    last = Some(c);
                }
            }
            m.indptr.push(m.indices.len());
        }
        Ok(m)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.vocab.len()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn row_ids(&self) -> &[String] {
        &self.rows
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn post_counts(&self) -> Option<&[u32]> {
        self.post_counts.as_deref()
    }

    pub fn set_labels(&mut self, labels: Vec<bool>) -> Result<()> {
        if labels.len() != self.rows.len() {
            return Err(Error::invalid("document-term matrix", "labels must align with rows"));
        }
        self.labels = Some(labels);
        Ok(())
    }

    /// Column indices and counts of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[u32]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.counts[a..b])
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.row(i).1.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.n_cols()];
        for (j, c) in self.indices.iter().zip(&self.counts) {
            out[*j as usize] += u64::from(*c);
        }
        out
    }

    /// Number of rows with a nonzero count per column.
    pub fn doc_freq(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.n_cols()];
        for j in &self.indices {
            out[*j as usize] += 1;
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> DocumentTermMatrix {
        let mut m = DocumentTermMatrix {
            rows: Vec::with_capacity(rows.len()),
            vocab: Arc::clone(&self.vocab),
            indptr: vec![0],
            indices: Vec::new(),
            counts: Vec::new(),
            labels: self.labels.as_ref().map(|_| Vec::with_capacity(rows.len())),
            post_counts: self.post_counts.as_ref().map(|_| Vec::with_capacity(rows.len())),
        };
        for &r in rows {
            let (idx, cnt) = self.row(r);
            m.indices.extend_from_slice(idx);
            m.counts.extend_from_slice(cnt);
            m.indptr.push(m.indices.len());
            m.rows.push(self.rows[r].clone());
            if let (Some(dst), Some(src)) = (&mut m.labels, &self.labels) {
                dst.push(src[r]);
            }
            if let (Some(dst), Some(src)) = (&mut m.post_counts, &self.post_counts) {
                dst.push(src[r]);
            }
        }
        m
    }

    /// Re-expresses the matrix over another vocabulary, matching columns by
    /// term. Terms absent from `target` are dropped.
    pub fn project(&self, target: Arc<Vocabulary>) -> DocumentTermMatrix {
        let map: Vec<Option<u32>> = self.vocab.terms().iter().map(|t| target.get(t).map(|j| j as u32)).collect();
        let mut m = DocumentTermMatrix {
            rows: self.rows.clone(),
            vocab: target,
            indptr: vec![0],
            indices: Vec::with_capacity(self.indices.len()),
            counts: Vec::with_capacity(self.counts.len()),
            labels: self.labels.clone(),
            post_counts: self.post_counts.clone(),
        };
        let mut scratch: Vec<(u32, u32)> = Vec::new();
        for i in 0..self.n_rows() {
            scratch.clear();
            let (idx, cnt) = self.row(i);
            for (j, c) in idx.iter().zip(cnt) {
                if let Some(nj) = map[*j as usize] {
                    scratch.push((nj, *c));
                }
            }
            scratch.sort_unstable_by_key(|e| e.0);
            for (j, c) in &scratch {
                m.indices.push(*j);
                m.counts.push(*c);
            }
            m.indptr.push(m.indices.len());
        }
        m
    }

    /// Sparse triplet text format:
    ///
    /// ```text
    /// %%semshift-triplets <rows> <cols> <nnz>
    /// row,col,count
    /// ...
    /// ```
    ///
    /// Rows and columns are zero-based; entries appear in row-major order.
    pub fn write_triplets(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "%%semshift-triplets {} {} {}", self.n_rows(), self.n_cols(), self.nnz())?;
        for i in 0..self.n_rows() {
            let (idx, cnt) = self.row(i);
            for (j, c) in idx.iter().zip(cnt) {
                writeln!(w, "{i},{j},{c}")?;
            }
        }
        Ok(())
    }

    /// `row,user_id,label` with an empty label column for unlabelled rows.
    pub fn write_rows(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "row,user_id,label")?;
        for (i, id) in self.rows.iter().enumerate() {
            let label = match &self.labels {
                Some(ls) => u8::from(ls[i]).to_string(),
                None => String::new(),
            };
            writeln!(w, "{i},{},{label}", super::vocab::csv_field(id))?;
        }
        Ok(())
    }

    pub fn read_triplets(r: impl BufRead, rows: Vec<String>, vocab: Arc<Vocabulary>, labels: Option<Vec<bool>>) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.ok_or_else(|| Error::format("triplet file", "empty"))?;
        let dims: Vec<usize> = header
            .strip_prefix("%%semshift-triplets")
            .ok_or_else(|| Error::format("triplet file", "missing header"))?
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("triplet file", e.to_string()))?;
        if dims.len() != 3 || dims[0] != rows.len() || dims[1] != vocab.len() {
            return Err(Error::format("triplet file", format!("header {dims:?} does not match rows/vocabulary")));
        }
        let mut trips = Vec::with_capacity(dims[2]);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::format("triplet file", e.to_string()));
            if f.len() != 3 {
                return Err(Error::format("triplet file", format!("bad line `{line}`")));
            }
            trips.push((parse(f[0])?, parse(f[1])?, parse(f[2])? as u32));
        }
        Self::from_triplets(rows, vocab, &trips, labels)
    }
}
