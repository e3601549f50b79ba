use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EmbeddingSpace;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

/// `1 - u·v / (|u| |v|)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid("vectors", "dimension mismatch"));
    }
    let (mut dot, mut nu, mut nv) = (0f64, 0f64, 0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm(if nu == 0.0 { "u" } else { "v" }.into()));
    }
    Ok((1.0 - dot / (nu * nv).sqrt()).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub query: u32,
    /// Vocabulary indices, nearest first.
    pub neighbors: Vec<u32>,
    pub distances: Vec<f64>,
    /// The candidate pool was smaller than the requested k.
    pub truncated: bool,
}

/// Candidate pool (terms with frequency >= `cf_nb`) prepared for batched
/// exact scans.
pub struct NeighborIndex<'a> {
    space: &'a EmbeddingSpace,
    cf_nb: u64,
    metric: Metric,
    pool: Vec<u32>,
    /// Pool rows, unit-normalised for cosine.
    pool_rows: Vec<f64>,
    pool_sq: Vec<f64>,
}

const BATCH: usize = 64;

impl<'a> NeighborIndex<'a> {
    pub fn new(space: &'a EmbeddingSpace, cf_nb: u64) -> Self {
        Self::with_metric(space, cf_nb, Metric::Cosine)
    }

    pub fn with_metric(space: &'a EmbeddingSpace, cf_nb: u64, metric: Metric) -> Self {
        let d = space.dim();
        let mut pool = Vec::new();
        let mut pool_rows = Vec::new();
        let mut pool_sq = Vec::new();
        for i in 0..space.len() {
            if space.freq(i) < cf_nb {
                continue;
            }
            let row: Vec<f64> = space.vector(i).iter().map(|&x| x as f64).collect();
            let sq: f64 = row.iter().map(|x| x * x).sum();
            if metric == Metric::Cosine && sq == 0.0 {
                log::warn!("`{}` has a zero vector and is left out of the neighbour pool", space.vocab().term(i));
                continue;
            }
            pool.push(i as u32);
            match metric {
                Metric::Cosine => {
                    let n = sq.sqrt();
                    pool_rows.extend(row.iter().map(|x| x / n));
                    pool_sq.push(1.0);
                }
                Metric::Euclidean => {
                    pool_rows.extend(row);
                    pool_sq.push(sq);
                }
            }
        }
        debug_assert_eq!(pool_rows.len(), pool.len() * d);
        Self {
            space,
            cf_nb,
            metric,
            pool,
            pool_rows,
            pool_sq,
        }
    }

    pub fn space(&self) -> &EmbeddingSpace {
        self.space
    }

    pub fn pool(&self) -> &[u32] {
        &self.pool
    }

    pub fn cf_nb(&self) -> u64 {
        self.cf_nb
    }

    fn side(&self) -> String {
        if self.space.name.is_empty() {
            "space".into()
        } else {
            self.space.name.clone()
        }
    }

    fn query_row(&self, w: u32) -> Result<Vec<f64>> {
        let row: Vec<f64> = self.space.vector(w as usize).iter().map(|&x| x as f64).collect();
        let sq: f64 = row.iter().map(|x| x * x).sum();
        match self.metric {
            Metric::Cosine if sq == 0.0 => Err(Error::ZeroNorm(self.space.vocab().term(w as usize).into())),
            Metric::Cosine => {
                let n = sq.sqrt();
                Ok(row.iter().map(|x| x / n).collect())
            }
            Metric::Euclidean => Ok(row),
        }
    }

    pub fn query(&self, w: u32, k: usize) -> Result<Neighborhood> {
        Ok(self.query_batch(&[w], k)?.pop().expect("one result"))
    }

    /// Exact top-k for each query, ordered by (distance, term).
    pub fn query_batch(&self, queries: &[u32], k: usize) -> Result<Vec<Neighborhood>> {
        if queries.iter().any(|&w| self.pool.iter().all(|&c| c == w)) {
            return Err(Error::EmptyPool {
                side: self.side(),
                cf_nb: self.cf_nb,
            });
        }
        let rows: Vec<Vec<f64>> = queries.iter().map(|&w| self.query_row(w)).collect::<Result<_>>()?;
        let chunks: Vec<(usize, &[u32])> = queries.chunks(BATCH).enumerate().collect();
        let out: Vec<Vec<Neighborhood>> = chunks
            .into_par_iter()
            .map(|(c, qs)| self.scan_block(qs, &rows[c * BATCH..c * BATCH + qs.len()], k))
            .collect();
        Ok(out.into_iter().flatten().collect())
    }

    fn scan_block(&self, queries: &[u32], rows: &[Vec<f64>], k: usize) -> Vec<Neighborhood> {
        let d = self.space.dim();
        let m = queries.len();
        let n = self.pool.len();
        let mut a = Vec::with_capacity(m * d);
        for r in rows {
            a.extend_from_slice(r);
        }
        let mut dots = vec![0f64; m * n];
        // SAFETY: the slices have the extents implied by the given strides.
        unsafe {
            matrixmultiply::dgemm(
                m,
                d,
                n,
                1.0,
                a.as_ptr(),
                d as isize,
                1,
                self.pool_rows.as_ptr(),
                1,
                d as isize,
                0.0,
                dots.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        let vocab = self.space.vocab();
        let cmp = |x: &(f64, u32), y: &(f64, u32)| -> Ordering { x.0.total_cmp(&y.0).then_with(|| vocab.term(x.1 as usize).cmp(vocab.term(y.1 as usize))) };
        queries
            .iter()
            .enumerate()
            .map(|(qi, &w)| {
                let q_sq: f64 = rows[qi].iter().map(|x| x * x).sum();
                let mut cand: Vec<(f64, u32)> = self
                    .pool
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c != w)
                    .map(|(j, &c)| {
                        let dot = dots[qi * n + j];
                        let dist = match self.metric {
                            Metric::Cosine => (1.0 - dot).clamp(0.0, 2.0),
                            Metric::Euclidean => (q_sq + self.pool_sq[j] - 2.0 * dot).max(0.0).sqrt(),
                        };
                        (dist, c)
                    })
                    .collect();
                let truncated = cand.len() < k;
                if !truncated && k < cand.len() {
                    if k > 0 {
                        cand.select_nth_unstable_by(k - 1, cmp);
                    }
                    cand.truncate(k);
                }
                cand.sort_by(cmp);
                Neighborhood {
                    query: w,
                    neighbors: cand.iter().map(|c| c.1).collect(),
                    distances: cand.iter().map(|c| c.0).collect(),
                    truncated,
                }
            })
            .collect()
    }
}

/// Checks that `term` exists and meets `floor`, returning its index.
pub(crate) fn eligible_index(space: &EmbeddingSpace, term: &str, floor: u64) -> Result<u32> {
    let side = if space.name.is_empty() { "space".to_string() } else { space.name.clone() };
    let i = space.vocab().get(term).ok_or_else(|| Error::UnknownTerm {
        term: term.into(),
        side: side.clone(),
    })?;
    let freq = space.freq(i);
    if freq < floor {
        return Err(Error::UnderFrequent {
            term: term.into(),
            side,
            freq,
            floor,
        });
    }
    Ok(i as u32)
}

/// The k nearest terms to `term` among terms with frequency >= `cf_nb`.
/// `floor` is the frequency the query term itself must reach.
pub fn neighborhood(space: &EmbeddingSpace, term: &str, k: usize, cf_nb: u64, floor: u64) -> Result<Neighborhood> {
    let w = eligible_index(space, term, floor)?;
    NeighborIndex::new(space, cf_nb).query(w, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    fn space(terms: &[(&str, u64)], dim: usize, vectors: Vec<f32>) -> EmbeddingSpace {
        let vocab = Arc::new(Vocabulary::from_ordered(terms.iter().map(|(t, f)| (t.to_string(), *f))).unwrap());
        EmbeddingSpace::from_matrix(vocab, dim, vectors).unwrap()
    }

    fn brute(space: &EmbeddingSpace, w: usize, k: usize, cf_nb: u64) -> Vec<u32> {
        let mut all: Vec<(f64, &str, u32)> = (0..space.len())
            .filter(|&i| i != w && space.freq(i) >= cf_nb)
            .map(|i| (cosine_distance(space.vector(w), space.vector(i)).unwrap(), space.vocab().term(i), i as u32))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        all.into_iter().take(k).map(|x| x.2).collect()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_distance(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn four_term_example() {
        let s = space(
            &[("w", 100), ("a", 100), ("b", 100), ("c", 100)],
            2,
            vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0, -1.0, 0.0],
        );
        let nb = neighborhood(&s, "w", 2, 50, 50).unwrap();
        let names: Vec<&str> = nb.neighbors.iter().map(|&i| s.vocab().term(i as usize)).collect();
        assert_eq!(names, ["a", "b"]);
        assert!(!nb.truncated);
    }

    #[test]
    fn whole_pool_when_k_large() {
        let s = space(&[("w", 100), ("a", 100), ("b", 10)], 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let nb = neighborhood(&s, "w", 5, 50, 50).unwrap();
        assert_eq!(nb.neighbors, [1]);
        assert!(nb.truncated);
    }

    #[test]
    fn empty_pool_and_gates() {
        let s = space(&[("w", 100), ("a", 100)], 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(neighborhood(&s, "w", 2, 1000, 50), Err(Error::EmptyPool { .. })));
        assert!(matches!(neighborhood(&s, "zz", 2, 50, 50), Err(Error::UnknownTerm { .. })));
        assert!(matches!(neighborhood(&s, "w", 2, 50, 500), Err(Error::UnderFrequent { .. })));
    }

    #[test]
    fn ties_broken_lexicographically() {
        let s = space(&[("w", 9), ("z", 9), ("y", 9), ("x", 9)], 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0]);
        let nb = neighborhood(&s, "w", 2, 1, 1).unwrap();
        let names: Vec<&str> = nb.neighbors.iter().map(|&i| s.vocab().term(i as usize)).collect();
        assert_eq!(names, ["x", "y"]);
    }

    #[test]
    fn euclidean_metric() {
        let s = space(&[("w", 9), ("a", 9), ("b", 9)], 2, vec![0.0, 0.0, 3.0, 4.0, 1.0, 0.0]);
        let idx = NeighborIndex::with_metric(&s, 1, Metric::Euclidean);
        let nb = idx.query(0, 2).unwrap();
        assert_eq!(nb.neighbors, [2, 1]);
        assert!((nb.distances[1] - 5.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn matches_brute_force(seed in any::<u64>(), n in 20usize..300, dim in 2usize..12, k in 1usize..40) {
            let mut rng = crate::seed::rng(seed);
            let terms: Vec<(String, u64)> = (0..n).map(|i| (format!("t{i}"), rng.random_range(1..120))).collect();
            let vocab = Arc::new(Vocabulary::from_ordered(terms).unwrap());
            let vectors: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let s = EmbeddingSpace::from_matrix(vocab, dim, vectors).unwrap();
            let idx = NeighborIndex::new(&s, 50);
            let queries: Vec<u32> = (0..n as u32).collect();
            let got = idx.query_batch(&queries, k).unwrap();
            for (w, nb) in got.iter().enumerate() {
                prop_assert!(!nb.neighbors.contains(&(w as u32)));
                prop_assert_eq!(&nb.neighbors, &brute(&s, w, k, 50));
            }
        }
    }
}
