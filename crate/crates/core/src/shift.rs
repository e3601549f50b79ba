//! Semantic stability between two embedding spaces.
//!
//! ```text
//! S(w) = |nb_P^k(w) ∩ nb_Q^k(w)| / k
//! ```
//!
//! where `nb_X^k(w)` are the k nearest terms to `w` in space X among terms with
//! frequency >= `cf_nb`. Only terms reaching `cf_shift` in both spaces are
//! scored. When either pool holds fewer than k candidates, both neighbourhoods
//! are cut to the smaller size and the record is flagged.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{csv_field, split_last_field};
use crate::corpus::Vocabulary;
use crate::embed::{neighbors::eligible_index, EmbeddingSpace, Metric, NeighborIndex, Neighborhood};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftParams {
    pub k: usize,
    pub cf_nb: u64,
    pub cf_shift: u64,
    pub metric: Metric,
}

impl Default for ShiftParams {
    fn default() -> Self {
        Self {
            k: 500,
            cf_nb: 50,
            cf_shift: 50,
            metric: Metric::Cosine,
        }
    }
}

impl ShiftParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("shift params", "k must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub term: String,
    #[serde(rename = "S")]
    pub s: f64,
    /// Size of the neighbourhood intersection.
    pub shared: usize,
    /// Neighbourhood size actually compared; below k when a pool was small.
    pub k_eff: usize,
    pub freq_p: u64,
    pub freq_q: u64,
    /// Indices into the P and Q vocabularies, nearest first.
    #[serde(skip)]
    pub nb_p: Vec<u32>,
    #[serde(skip)]
    pub nb_q: Vec<u32>,
    pub small_pool: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityTable {
    pub p: String,
    pub q: String,
    pub params: ShiftParams,
    /// Sorted by S ascending, then term.
    pub records: Vec<StabilityRecord>,
    vocab_p: Option<Arc<Vocabulary>>,
    vocab_q: Option<Arc<Vocabulary>>,
}

fn name_of(space: &EmbeddingSpace, fallback: &str) -> String {
    if space.name.is_empty() {
        fallback.into()
    } else {
        space.name.clone()
    }
}

/// Maps each Q vocabulary index to the P index of the same term.
fn index_map(p: &Vocabulary, q: &Vocabulary) -> Vec<Option<u32>> {
    q.terms().iter().map(|t| p.get(t).map(|i| i as u32)).collect()
}

fn compare(nb_p: &Neighborhood, nb_q: &Neighborhood, k: usize, q_to_p: &[Option<u32>], mark: &mut [bool]) -> (usize, usize) {
    let k_eff = k.min(nb_p.neighbors.len()).min(nb_q.neighbors.len());
    let left = &nb_p.neighbors[..k_eff];
    for &i in left {
        mark[i as usize] = true;
    }
    let shared = nb_q.neighbors[..k_eff]
        .iter()
        .filter(|&&j| q_to_p[j as usize].is_some_and(|i| mark[i as usize]))
        .count();
    for &i in left {
        mark[i as usize] = false;
    }
    (shared, k_eff)
}

fn record(
    term: &str,
    nb_p: Neighborhood,
    nb_q: Neighborhood,
    k: usize,
    p: &EmbeddingSpace,
    q: &EmbeddingSpace,
    q_to_p: &[Option<u32>],
    mark: &mut [bool],
) -> StabilityRecord {
    let (shared, k_eff) = compare(&nb_p, &nb_q, k, q_to_p, mark);
    let mut nb_p = nb_p.neighbors;
    let mut nb_q = nb_q.neighbors;
    nb_p.truncate(k_eff);
    nb_q.truncate(k_eff);
    StabilityRecord {
        term: term.to_string(),
        s: if k_eff == 0 { 0.0 } else { shared as f64 / k_eff as f64 },
        shared,
        k_eff,
        freq_p: p.vocab().freq_of(term),
        freq_q: q.vocab().freq_of(term),
        nb_p,
        nb_q,
        small_pool: k_eff < k,
    }
}

/// Stability of a single term; fails naming the side where `w` is missing or
/// under-frequent.
pub fn stability(p: &EmbeddingSpace, q: &EmbeddingSpace, w: &str, params: &ShiftParams) -> Result<StabilityRecord> {
    params.validate()?;
    let ip = eligible_index(p, w, params.cf_shift)?;
    let iq = eligible_index(q, w, params.cf_shift)?;
    let nb_p = NeighborIndex::with_metric(p, params.cf_nb, params.metric).query(ip, params.k)?;
    let nb_q = NeighborIndex::with_metric(q, params.cf_nb, params.metric).query(iq, params.k)?;
    let q_to_p = index_map(p.vocab(), q.vocab());
    let mut mark = vec![false; p.len()];
    Ok(record(w, nb_p, nb_q, params.k, p, q, &q_to_p, &mut mark))
}

pub fn stability_table(p: &EmbeddingSpace, q: &EmbeddingSpace, params: &ShiftParams) -> Result<StabilityTable> {
    params.validate()?;
    let p_name = name_of(p, "P");
    let q_name = name_of(q, "Q");
    let mut eligible: Vec<(&str, u32, u32)> = p
        .vocab()
        .iter()
        .enumerate()
        .filter(|(_, (_, f))| *f >= params.cf_shift)
        .filter_map(|(ip, (t, _))| {
            let iq = q.vocab().get(t)?;
            (q.freq(iq) >= params.cf_shift).then_some((t, ip as u32, iq as u32))
        })
        .collect();
    eligible.retain(|&(t, ip, iq)| {
        let zero = |s: &EmbeddingSpace, i: u32| s.vector(i as usize).iter().all(|&x| x == 0.0);
        let keep = params.metric != Metric::Cosine || !(zero(p, ip) || zero(q, iq));
        if !keep {
            log::warn!("`{t}` has an untrained zero vector and is left out of the table");
        }
        keep
    });
    if eligible.is_empty() {
        return Err(Error::NoEligibleTerms {
            p: p_name,
            q: q_name,
            cf_shift: params.cf_shift,
        });
    }
    eligible.sort_by(|a, b| a.0.cmp(b.0));
    let idx_p = NeighborIndex::with_metric(p, params.cf_nb, params.metric);
    let idx_q = NeighborIndex::with_metric(q, params.cf_nb, params.metric);
    let qs_p: Vec<u32> = eligible.iter().map(|e| e.1).collect();
    let qs_q: Vec<u32> = eligible.iter().map(|e| e.2).collect();
    let nbs_p = idx_p.query_batch(&qs_p, params.k)?;
    let nbs_q = idx_q.query_batch(&qs_q, params.k)?;
    let q_to_p = index_map(p.vocab(), q.vocab());
    let mut mark = vec![false; p.len()];
    let mut records: Vec<StabilityRecord> = eligible
        .iter()
        .zip(nbs_p.into_iter().zip(nbs_q))
        .map(|(e, (a, b))| record(e.0, a, b, params.k, p, q, &q_to_p, &mut mark))
        .collect();
    let flagged = records.iter().filter(|r| r.small_pool).count();
    if flagged > 0 {
        log::warn!("{flagged} terms compared over fewer than k={} neighbours", params.k);
    }
    sort_records(&mut records);
    Ok(StabilityTable {
        p: p_name,
        q: q_name,
        params: *params,
        records,
        vocab_p: Some(Arc::clone(p.vocab())),
        vocab_q: Some(Arc::clone(q.vocab())),
    })
}

fn sort_records(records: &mut [StabilityRecord]) {
    records.sort_by(|a, b| a.s.total_cmp(&b.s).then_with(|| a.term.cmp(&b.term)));
}

impl StabilityTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, term: &str) -> Option<&StabilityRecord> {
        self.records.iter().find(|r| r.term == term)
    }

    pub fn scores(&self) -> HashMap<String, f64> {
        self.records.iter().map(|r| (r.term.clone(), r.s)).collect()
    }

    /// Neighbour terms of a record, if the table still holds the vocabularies.
    pub fn neighbor_terms(&self, rec: &StabilityRecord) -> Option<(Vec<String>, Vec<String>)> {
        let (vp, vq) = (self.vocab_p.as_ref()?, self.vocab_q.as_ref()?);
        Some((
            rec.nb_p.iter().map(|&i| vp.term(i as usize).to_string()).collect(),
            rec.nb_q.iter().map(|&i| vq.term(i as usize).to_string()).collect(),
        ))
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "term,S,freq_P,freq_Q")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{}", csv_field(&r.term), r.s, r.freq_p, r.freq_q)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`write_csv`](Self::write_csv). Neighbourhoods
    /// are not stored in the CSV and come back empty.
    pub fn read_csv(r: impl BufRead, params: ShiftParams) -> Result<Self> {
        let bad = |d: String| Error::format("stability csv", d);
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "term,S,freq_P,freq_Q" => {}
            _ => return Err(bad("missing header term,S,freq_P,freq_Q".into())),
        }
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parse = || -> Option<StabilityRecord> {
                let (rest, fq) = split_last_field(&line)?;
                let (rest, fp) = split_last_field(&rest)?;
                let (term, s) = split_last_field(&rest)?;
                let s: f64 = s.parse().ok()?;
                Some(StabilityRecord {
                    shared: (s * params.k as f64).round() as usize,
                    k_eff: params.k,
                    term,
                    s,
                    freq_p: fp.parse().ok()?,
                    freq_q: fq.parse().ok()?,
                    nb_p: Vec::new(),
                    nb_q: Vec::new(),
                    small_pool: false,
                })
            };
            let rec = parse().ok_or_else(|| bad(format!("line {}", n + 2)))?;
            if !(0.0..=1.0).contains(&rec.s) {
                return Err(bad(format!("line {}: S outside [0,1]", n + 2)));
            }
            records.push(rec);
        }
        sort_records(&mut records);
        Ok(Self {
            p: "P".into(),
            q: "Q".into(),
            params,
            records,
            vocab_p: None,
            vocab_q: None,
        })
    }

    /// Builds a table from bare scores, for callers that bring their own S.
    pub fn from_scores(scores: impl IntoIterator<Item = (String, f64)>, params: ShiftParams) -> Self {
        let mut records: Vec<StabilityRecord> = scores
            .into_iter()
            .map(|(term, s)| StabilityRecord {
                term,
                s,
                shared: (s * params.k as f64).round() as usize,
                k_eff: params.k,
                freq_p: 0,
                freq_q: 0,
                nb_p: Vec::new(),
                nb_q: Vec::new(),
                small_pool: false,
            })
            .collect();
        sort_records(&mut records);
        Self {
            p: "P".into(),
            q: "Q".into(),
            params,
            records,
            vocab_p: None,
            vocab_q: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborDiff {
    pub term: String,
    pub p_only: Vec<String>,
    pub q_only: Vec<String>,
    pub shared: Vec<String>,
}

/// Partitions the `top_m` nearest terms in each space into exclusive and
/// shared sets, each in order of nearness (shared in P order).
pub fn neighbor_diff(p: &EmbeddingSpace, q: &EmbeddingSpace, w: &str, top_m: usize, params: &ShiftParams) -> Result<NeighborDiff> {
    let ip = eligible_index(p, w, params.cf_shift)?;
    let iq = eligible_index(q, w, params.cf_shift)?;
    let terms = |s: &EmbeddingSpace, i: u32| -> Result<Vec<String>> {
        let nb = NeighborIndex::with_metric(s, params.cf_nb, params.metric).query(i, top_m)?;
        Ok(nb.neighbors.iter().map(|&j| s.vocab().term(j as usize).to_string()).collect())
    };
    let tp = terms(p, ip)?;
    let tq = terms(q, iq)?;
    let sp: BTreeSet<&String> = tp.iter().collect();
    let sq: BTreeSet<&String> = tq.iter().collect();
    Ok(NeighborDiff {
        term: w.to_string(),
        p_only: tp.iter().filter(|t| !sq.contains(t)).cloned().collect(),
        q_only: tq.iter().filter(|t| !sp.contains(t)).cloned().collect(),
        shared: tp.iter().filter(|t| sq.contains(t)).cloned().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::cosine_distance;
    use proptest::prelude::*;
    use rand::Rng;

    fn space(name: &str, terms: &[(&str, u64)], vectors: Vec<f32>) -> EmbeddingSpace {
        let vocab = Arc::new(Vocabulary::from_ordered(terms.iter().map(|(t, f)| (t.to_string(), *f))).unwrap());
        let dim = vectors.len() / terms.len();
        EmbeddingSpace::from_matrix(vocab, dim, vectors).unwrap().with_name(name)
    }

    fn params(k: usize) -> ShiftParams {
        ShiftParams {
            k,
            cf_nb: 50,
            cf_shift: 50,
            ..ShiftParams::default()
        }
    }

    const SIX: [(&str, u64); 6] = [("w", 99), ("a", 99), ("b", 99), ("c", 99), ("d", 99), ("e", 99)];

    #[test]
    fn identical_spaces_all_one() {
        let v: Vec<f32> = (0..12).map(|i| ((i * 7 % 5) as f32) - 1.5).collect();
        let p = space("P", &SIX, v.clone());
        let q = space("Q", &SIX, v);
        let t = stability_table(&p, &q, &params(2)).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.records.iter().all(|r| r.s == 1.0));
        let terms: Vec<&str> = t.records.iter().map(|r| r.term.as_str()).collect();
        assert_eq!(terms, ["a", "b", "c", "d", "e", "w"]);
    }

    #[test]
    fn half_overlap() {
        // nb_P(w) = {a, b}, nb_Q(w) = {b, c}
        let terms = [("w", 99), ("a", 99), ("b", 99), ("c", 99)];
        let p = space("P", &terms, vec![1.0, 0.0, 0.9, 0.1, 0.8, 0.3, -1.0, 0.0]);
        let q = space("Q", &terms, vec![1.0, 0.0, -1.0, 0.0, 0.8, 0.3, 0.9, 0.1]);
        assert_eq!(stability(&p, &q, "w", &params(2)).unwrap().s, 0.5);
    }

    #[test]
    fn nearest_made_antipodal() {
        let p = space("P", &SIX, vec![1.0, 0.0, 0.99, 0.1, 0.98, -0.1, -0.5, 1.0, -0.5, -1.0, -1.0, 0.05]);
        let q = space("Q", &SIX, vec![1.0, 0.0, -0.99, 0.1, -0.98, -0.1, 0.3, 1.0, 0.3, -1.0, -1.0, 0.05]);
        let r = stability(&p, &q, "w", &params(2)).unwrap();
        assert_eq!(r.s, 0.0);
        let d = neighbor_diff(&p, &q, "w", 2, &params(2)).unwrap();
        assert!(d.shared.is_empty());
        assert_eq!(d.p_only, ["a", "b"]);
    }

    #[test]
    fn gates_name_failing_side() {
        let p = space("P", &[("w", 99), ("a", 99)], vec![1.0, 0.0, 0.0, 1.0]);
        let q = space("Q", &[("w", 10), ("a", 99)], vec![1.0, 0.0, 0.0, 1.0]);
        match stability(&p, &q, "w", &params(1)) {
            Err(Error::UnderFrequent { side, .. }) => assert_eq!(side, "Q"),
            other => panic!("{other:?}"),
        }
        let hi = ShiftParams { cf_shift: 1000, ..params(1) };
        assert!(matches!(stability_table(&p, &q, &hi), Err(Error::NoEligibleTerms { .. })));
    }

    #[test]
    fn small_pool_flagged() {
        let terms = [("w", 99), ("a", 99), ("b", 99)];
        let v = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let t = stability_table(&space("P", &terms, v.clone()), &space("Q", &terms, v), &params(5)).unwrap();
        assert!(t.records.iter().all(|r| r.small_pool && r.k_eff == 2 && r.s == 1.0));
    }

    #[test]
    fn identical_diff_has_no_exclusive_terms() {
        let v: Vec<f32> = (0..12).map(|i| (i as f32).sin()).collect();
        let d = neighbor_diff(&space("P", &SIX, v.clone()), &space("Q", &SIX, v), "w", 3, &params(3)).unwrap();
        assert!(d.p_only.is_empty() && d.q_only.is_empty());
        assert_eq!(d.shared.len(), 3);
    }

    #[test]
    fn csv_round_trip() {
        let v: Vec<f32> = (0..12).map(|i| (i as f32 * 1.3).cos()).collect();
        let w: Vec<f32> = (0..12).map(|i| (i as f32 * 0.7).sin()).collect();
        let t = stability_table(&space("P", &SIX, v), &space("Q", &SIX, w), &params(2)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = StabilityTable::read_csv(&buf[..], params(2)).unwrap();
        assert_eq!(back.scores(), t.scores());
        let json =
            serde_json::to_string(&neighbor_diff(&space("P", &SIX, vec![1.0; 12]), &space("Q", &SIX, vec![1.0; 12]), "a", 2, &params(2)).unwrap()).unwrap();
        assert!(json.contains("\"q_only\":[]"));
    }

    fn brute_nb(s: &EmbeddingSpace, w: &str, k: usize, cf_nb: u64) -> Vec<String> {
        let wi = s.vocab().get(w).unwrap();
        let mut all: Vec<(f64, String)> = (0..s.len())
            .filter(|&i| i != wi && s.freq(i) >= cf_nb)
            .map(|i| (cosine_distance(s.vector(wi), s.vector(i)).unwrap(), s.vocab().term(i).to_string()))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|x| x.1).collect()
    }

    fn random_space(name: &str, rng: &mut impl Rng, n: usize, dim: usize) -> EmbeddingSpace {
        let terms: Vec<(String, u64)> = (0..n).map(|i| (format!("t{i:03}"), rng.random_range(20..200))).collect();
        let vocab = Arc::new(Vocabulary::from_ordered(terms).unwrap());
        let v = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        EmbeddingSpace::from_matrix(vocab, dim, v).unwrap().with_name(name)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]
        #[test]
        fn table_matches_brute_force_and_is_symmetric(seed in any::<u64>(), n in 30usize..150, k in 1usize..20) {
            let mut rng = crate::seed::rng(seed);
            let p = random_space("P", &mut rng, n, 5);
            let q = random_space("Q", &mut rng, n, 5);
            let prm = params(k);
            let t = stability_table(&p, &q, &prm).unwrap();
            let back = stability_table(&q, &p, &prm).unwrap();
            prop_assert_eq!(t.scores(), back.scores());
            for r in &t.records {
                let a = brute_nb(&p, &r.term, k, 50);
                let b = brute_nb(&q, &r.term, k, 50);
                let ke = k.min(a.len()).min(b.len());
                let shared = a[..ke].iter().filter(|x| b[..ke].contains(x)).count();
                prop_assert_eq!(r.shared, shared);
                prop_assert_eq!(r.s, shared as f64 / ke as f64);
                prop_assert!((0.0..=1.0).contains(&r.s));
            }
        }
    }
}
