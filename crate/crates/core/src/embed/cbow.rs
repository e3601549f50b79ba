//! CBOW with negative sampling.
//!
//! For a centre word `w` with context mean `h`, one SGD step minimises
//!
//! ```text
//! -ln σ(v'_w · h) - Σ_n ln σ(-v'_n · h)
//! ```
//!
//! over the output vector of `w`, the output vectors of the sampled negatives
//! and (through `h`) the input vectors of the context words. Negatives are
//! drawn from the unigram distribution raised to 0.75; the learning rate decays
//! linearly over all epochs.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::EmbeddingSpace;
use crate::corpus::Vocabulary;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedConfig {
    pub dim: usize,
    pub epochs: usize,
    pub window: usize,
    pub negatives: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Frequent-word subsampling threshold; `None` disables it.
    pub subsample: Option<f64>,
    /// Terms rarer than this are left out of the embedding vocabulary.
    pub min_count: u64,
    pub seed: u64,
    /// More than one worker enables lock-free parallel updates, which are not
    /// bitwise reproducible.
    pub workers: usize,
}

pub const SUBSAMPLE_THRESHOLD: f64 = 1e-3;

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            epochs: 20,
            window: 5,
            negatives: 5,
            lr_start: 0.025,
            lr_end: 0.0001,
            subsample: None,
            min_count: 5,
            seed: 1,
            workers: 1,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: &str| Err(Error::invalid("embedding config", d));
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.workers == 0 {
            return bad("dim, window, negatives and workers must be positive");
        }
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return bad("learning rates must satisfy start > end > 0");
        }
        if let Some(t) = self.subsample {
            if !(t > 0.0) {
                return bad("subsample threshold must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean negative-sampling loss per centre word, one entry per epoch.
    pub epoch_loss: Vec<f64>,
    pub words_per_epoch: u64,
    /// Vocabulary indices that never occur in the training stream; their
    /// vectors keep the initial values.
    pub untrained: Vec<u32>,
}

/// Maps token streams to vocabulary ids, dropping out-of-vocabulary tokens.
pub fn encode_sentences<'a, S>(sentences: impl IntoIterator<Item = &'a S>, vocab: &Vocabulary) -> Vec<Vec<u32>>
where
    S: AsRef<[String]> + 'a + ?Sized,
{
    sentences
        .into_iter()
        .map(|s| s.as_ref().iter().filter_map(|t| vocab.get(t).map(|i| i as u32)).collect::<Vec<u32>>())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Builds the vocabulary from the sentences (honouring `config.min_count`) and
/// trains on them.
pub fn train_cbow_tokens<S: AsRef<[String]>>(sentences: &[S], config: &EmbedConfig) -> Result<EmbeddingSpace> {
    let vocab = Arc::new(Vocabulary::from_streams(sentences.iter(), config.min_count, usize::MAX));
    let encoded = encode_sentences(sentences.iter().map(|s| s.as_ref()), &vocab);
    train_cbow(&encoded, vocab, config)
}

pub fn train_cbow(sentences: &[Vec<u32>], vocab: Arc<Vocabulary>, config: &EmbedConfig) -> Result<EmbeddingSpace> {
    config.validate()?;
    if vocab.is_empty() {
        return Err(Error::invalid("embedding input", "empty vocabulary"));
    }
    let n = vocab.len();
    let dim = config.dim;
    if sentences.iter().any(|s| s.iter().any(|&w| w as usize >= n)) {
        return Err(Error::invalid("embedding input", "token id outside the vocabulary"));
    }
    let total_words: u64 = sentences.iter().map(|s| s.len() as u64).sum();
    if total_words == 0 && config.epochs > 0 {
        return Err(Error::invalid("embedding input", "no tokens to train on"));
    }

    let mut input = vec![0f32; n * dim];
    let mut init_rng = seed::rng(seed::derive(config.seed, "cbow-init"));
    let half = 0.5 / dim as f32;
    for x in input.iter_mut() {
        *x = init_rng.random_range(-half..half);
    }
    let mut output = vec![0f32; n * dim];

    let mut seen = vec![false; n];
    for s in sentences {
        for &w in s {
            seen[w as usize] = true;
        }
    }
    let untrained: Vec<u32> = (0..n as u32).filter(|&i| !seen[i as usize]).collect();
    if !untrained.is_empty() {
        log::warn!("{} vocabulary terms never occur in the training stream", untrained.len());
    }

    let counts: Vec<u64> = {
        let mut c = vec![0u64; n];
        for s in sentences {
            for &w in s {
                c[w as usize] += 1;
            }
        }
        c
    };
    let table = NegativeTable::new(&counts);
    let keep = config.subsample.map(|t| keep_probabilities(&counts, t));

    let mut report = TrainingReport {
        epoch_loss: Vec::with_capacity(config.epochs),
        words_per_epoch: total_words,
        untrained,
    };

    if config.epochs > 0 {
        let schedule = Schedule {
            start: config.lr_start,
            end: config.lr_end,
            total: (total_words * config.epochs as u64).max(1),
        };
        if config.workers <= 1 {
            let mut store = PlainRows {
                input: &mut input,
                output: &mut output,
                dim,
            };
            let mut rng = seed::rng(seed::derive(config.seed, "cbow-train"));
            let mut done = 0u64;
            for _ in 0..config.epochs {
                let mut stats = EpochStats::default();
                for s in sentences {
                    let s = subsampled(s, keep.as_deref(), &mut rng);
                    let lr = schedule.rate(done) as f32;
                    train_sentence(&mut store, &s, config, &table, lr, &mut rng, &mut stats);
                    done += s.len() as u64;
                }
                report.epoch_loss.push(stats.mean());
            }
        } else {
            report.epoch_loss = train_parallel(&mut input, &mut output, sentences, config, &table, keep.as_deref(), &schedule);
        }
    }

    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("embedding matrix"));
    }
    Ok(EmbeddingSpace::from_parts(vocab, dim, input, config.clone(), report))
}

struct Schedule {
    start: f64,
    end: f64,
    total: u64,
}

impl Schedule {
    fn rate(&self, done: u64) -> f64 {
        let progress = (done as f64 / self.total as f64).min(1.0);
        (self.start - (self.start - self.end) * progress).max(self.end)
    }
}

#[derive(Default)]
struct EpochStats {
    loss: f64,
    centres: u64,
}

impl EpochStats {
    fn mean(&self) -> f64 {
        if self.centres == 0 {
            0.0
        } else {
            self.loss / self.centres as f64
        }
    }
}

/// Cumulative table for drawing negatives ∝ count^0.75.
struct NegativeTable {
    slots: Vec<u32>,
}

impl NegativeTable {
    fn new(counts: &[u64]) -> Self {
        let size = (counts.len() * 16).max(1 << 20);
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let total: f64 = weights.iter().sum();
        let mut slots = Vec::with_capacity(size);
        if total > 0.0 {
            let mut word = 0usize;
            let mut cum = weights[0] / total;
            for i in 0..size {
                slots.push(word as u32);
                if (i + 1) as f64 / size as f64 > cum && word + 1 < weights.len() {
                    word += 1;
                    cum += weights[word] / total;
                    while (i + 1) as f64 / size as f64 > cum && word + 1 < weights.len() {
                        word += 1;
                        cum += weights[word] / total;
                    }
                }
            }
        } else {
            slots.push(0);
        }
        Self { slots }
    }

    fn draw(&self, rng: &mut impl RngCore) -> u32 {
        self.slots[((rng.next_u64() as u128 * self.slots.len() as u128) >> 64) as usize]
    }
}

fn keep_probabilities(counts: &[u64], threshold: f64) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let t = threshold * total as f64;
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                1.0
            } else {
                let f = c as f64;
                (((f / t).sqrt() + 1.0) * t / f).min(1.0)
            }
        })
        .collect()
}

fn subsampled(s: &[u32], keep: Option<&[f64]>, rng: &mut impl Rng) -> Vec<u32> {
    match keep {
        None => s.to_vec(),
        Some(k) => s.iter().copied().filter(|&w| rng.random::<f64>() < k[w as usize]).collect(),
    }
}

/// Row access to the input and output matrices.
trait Rows {
    fn add_input_into(&self, row: usize, acc: &mut [f32]);
    fn add_to_input(&mut self, row: usize, delta: &[f32]);
    fn output_dot(&self, row: usize, h: &[f32]) -> f32;
    /// `acc += g * output[row]` then `output[row] += g * h`.
    fn output_step(&mut self, row: usize, g: f32, h: &[f32], acc: &mut [f32]);
}

struct PlainRows<'a> {
    input: &'a mut [f32],
    output: &'a mut [f32],
    dim: usize,
}

impl Rows for PlainRows<'_> {
    fn add_input_into(&self, row: usize, acc: &mut [f32]) {
        let r = &self.input[row * self.dim..(row + 1) * self.dim];
        for (a, x) in acc.iter_mut().zip(r) {
            *a += x;
        }
    }

    fn add_to_input(&mut self, row: usize, delta: &[f32]) {
        let r = &mut self.input[row * self.dim..(row + 1) * self.dim];
        for (x, d) in r.iter_mut().zip(delta) {
            *x += d;
        }
    }

    fn output_dot(&self, row: usize, h: &[f32]) -> f32 {
        dot(&self.output[row * self.dim..(row + 1) * self.dim], h)
    }

    fn output_step(&mut self, row: usize, g: f32, h: &[f32], acc: &mut [f32]) {
        let r = &mut self.output[row * self.dim..(row + 1) * self.dim];
        for ((o, a), x) in r.iter_mut().zip(acc.iter_mut()).zip(h) {
            *a += g * *o;
            *o += g * x;
        }
    }
}

/// Lock-free shared rows for parallel training. Concurrent read-modify-write
/// of a component may lose an update; that is accepted.
struct SharedRows<'a> {
    input: &'a [AtomicU32],
    output: &'a [AtomicU32],
    dim: usize,
}

#[inline]
fn load(a: &AtomicU32) -> f32 {
    f32::from_bits(a.load(Ordering::Relaxed))
}

#[inline]
fn store(a: &AtomicU32, v: f32) {
    a.store(v.to_bits(), Ordering::Relaxed);
}

impl Rows for SharedRows<'_> {
    fn add_input_into(&self, row: usize, acc: &mut [f32]) {
        for (a, x) in acc.iter_mut().zip(&self.input[row * self.dim..(row + 1) * self.dim]) {
            *a += load(x);
        }
    }

    fn add_to_input(&mut self, row: usize, delta: &[f32]) {
        for (x, d) in self.input[row * self.dim..(row + 1) * self.dim].iter().zip(delta) {
            store(x, load(x) + d);
        }
    }

    fn output_dot(&self, row: usize, h: &[f32]) -> f32 {
        self.output[row * self.dim..(row + 1) * self.dim].iter().zip(h).map(|(a, b)| load(a) * b).sum()
    }

    fn output_step(&mut self, row: usize, g: f32, h: &[f32], acc: &mut [f32]) {
        for ((o, a), x) in self.output[row * self.dim..(row + 1) * self.dim].iter().zip(acc.iter_mut()).zip(h) {
            let ov = load(o);
            *a += g * ov;
            store(o, ov + g * x);
        }
    }
}

/// Eight-lane dot product.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    lanes.iter().sum::<f32>() + tail
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn train_sentence<R: Rows>(rows: &mut R, s: &[u32], config: &EmbedConfig, table: &NegativeTable, lr: f32, rng: &mut impl RngCore, stats: &mut EpochStats) {
    let dim = config.dim;
    let mut h = vec![0f32; dim];
    let mut grad = vec![0f32; dim];
    let len = s.len();
    for pos in 0..len {
        let centre = s[pos];
        let reduced = ((rng.next_u32() as u64 * config.window as u64) >> 32) as usize;
        let radius = config.window - reduced;
        let lo = pos.saturating_sub(radius);
        let hi = (pos + radius).min(len - 1);
        h.iter_mut().for_each(|x| *x = 0.0);
        let mut count = 0usize;
        for c in lo..=hi {
            if c != pos {
                rows.add_input_into(s[c] as usize, &mut h);
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        let inv = 1.0 / count as f32;
        h.iter_mut().for_each(|x| *x *= inv);
        grad.iter_mut().for_each(|x| *x = 0.0);

        let mut loss = 0f64;
        for d in 0..=config.negatives {
            let (target, label) = if d == 0 {
                (centre, 1.0f32)
            } else {
                let t = table.draw(rng);
                if t == centre {
                    continue;
                }
                (t, 0.0f32)
            };
            let sig = sigmoid(rows.output_dot(target as usize, &h));
            let p = if label > 0.5 { sig } else { 1.0 - sig };
            loss -= f64::from(p.max(1e-7).ln());
            let g = (label - sig) * lr;
            rows.output_step(target as usize, g, &h, &mut grad);
        }
        stats.loss += loss;
        stats.centres += 1;

        grad.iter_mut().for_each(|x| *x *= inv);
        for c in lo..=hi {
            if c != pos {
                rows.add_to_input(s[c] as usize, &grad);
            }
        }
    }
}

fn train_parallel(
    input: &mut [f32],
    output: &mut [f32],
    sentences: &[Vec<u32>],
    config: &EmbedConfig,
    table: &NegativeTable,
    keep: Option<&[f64]>,
    schedule: &Schedule,
) -> Vec<f64> {
    let shared_in: Vec<AtomicU32> = input.iter().map(|x| AtomicU32::new(x.to_bits())).collect();
    let shared_out: Vec<AtomicU32> = output.iter().map(|x| AtomicU32::new(x.to_bits())).collect();
    let done = AtomicU64::new(0);
    let workers = config.workers.min(sentences.len().max(1));
    let chunk = sentences.len().div_ceil(workers).max(1);
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let stats: Vec<EpochStats> = std::thread::scope(|scope| {
            let handles: Vec<_> = sentences
                .chunks(chunk)
                .enumerate()
                .map(|(t, part)| {
                    let (shared_in, shared_out, done) = (&shared_in, &shared_out, &done);
                    scope.spawn(move || {
                        let mut rows = SharedRows {
                            input: shared_in,
                            output: shared_out,
                            dim: config.dim,
                        };
                        let mut rng = seed::rng(seed::derive_indexed(config.seed, "cbow-worker", (epoch * 1024 + t) as u64));
                        let mut stats = EpochStats::default();
                        for s in part {
                            let s = subsampled(s, keep, &mut rng);
                            let lr = schedule.rate(done.load(Ordering::Relaxed)) as f32;
                            train_sentence(&mut rows, &s, config, table, lr, &mut rng, &mut stats);
                            done.fetch_add(s.len() as u64, Ordering::Relaxed);
                        }
                        stats
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("embedding worker panicked")).collect()
        });
        let loss: f64 = stats.iter().map(|s| s.loss).sum();
        let centres: u64 = stats.iter().map(|s| s.centres).sum();
        epoch_loss.push(if centres == 0 { 0.0 } else { loss / centres as f64 });
    }
    for (x, a) in input.iter_mut().zip(&shared_in) {
        *x = load(a);
    }
    for (x, a) in output.iter_mut().zip(&shared_out) {
        *x = load(a);
    }
    epoch_loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_sentences() -> Vec<Vec<String>> {
        let groups = [["alpha", "beta", "gamma"], ["delta", "eps", "zeta"]];
        (0..400)
            .map(|i| {
                let g = &groups[i % 2];
                (0..8).map(|j| g[(i + j) % 3].to_string()).collect()
            })
            .collect()
    }

    fn small_config() -> EmbedConfig {
        EmbedConfig {
            dim: 16,
            epochs: 3,
            min_count: 1,
            ..EmbedConfig::default()
        }
    }

    #[test]
    fn zero_epochs_keeps_initialisation() {
        let sents = toy_sentences();
        let cfg = EmbedConfig { epochs: 0, ..small_config() };
        let a = train_cbow_tokens(&sents, &cfg).unwrap();
        let mut rng = seed::rng(seed::derive(cfg.seed, "cbow-init"));
        let half = 0.5 / cfg.dim as f32;
        let expected: Vec<f32> = (0..a.vectors().len()).map(|_| rng.random_range(-half..half)).collect();
        assert_eq!(a.vectors(), expected.as_slice());
    }

    #[test]
    fn deterministic_single_worker() {
        let sents = toy_sentences();
        let a = train_cbow_tokens(&sents, &small_config()).unwrap();
        let b = train_cbow_tokens(&sents, &small_config()).unwrap();
        let bits = |s: &EmbeddingSpace| s.vectors().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn parallel_mode_trains() {
        let sents = toy_sentences();
        let cfg = EmbedConfig { workers: 3, ..small_config() };
        let space = train_cbow_tokens(&sents, &cfg).unwrap();
        assert!(space.vectors().iter().all(|x| x.is_finite()));
        let loss = &space.report().epoch_loss;
        assert!(loss.last().unwrap() < loss.first().unwrap());
    }

    #[test]
    fn untrained_terms_flagged() {
        let vocab = Arc::new(Vocabulary::from_ordered(vec![("a".into(), 3), ("b".into(), 3), ("ghost".into(), 0)]).unwrap());
        let sents = vec![vec![0u32, 1, 0, 1, 0, 1]];
        let space = train_cbow(&sents, vocab, &small_config()).unwrap();
        assert_eq!(space.report().untrained, vec![2]);
    }

    #[test]
    fn negative_table_follows_power_law() {
        let counts = [1000u64, 10, 0, 100];
        let t = NegativeTable::new(&counts);
        let mut hist = [0usize; 4];
        for &s in &t.slots {
            hist[s as usize] += 1;
        }
        let w: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let total: f64 = w.iter().sum();
        for i in 0..4 {
            let expected = w[i] / total;
            let got = hist[i] as f64 / t.slots.len() as f64;
            assert!((expected - got).abs() < 1e-5, "{i}: {expected} vs {got}");
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = EmbedConfig {
            lr_end: 0.5,
            ..EmbedConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
