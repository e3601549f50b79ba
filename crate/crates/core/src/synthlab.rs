//! Synthetic two-period corpora with planted semantic shift and class signal.
//!
//! Every term belongs to one topic; a post picks a single topic from its
//! user's Dirichlet mixture and draws `post_length` terms from that topic's
//! unigram distribution (Zipf-like weights within the topic). In the second
//! regime the shifted terms move to a different topic. Signal terms are
//! `signal_boost` times more likely for positive users; a signal term that is
//! also shifted loses its boost in the second regime and all shifted terms are
//! scaled by `drift_boost` there.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::{Period, Post, PostStore};
use crate::seed;
use crate::shift::StabilityTable;
use crate::{Error, Result};

/// 2019-03-01 and 2019-07-01, UTC.
pub const PERIOD1: (i64, i64) = (1_551_398_400, 1_561_939_200);
/// 2020-03-01 and 2020-07-01, UTC.
pub const PERIOD2: (i64, i64) = (1_583_020_800, 1_593_561_600);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub topics: usize,
    pub users_per_class: usize,
    /// Posts per user in each period.
    pub posts_per_user: usize,
    pub post_length: usize,
    /// Symmetric Dirichlet parameter of the per-user topic mixture.
    pub topic_concentration: f64,
    /// Within-topic weights are `rank^-zipf_exponent`.
    pub zipf_exponent: f64,
    pub shift_fraction: f64,
    pub signal_fraction: f64,
    pub signal_boost: f64,
    /// Fraction of signal terms that are also shifted.
    pub overlap: f64,
    /// Frequency multiplier of shifted terms in the second regime.
    pub drift_boost: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            vocab_size: 10_000,
            topics: 20,
            users_per_class: 250,
            posts_per_user: 100,
            post_length: 20,
            topic_concentration: 0.5,
            zipf_exponent: 0.1,
            shift_fraction: 0.05,
            signal_fraction: 0.02,
            signal_boost: 3.0,
            overlap: 0.0,
            drift_boost: 1.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: &str| Err(Error::invalid("synth spec", d));
        if self.topics < 2 || self.topics > u16::MAX as usize {
            return bad("topics must be in 2..=65535");
        }
        if self.vocab_size < self.topics {
            return bad("vocab_size must be at least the topic count");
        }
        if self.users_per_class == 0 || self.posts_per_user == 0 || self.post_length == 0 {
            return bad("users, posts and post length must be positive");
        }
        for (name, f) in [
            ("shift_fraction", self.shift_fraction),
            ("signal_fraction", self.signal_fraction),
            ("overlap", self.overlap),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid("synth spec", format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.signal_boost > 0.0 && self.drift_boost > 0.0 && self.topic_concentration > 0.0) {
            return bad("boosts and concentration must be positive");
        }
        if !(self.zipf_exponent >= 0.0) {
            return bad("zipf_exponent must be >= 0");
        }
        let n_signal = (self.signal_fraction * self.vocab_size as f64).round() as usize;
        let n_shift = (self.shift_fraction * self.vocab_size as f64).round() as usize;
        let n_overlap = (self.overlap * n_signal as f64).round() as usize;
        if n_overlap > n_shift {
            return bad("overlap asks for more shifted signal terms than the shift set holds");
        }
        if n_signal + n_shift - n_overlap > self.vocab_size {
            return bad("signal and shift sets do not fit in the vocabulary");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Before,
    After,
}

/// The generative parameters shared by every sample drawn from one spec.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub spec: SynthSpec,
    pub terms: Vec<String>,
    topic: [Vec<u16>; 2],
    weight: Vec<f64>,
    pub shifted: BTreeSet<usize>,
    pub signal: BTreeSet<usize>,
    /// `tables[regime][class][topic]` = (term ids, cumulative probabilities).
    tables: [[Vec<(Vec<u32>, Vec<f64>)>; 2]; 2],
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Pronounceable pseudo-word for `n`: at least three consonant-vowel syllables.
pub fn pseudo_word(mut n: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::new();
    let mut syllables = 0;
    while n > 0 || syllables < 3 {
        let s = n % base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        n /= base;
        syllables += 1;
    }
    out
}

impl SynthWorld {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let v = spec.vocab_size;
        let k = spec.topics;
        let mut rng = seed::rng(seed::derive(spec.seed, "synth-world"));

        let mut names: Vec<usize> = (0..v).collect();
        names.shuffle(&mut rng);
        let terms: Vec<String> = names.iter().map(|&n| pseudo_word(n)).collect();

        let mut order: Vec<usize> = (0..v).collect();
        order.shuffle(&mut rng);
        let mut topic1 = vec![0u16; v];
        let mut weight = vec![0f64; v];
        for (pos, &t) in order.iter().enumerate() {
            topic1[t] = (pos % k) as u16;
            let rank = pos / k + 1;
            weight[t] = (rank as f64).powf(-spec.zipf_exponent);
        }

        let n_signal = (spec.signal_fraction * v as f64).round() as usize;
        let n_shift = (spec.shift_fraction * v as f64).round() as usize;
        let n_overlap = (spec.overlap * n_signal as f64).round() as usize;
        let mut pick: Vec<usize> = (0..v).collect();
        pick.shuffle(&mut rng);
        let signal: Vec<usize> = pick[..n_signal].to_vec();
        let mut shifted: Vec<usize> = signal[..n_overlap].to_vec();
        shifted.extend_from_slice(&pick[n_signal..n_signal + n_shift - n_overlap]);

        let mut topic2 = topic1.clone();
        for &t in &shifted {
            let offset = rng.random_range(1..k) as u16;
            topic2[t] = (topic1[t] + offset) % k as u16;
        }
        let shifted: BTreeSet<usize> = shifted.into_iter().collect();
        let signal: BTreeSet<usize> = signal.into_iter().collect();

        let mut world = SynthWorld {
            spec: spec.clone(),
            terms,
            topic: [topic1, topic2],
            weight,
            shifted,
            signal,
            tables: Default::default(),
        };
        for r in 0..2 {
            for c in 0..2 {
                world.tables[r][c] = (0..k).map(|z| world.build_table(r, c == 1, z as u16)).collect();
            }
        }
        Ok(world)
    }

    fn build_table(&self, regime: usize, positive: bool, z: u16) -> (Vec<u32>, Vec<f64>) {
        let mut ids = Vec::new();
        let mut cum = Vec::new();
        let mut total = 0.0;
        for t in 0..self.terms.len() {
            if self.topic[regime][t] != z {
                continue;
            }
            let w = self.term_weight(t, regime, positive);
            total += w;
            ids.push(t as u32);
            cum.push(total);
        }
        cum.iter_mut().for_each(|c| *c /= total);
        (ids, cum)
    }

    fn term_weight(&self, t: usize, regime: usize, positive: bool) -> f64 {
        let shifted = self.shifted.contains(&t);
        let mut w = self.weight[t];
        if positive && self.signal.contains(&t) && !(regime == 1 && shifted) {
            w *= self.spec.signal_boost;
        }
        if regime == 1 && shifted {
            w *= self.spec.drift_boost;
        }
        w
    }

    /// Term probabilities of one topic under a regime and class.
    pub fn topic_distribution(&self, regime: Regime, positive: bool, topic: usize) -> Vec<(usize, f64)> {
        let (ids, cum) = &self.tables[regime as usize][usize::from(positive)][topic];
        let mut prev = 0.0;
        ids.iter()
            .zip(cum)
            .map(|(&t, &c)| {
                let p = c - prev;
                prev = c;
                (t as usize, p)
            })
            .collect()
    }

    pub fn topic_of(&self, term: usize, regime: Regime) -> usize {
        self.topic[regime as usize][term] as usize
    }

    /// One post's tokens from a given topic.
    pub fn sample_post(&self, rng: &mut impl Rng, regime: Regime, positive: bool, topic: usize, out: &mut Vec<u32>) {
        let (ids, cum) = &self.tables[regime as usize][usize::from(positive)][topic];
        out.clear();
        for _ in 0..self.spec.post_length {
            let u: f64 = rng.random();
            let i = cum.partition_point(|&c| c <= u).min(ids.len() - 1);
            out.push(ids[i]);
        }
    }

    fn mixture(&self, rng: &mut impl Rng) -> Vec<f64> {
        let gamma = Gamma::new(self.spec.topic_concentration, 1.0).expect("validated concentration");
        let mut theta: Vec<f64> = (0..self.spec.topics).map(|_| gamma.sample(rng)).collect();
        let s: f64 = theta.iter().sum();
        if s > 0.0 {
            theta.iter_mut().for_each(|x| *x /= s);
        } else {
            theta = vec![1.0 / self.spec.topics as f64; self.spec.topics];
        }
        let mut acc = 0.0;
        theta.iter_mut().for_each(|x| {
            acc += *x;
            *x = acc;
        });
        theta
    }

    /// Posts for a cohort of users, each posting `posts_per_user` times in
    /// every segment. Users keep their class and topic mixture across segments.
    pub fn sample(&self, cohort: &Cohort, segments: &[(Period, Regime)], seed_value: u64) -> Vec<Post> {
        let n = cohort.positives + cohort.negatives;
        let mut posts = Vec::with_capacity(n * cohort.posts_per_user * segments.len());
        let mut tokens = Vec::with_capacity(self.spec.post_length);
        for i in 0..n {
            let positive = i < cohort.positives;
            let user = format!("{}{:05}", cohort.prefix, i);
            let mut rng = seed::rng(seed::derive_indexed(seed_value, &cohort.prefix, i as u64));
            let cum = self.mixture(&mut rng);
            for (period, regime) in segments {
                for _ in 0..cohort.posts_per_user {
                    let u: f64 = rng.random();
                    let z = cum.partition_point(|&c| c <= u).min(self.spec.topics - 1);
                    self.sample_post(&mut rng, *regime, positive, z, &mut tokens);
                    let text = tokens.iter().map(|&t| self.terms[t as usize].as_str()).collect::<Vec<_>>().join(" ");
                    posts.push(Post {
                        user_id: user.clone(),
                        timestamp: rng.random_range(period.start..period.end),
                        text,
                        label: cohort.labelled.then_some(positive),
                        metadata: Default::default(),
                    });
                }
            }
        }
        posts
    }

    pub fn manifest(&self, labels: BTreeMap<String, bool>, periods: Vec<Period>) -> Manifest {
        let names = |set: &BTreeSet<usize>| {
            let mut v: Vec<String> = set.iter().map(|&t| self.terms[t].clone()).collect();
            v.sort();
            v
        };
        let mut terms = self.terms.clone();
        terms.sort();
        Manifest {
            spec: self.spec.clone(),
            terms,
            shifted: names(&self.shifted),
            signal: names(&self.signal),
            labels,
            periods,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub prefix: String,
    pub positives: usize,
    pub negatives: usize,
    pub posts_per_user: usize,
    pub labelled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpec,
    pub terms: Vec<String>,
    pub shifted: Vec<String>,
    pub signal: Vec<String>,
    pub labels: BTreeMap<String, bool>,
    pub periods: Vec<Period>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub posts: Vec<Post>,
    pub periods: Vec<Period>,
    pub manifest: Manifest,
}

impl SynthCorpus {
    pub fn store(&self) -> PostStore {
        PostStore::from_posts(self.posts.iter().cloned())
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for p in &self.posts {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `corpus.jsonl` and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cp = dir.join("corpus.jsonl");
        self.write_jsonl(BufWriter::new(File::create(&cp).map_err(|e| Error::io(&cp, e))?))?;
        let mp = dir.join("manifest.json");
        let f = File::create(&mp).map_err(|e| Error::io(&mp, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &self.manifest)?;
        Ok(())
    }
}

pub fn periods() -> Vec<Period> {
    vec![Period::new("P1", PERIOD1.0, PERIOD1.1), Period::new("P2", PERIOD2.0, PERIOD2.1)]
}

/// Labelled two-period corpus: the same users post in both periods, period 1
/// under the original topics and period 2 under the shifted ones.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    let world = SynthWorld::new(spec)?;
    let periods = periods();
    let cohort = Cohort {
        prefix: "u".into(),
        positives: spec.users_per_class,
        negatives: spec.users_per_class,
        posts_per_user: spec.posts_per_user,
        labelled: true,
    };
    let segments = [(periods[0].clone(), Regime::Before), (periods[1].clone(), Regime::After)];
    let posts = world.sample(&cohort, &segments, seed::derive(spec.seed, "synth-corpus"));
    let labels = labels_of(&posts);
    Ok(SynthCorpus {
        manifest: world.manifest(labels, periods.clone()),
        posts,
        periods,
    })
}

fn labels_of(posts: &[Post]) -> BTreeMap<String, bool> {
    posts.iter().filter_map(|p| p.label.map(|l| (p.user_id.clone(), l))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeploymentSpec {
    pub labelled_per_class: usize,
    pub unlabelled_users: usize,
    /// True positive share of the unlabelled population, equal in both periods.
    pub unlabelled_positive_share: f64,
    pub posts_per_user: usize,
}

impl Default for DeploymentSpec {
    fn default() -> Self {
        Self {
            labelled_per_class: 250,
            unlabelled_users: 1000,
            unlabelled_positive_share: 0.3,
            posts_per_user: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Deployment {
    /// Labelled users under the original regime, over one span.
    pub labelled: Vec<Post>,
    /// Unlabelled users posting in `pre` (original regime) and `during`
    /// (shifted regime).
    pub unlabelled: Vec<Post>,
    pub labelled_span: Period,
    pub pre: Period,
    pub during: Period,
    pub manifest: Manifest,
}

/// A deployment scenario: the true prevalence is the same in both unlabelled
/// periods, so any estimated change comes from the vocabulary.
pub fn deployment(spec: &SynthSpec, dep: &DeploymentSpec) -> Result<Deployment> {
    if !(0.0..=1.0).contains(&dep.unlabelled_positive_share) || dep.unlabelled_users == 0 || dep.labelled_per_class == 0 {
        return Err(Error::invalid("deployment spec", "needs users and a share in [0, 1]"));
    }
    let world = SynthWorld::new(spec)?;
    // 2018-03-01 .. 2019-03-01
    let labelled_span = Period::new("labelled", 1_519_862_400, PERIOD1.0);
    let pre = Period::new("pre", PERIOD1.0, PERIOD1.1);
    let during = Period::new("during", PERIOD2.0, PERIOD2.1);
    let labelled = world.sample(
        &Cohort {
            prefix: "l".into(),
            positives: dep.labelled_per_class,
            negatives: dep.labelled_per_class,
            posts_per_user: dep.posts_per_user,
            labelled: true,
        },
        &[(labelled_span.clone(), Regime::Before)],
        seed::derive(spec.seed, "deploy-labelled"),
    );
    let positives = (dep.unlabelled_positive_share * dep.unlabelled_users as f64).round() as usize;
    let unlabelled = world.sample(
        &Cohort {
            prefix: "x".into(),
            positives,
            negatives: dep.unlabelled_users - positives,
            posts_per_user: dep.posts_per_user,
            labelled: false,
        },
        &[(pre.clone(), Regime::Before), (during.clone(), Regime::After)],
        seed::derive(spec.seed, "deploy-unlabelled"),
    );
    let mut labels = labels_of(&labelled);
    for i in 0..dep.unlabelled_users {
        labels.insert(format!("x{i:05}"), i < positives);
    }
    Ok(Deployment {
        manifest: world.manifest(labels, vec![labelled_span.clone(), pre.clone(), during.clone()]),
        labelled,
        unlabelled,
        labelled_span,
        pre,
        during,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub auc: f64,
    pub shifted: usize,
    pub stable: usize,
}

/// Mann-Whitney AUC of `1 - S` separating shifted from unshifted manifest
/// terms (ties count one half).
pub fn auc(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = positives.iter().map(|&s| (s, true)).chain(negatives.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

pub fn evaluate_detector(manifest: &Manifest, table: &StabilityTable) -> Result<DetectorReport> {
    let scores = table.scores();
    let missing: Vec<String> = manifest.terms.iter().filter(|t| !scores.contains_key(*t)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::CoverageGap(missing));
    }
    let shifted: BTreeSet<&str> = manifest.shifted.iter().map(String::as_str).collect();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for t in &manifest.terms {
        let d = 1.0 - scores[t];
        if shifted.contains(t.as_str()) {
            pos.push(d);
        } else {
            neg.push(d);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Insufficient("detector evaluation needs shifted and unshifted terms".into()));
    }
    Ok(DetectorReport {
        auc: auc(&pos, &neg),
        shifted: pos.len(),
        stable: neg.len(),
    })
}

/// A random member of `items`, for callers that want a planted example term.
pub fn pick<T>(items: &[T], seed_value: u64) -> Option<&T> {
    items.choose(&mut seed::rng(seed_value))
}
