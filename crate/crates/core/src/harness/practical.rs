use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stats::{mean, std_dev};
use super::{
    apply_window, audit, csv_row, draw_balanced, eligible, fit_all, fit_selection, fmt_opt, learn_window, needs_model, needs_table, run_pool, stratified_split,
    test_f1, users_dtm, PlatformProfile, Role, SubsetAudit, WindowData,
};
use crate::corpus::{DocumentTermMatrix, Period, PhraseConfig, PostStore};
use crate::embed::EmbedConfig;
use crate::model::{ClassifierConfig, CvConfig};
use crate::monitor::{estimate_prevalence, prevalence_change};
use crate::seed;
use crate::select::{Method, SelectedVocabulary, SelectionInputs, FREQ_FLOOR, PERCENTILES};
use crate::shift::{neighbor_diff, stability_table, NeighborDiff, ShiftParams, StabilityTable};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selection {
    pub method: Method,
    pub p: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PracticalPlan {
    pub dataset: String,
    pub labelled_span: Period,
    pub unlabelled_span: Period,
    pub pre: Period,
    pub during: Period,
    /// Embedding models fitted on labelled user subsets.
    pub outer_repeats: usize,
    /// Classifier resamples per embedding model.
    pub inner_repeats: usize,
    pub train_fraction: f64,
    /// Share of unlabelled posts sampled for each unlabelled embedding.
    pub unlabelled_post_fraction: f64,
    pub resample_fraction: f64,
    pub profile: PlatformProfile,
    pub min_posts: Option<usize>,
    /// Posts a user needs in `pre` or `during` to count towards prevalence;
    /// defaults to the labelled threshold.
    pub prevalence_min_posts: Option<u32>,
    pub methods: Vec<Method>,
    pub percentiles: Vec<u32>,
    pub floor: u64,
    pub learn_phrases: bool,
    pub phrases: PhraseConfig,
    pub embed: EmbedConfig,
    pub shift: ShiftParams,
    pub classifier: ClassifierConfig,
    pub reference: Selection,
    pub candidate: Selection,
    /// Smallest gap in prevalence change (as a proportion) that is reported.
    pub sensitivity_floor: f64,
    /// Largest held-out F1 gap still counted as indistinguishable.
    pub f1_tolerance: f64,
    /// Most-shifted unlabelled terms reported with neighbour differences.
    pub report_terms: usize,
    pub report_neighbors: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for PracticalPlan {
    fn default() -> Self {
        // 2019-01-01 .. 2020-07-01, with March to June of each year.
        Self {
            dataset: "dataset".into(),
            labelled_span: Period::new("labelled", i64::MIN / 2, i64::MAX / 2),
            unlabelled_span: Period::new("full", 1_546_300_800, 1_593_561_600),
            pre: Period::new("pre", 1_551_398_400, 1_561_939_200),
            during: Period::new("during", 1_583_020_800, 1_593_561_600),
            outer_repeats: 10,
            inner_repeats: 3,
            train_fraction: 0.8,
            unlabelled_post_fraction: 0.2,
            resample_fraction: 0.8,
            profile: PlatformProfile::Twitter,
            min_posts: None,
            prevalence_min_posts: None,
            methods: Method::ALL.to_vec(),
            percentiles: PERCENTILES.to_vec(),
            floor: FREQ_FLOOR,
            learn_phrases: true,
            phrases: PhraseConfig::default(),
            embed: EmbedConfig::default(),
            shift: ShiftParams::default(),
            classifier: ClassifierConfig::default(),
            reference: Selection {
                method: Method::Cumulative,
                p: 100,
            },
            candidate: Selection {
                method: Method::Overlap,
                p: 50,
            },
            sensitivity_floor: 0.05,
            f1_tolerance: 0.01,
            report_terms: 20,
            report_neighbors: 10,
            seed: 1,
            workers: 1,
        }
    }
}

impl PracticalPlan {
    pub fn full_scale(mut self) -> Self {
        self.outer_repeats = 10;
        self.inner_repeats = 10;
        self
    }

    pub fn min_posts(&self) -> usize {
        self.min_posts.unwrap_or_else(|| self.profile.min_posts())
    }

    pub fn prevalence_min_posts(&self) -> u32 {
        self.prevalence_min_posts.unwrap_or(self.min_posts() as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: &str| Err(Error::invalid("practical plan", d));
        if self.outer_repeats < 1 || self.inner_repeats < 1 {
            return bad("repeats must be >= 1");
        }
        for f in [self.train_fraction, self.unlabelled_post_fraction, self.resample_fraction] {
            if !(f > 0.0 && f <= 1.0) {
                return bad("fractions must lie in (0, 1]");
            }
        }
        if self.train_fraction >= 1.0 {
            return bad("train_fraction must leave held-out users");
        }
        for w in [&self.labelled_span, &self.unlabelled_span, &self.pre, &self.during] {
            if w.start >= w.end {
                return Err(Error::invalid("practical plan", format!("window `{}` is empty or reversed", w.name)));
            }
        }
        let inside = |w: &Period| self.unlabelled_span.start <= w.start && w.end <= self.unlabelled_span.end;
        if !inside(&self.pre) || !inside(&self.during) || self.pre.end > self.during.start {
            return bad("pre and during must be ordered and lie inside the unlabelled span");
        }
        if self.methods.is_empty() || self.percentiles.is_empty() {
            return bad("needs at least one method and one percentile");
        }
        for s in [self.reference, self.candidate] {
            if !self.methods.contains(&s.method) || !self.percentiles.contains(&s.p) {
                return Err(Error::invalid(
                    "practical plan",
                    format!("{} at p = {} is not part of the sweep", s.method, s.p),
                ));
            }
        }
        if !(self.sensitivity_floor >= 0.0 && self.f1_tolerance >= 0.0) {
            return bad("sensitivity floor and F1 tolerance must be >= 0");
        }
        self.embed.validate()?;
        self.shift.validate()?;
        self.classifier.cv.validate()?;
        self.phrases.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PracticalRecord {
    pub outer: usize,
    pub inner: usize,
    pub method: Method,
    pub p: u32,
    /// Held-out F1 on the labelled span.
    pub f1: f64,
    pub prevalence_pre: f64,
    pub prevalence_during: f64,
    pub change_absolute: f64,
    pub change_relative: Option<f64>,
    pub chosen_c: f64,
    pub vocab_size: usize,
    pub vocab_hash: String,
}

/// One point of the prevalence-vs-vocabulary and F1-vs-vocabulary curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PracticalCurve {
    pub method: Method,
    pub p: u32,
    pub n: usize,
    pub f1_mean: f64,
    pub f1_sd: f64,
    pub change_mean: f64,
    pub change_sd: f64,
    pub prevalence_pre_mean: f64,
    pub prevalence_during_mean: f64,
}

/// Held-out F1 and prevalence change of two vocabularies, paired over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub reference: Selection,
    pub candidate: Selection,
    pub f1_reference: f64,
    pub f1_candidate: f64,
    pub f1_gap: f64,
    pub change_reference: f64,
    pub change_candidate: f64,
    pub change_gap: f64,
    /// Largest minus smallest mean F1 over every swept vocabulary.
    pub f1_spread_all: f64,
    pub sensitivity_floor: f64,
    pub f1_tolerance: f64,
    /// Similar held-out F1, materially different prevalence change.
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PracticalOutput {
    pub plan: PracticalPlan,
    pub records: Vec<PracticalRecord>,
    pub audits: Vec<SubsetAudit>,
    pub eligible_pre: usize,
    pub eligible_during: usize,
    /// Lowest-stability terms between the unlabelled pre and during periods.
    pub shifted_terms: Vec<NeighborDiff>,
}

struct Unlabelled {
    full: WindowData,
    pre: DocumentTermMatrix,
    during: DocumentTermMatrix,
    shifted_terms: Vec<NeighborDiff>,
}

fn sampled(store: &PostStore, period: &Period, fraction: f64, seed_value: u64) -> PostStore {
    let mut rng = seed::rng(seed_value);
    store.retain_posts(|p| period.contains(p.timestamp) && rng.random::<f64>() < fraction)
}

fn prepare_unlabelled(store: &PostStore, plan: &PracticalPlan) -> Result<Unlabelled> {
    for w in [&plan.pre, &plan.during] {
        if !store.iter_posts().any(|p| w.contains(p.timestamp)) {
            return Err(Error::Insufficient(format!(
                "the unlabelled corpus has no posts in `{}` [{}, {})",
                w.name, w.start, w.end
            )));
        }
    }
    let mut spaces = Vec::with_capacity(3);
    for (i, w) in [&plan.unlabelled_span, &plan.pre, &plan.during].into_iter().enumerate() {
        let sample = sampled(
            store,
            w,
            plan.unlabelled_post_fraction,
            seed::derive_indexed(plan.seed, "unlabelled-sample", i as u64),
        );
        let embed = EmbedConfig {
            seed: seed::derive_indexed(plan.seed, "unlabelled-embed", i as u64),
            ..plan.embed.clone()
        };
        spaces.push(learn_window(&sample, w, plan.learn_phrases.then_some(&plan.phrases), &embed)?);
    }
    let full = spaces.remove(0);
    let pre_slice = apply_window(store, &plan.pre, full.phrases.as_ref())?;
    let during_slice = apply_window(store, &plan.during, full.phrases.as_ref())?;
    let vocab = full.space.vocab().clone();
    let users = |s: &crate::corpus::PeriodSlice| s.users.keys().cloned().collect::<Vec<_>>();
    let pre = users_dtm(&pre_slice, &users(&pre_slice), vocab.clone());
    let during = users_dtm(&during_slice, &users(&during_slice), vocab);

    let mut shifted_terms = Vec::new();
    if plan.report_terms > 0 {
        match stability_table(&spaces[0].space, &spaces[1].space, &plan.shift) {
            Ok(table) => {
                for rec in table.records.iter().take(plan.report_terms) {
                    shifted_terms.push(neighbor_diff(
                        &spaces[0].space,
                        &spaces[1].space,
                        &rec.term,
                        plan.report_neighbors,
                        &plan.shift,
                    )?);
                }
            }
            Err(e) => log::warn!("no pre/during stability report: {e}"),
        }
    }
    Ok(Unlabelled {
        full,
        pre,
        during,
        shifted_terms,
    })
}

/// Classifiers for every (method, p) over repeated labelled subsets, each
/// scored by held-out F1 and by the prevalence change it implies on the
/// unlabelled corpus.
pub fn run_practical(labelled: &PostStore, unlabelled: &PostStore, plan: &PracticalPlan) -> Result<PracticalOutput> {
    plan.validate()?;
    let users: Vec<(String, bool)> = labelled.users().filter_map(|(u, _)| labelled.label(u).map(|l| (u.to_string(), l))).collect();
    if users.is_empty() {
        return Err(Error::Insufficient("the labelled corpus has no labelled users".into()));
    }
    let un = prepare_unlabelled(unlabelled, plan)?;
    let min_prev = plan.prevalence_min_posts();
    let count = |d: &DocumentTermMatrix| d.post_counts().map_or(0, |pc| pc.iter().filter(|&&c| c >= min_prev).count());
    let (eligible_pre, eligible_during) = (count(&un.pre), count(&un.during));
    if eligible_pre == 0 || eligible_during == 0 {
        return Err(Error::Insufficient(format!(
            "no unlabelled users reach {min_prev} posts in both `{}` and `{}`",
            plan.pre.name, plan.during.name
        )));
    }
    let parts = run_pool(plan.outer_repeats, plan.workers, |o| run_outer(labelled, plan, &users, &un, o))?;
    let mut records = Vec::new();
    let mut audits = Vec::new();
    for (r, a) in parts {
        records.extend(r);
        audits.extend(a);
    }
    records.sort_by(|a, b| (a.method, a.p, a.outer, a.inner).cmp(&(b.method, b.p, b.outer, b.inner)));
    Ok(PracticalOutput {
        plan: plan.clone(),
        records,
        audits,
        eligible_pre,
        eligible_during,
        shifted_terms: un.shifted_terms,
    })
}

fn run_outer(store: &PostStore, plan: &PracticalPlan, users: &[(String, bool)], un: &Unlabelled, o: usize) -> Result<(Vec<PracticalRecord>, Vec<SubsetAudit>)> {
    let oseed = seed::derive_indexed(plan.seed, "outer", o as u64);
    let (train_users, test_users) = stratified_split(users, 1.0 - plan.train_fraction, &mut seed::rng(seed::derive(oseed, "split")))?;
    let train_set: BTreeSet<&str> = train_users.iter().map(String::as_str).collect();
    let test_set: BTreeSet<&str> = test_users.iter().map(String::as_str).collect();
    let train_store = store.restrict_users(train_users.iter().map(String::as_str));
    let test_store = store.restrict_users(test_users.iter().map(String::as_str));
    let embed = EmbedConfig {
        seed: seed::derive(oseed, "embed"),
        ..plan.embed.clone()
    };
    let lab = learn_window(&train_store, &plan.labelled_span, plan.learn_phrases.then_some(&plan.phrases), &embed)?;
    let test_slice = apply_window(&test_store, &plan.labelled_span, lab.phrases.as_ref())?;
    let table: Option<StabilityTable> = if needs_table(&plan.methods) {
        Some(stability_table(&lab.space, &un.full.space, &plan.shift)?)
    } else {
        None
    };
    let min_posts = plan.min_posts();
    let min_prev = plan.prevalence_min_posts();
    let mut audits = vec![audit(
        &lab.slice,
        &lab.slice.users.keys().cloned().collect::<Vec<_>>(),
        &test_set,
        (o, None),
        Role::Embedding,
    )];
    let mut records = Vec::new();

    for j in 0..plan.inner_repeats {
        let iseed = seed::derive_indexed(oseed, "inner", j as u64);
        let mut rng = seed::rng(iseed);
        let (pos, neg) = eligible(&lab.slice, &train_set, min_posts);
        let per_class = (plan.resample_fraction * pos.len().min(neg.len()) as f64).floor() as usize;
        if per_class < 2 {
            return Err(Error::Insufficient(format!(
                "class balance cannot be met: {} positive and {} negative training users with >= {min_posts} posts",
                pos.len(),
                neg.len()
            )));
        }
        let train_sample = draw_balanced(&pos, &neg, per_class, &mut rng);
        let (tpos, tneg) = eligible(&test_slice, &test_set, min_posts);
        let test_per_class = (plan.resample_fraction * tpos.len().min(tneg.len()) as f64).floor() as usize;
        if test_per_class < 1 {
            return Err(Error::Insufficient(format!(
                "class balance cannot be met: {} positive and {} negative held-out users with >= {min_posts} posts",
                tpos.len(),
                tneg.len()
            )));
        }
        let test_sample = draw_balanced(&tpos, &tneg, test_per_class, &mut rng);
        audits.push(audit(&lab.slice, &train_sample, &test_set, (o, Some(j)), Role::Train));
        audits.push(audit(&test_slice, &test_sample, &train_set, (o, Some(j)), Role::Test));

        let source = lab.space.vocab();
        let train = users_dtm(&lab.slice, &train_sample, source.clone());
        let test = users_dtm(&test_slice, &test_sample, source.clone());
        let cfg = ClassifierConfig {
            cv: CvConfig {
                seed: seed::derive(iseed, "cv"),
                ..plan.classifier.cv.clone()
            },
            ..plan.classifier.clone()
        };
        let mut inputs = SelectionInputs {
            source,
            target: un.full.space.vocab(),
            floor: plan.floor,
            labelled: Some(&train),
            model: None,
            table: table.as_ref(),
            seed: seed::derive(iseed, "random-selection"),
        };
        let coef = if needs_model(&plan.methods) {
            let base = inputs.intersection();
            let all = SelectedVocabulary {
                method: Method::Intersection,
                p: 100,
                terms: base.into_iter().collect(),
            };
            Some(fit_selection(&train, &all, source, &cfg)?.model)
        } else {
            None
        };
        inputs.model = coef.as_ref();
        fit_all(&inputs, &plan.methods, &plan.percentiles, &train, &cfg, |method, p, fitted| {
            let pre = estimate_prevalence(&fitted.model, &un.pre, min_prev, &plan.pre.name)?;
            let during = estimate_prevalence(&fitted.model, &un.during, min_prev, &plan.during.name)?;
            let change = prevalence_change(&pre, &during);
            records.push(PracticalRecord {
                outer: o,
                inner: j,
                method,
                p,
                f1: test_f1(&fitted.model, &test)?,
                prevalence_pre: pre.prevalence,
                prevalence_during: during.prevalence,
                change_absolute: change.absolute,
                change_relative: change.relative,
                chosen_c: fitted.model.c,
                vocab_size: fitted.model.n_features(),
                vocab_hash: fitted.hash.clone(),
            });
            Ok(())
        })?;
    }
    Ok((records, audits))
}

impl PracticalOutput {
    pub fn curves(&self) -> Vec<PracticalCurve> {
        let mut groups: BTreeMap<(Method, u32), Vec<&PracticalRecord>> = BTreeMap::new();
        for r in &self.records {
            groups.entry((r.method, r.p)).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|((method, p), rs)| {
                let f1: Vec<f64> = rs.iter().map(|r| r.f1).collect();
                let ch: Vec<f64> = rs.iter().map(|r| r.change_absolute).collect();
                PracticalCurve {
                    method,
                    p,
                    n: rs.len(),
                    f1_mean: mean(&f1),
                    f1_sd: std_dev(&f1),
                    change_mean: mean(&ch),
                    change_sd: std_dev(&ch),
                    prevalence_pre_mean: mean(&rs.iter().map(|r| r.prevalence_pre).collect::<Vec<_>>()),
                    prevalence_during_mean: mean(&rs.iter().map(|r| r.prevalence_during).collect::<Vec<_>>()),
                }
            })
            .collect()
    }

    pub fn divergence(&self) -> Divergence {
        let plan = &self.plan;
        let pick = |s: Selection| -> BTreeMap<(usize, usize), (f64, f64)> {
            self.records
                .iter()
                .filter(|r| r.method == s.method && r.p == s.p)
                .map(|r| ((r.outer, r.inner), (r.f1, r.change_absolute)))
                .collect()
        };
        let (a, b) = (pick(plan.reference), pick(plan.candidate));
        let keys: Vec<&(usize, usize)> = a.keys().filter(|k| b.contains_key(k)).collect();
        let col = |m: &BTreeMap<(usize, usize), (f64, f64)>, f: fn(&(f64, f64)) -> f64| mean(&keys.iter().map(|k| f(&m[k])).collect::<Vec<_>>());
        let f1_reference = col(&a, |x| x.0);
        let f1_candidate = col(&b, |x| x.0);
        let change_reference = col(&a, |x| x.1);
        let change_candidate = col(&b, |x| x.1);
        let curves = self.curves();
        let f1_spread_all = curves.iter().map(|c| c.f1_mean).fold(f64::NEG_INFINITY, f64::max) - curves.iter().map(|c| c.f1_mean).fold(f64::INFINITY, f64::min);
        let f1_gap = f1_candidate - f1_reference;
        let change_gap = change_candidate - change_reference;
        Divergence {
            reference: plan.reference,
            candidate: plan.candidate,
            f1_reference,
            f1_candidate,
            f1_gap,
            change_reference,
            change_candidate,
            change_gap,
            f1_spread_all,
            sensitivity_floor: plan.sensitivity_floor,
            f1_tolerance: plan.f1_tolerance,
            detected: f1_gap.abs() < plan.f1_tolerance && change_gap.abs() >= plan.sensitivity_floor,
        }
    }

    pub fn write_records_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "dataset,outer,inner,method,p,f1,prevalence_pre,prevalence_during,change_absolute,change_relative,chosen_c,vocab_size,vocab_hash"
        )?;
        for r in &self.records {
            csv_row(
                &mut w,
                &[
                    self.plan.dataset.clone(),
                    r.outer.to_string(),
                    r.inner.to_string(),
                    r.method.to_string(),
                    r.p.to_string(),
                    r.f1.to_string(),
                    r.prevalence_pre.to_string(),
                    r.prevalence_during.to_string(),
                    r.change_absolute.to_string(),
                    fmt_opt(r.change_relative),
                    r.chosen_c.to_string(),
                    r.vocab_size.to_string(),
                    r.vocab_hash.clone(),
                ],
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Curves, the divergence report and the shifted-term neighbour lists.
    pub fn curves_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Bundle<'a> {
            dataset: &'a str,
            curves: Vec<PracticalCurve>,
            divergence: Divergence,
            eligible_pre: usize,
            eligible_during: usize,
            shifted_terms: &'a [NeighborDiff],
        }
        Ok(serde_json::to_string_pretty(&Bundle {
            dataset: &self.plan.dataset,
            curves: self.curves(),
            divergence: self.divergence(),
            eligible_pre: self.eligible_pre,
            eligible_during: self.eligible_during,
            shifted_terms: &self.shifted_terms,
        })?)
    }
}
