use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::stats::{bootstrap_ci, mean, std_dev};
use super::{
    apply_window, audit, csv_row, draw_balanced, eligible, fit_all, fit_selection, fmt_opt, learn_window, needs_model, needs_table, run_pool, stratified_split,
    test_f1, users_dtm, Grouped, PlatformProfile, Role, SubsetAudit,
};
use crate::corpus::{Period, PeriodSlice, PhraseConfig, PostStore};
use crate::embed::EmbedConfig;
use crate::model::ClassifierConfig;
use crate::seed;
use crate::select::{Method, SelectedVocabulary, SelectionInputs, FREQ_FLOOR, PERCENTILES};
use crate::shift::{stability_table, ShiftParams, StabilityTable};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub dataset: String,
    /// Historical accumulations a classifier is trained on.
    pub train_windows: Vec<Period>,
    /// Future windows; each is paired with every training window ending at or
    /// before its start.
    pub test_windows: Vec<Period>,
    pub outer_repeats: usize,
    pub inner_repeats: usize,
    pub profile: PlatformProfile,
    /// Overrides the profile's per-window post threshold.
    pub min_posts: Option<usize>,
    pub test_fraction: f64,
    /// Share of the smaller class drawn (per class) in each resample.
    pub resample_fraction: f64,
    pub methods: Vec<Method>,
    pub percentiles: Vec<u32>,
    pub floor: u64,
    pub learn_phrases: bool,
    pub phrases: PhraseConfig,
    pub embed: EmbedConfig,
    pub shift: ShiftParams,
    pub classifier: ClassifierConfig,
    pub bootstrap_resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            dataset: "dataset".into(),
            train_windows: Vec::new(),
            test_windows: Vec::new(),
            outer_repeats: 10,
            inner_repeats: 3,
            profile: PlatformProfile::Twitter,
            min_posts: None,
            test_fraction: 0.2,
            resample_fraction: 0.8,
            methods: Method::ALL.to_vec(),
            percentiles: PERCENTILES.to_vec(),
            floor: FREQ_FLOOR,
            learn_phrases: true,
            phrases: PhraseConfig::default(),
            embed: EmbedConfig::default(),
            shift: ShiftParams::default(),
            classifier: ClassifierConfig::default(),
            bootstrap_resamples: 1000,
            alpha: 0.05,
            seed: 1,
            workers: 1,
        }
    }
}

impl ExperimentPlan {
    /// Full repeat counts (100 outer, 10 inner).
    pub fn full_scale(mut self) -> Self {
        self.outer_repeats = 100;
        self.inner_repeats = 10;
        self
    }

    pub fn min_posts(&self) -> usize {
        self.min_posts.unwrap_or_else(|| self.profile.min_posts())
    }

    /// (train index, test index) for every evaluated pair.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (t, tw) in self.train_windows.iter().enumerate() {
            for (e, ew) in self.test_windows.iter().enumerate() {
                if ew.start >= tw.end {
                    out.push((t, e));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("experiment plan", d));
        if self.train_windows.is_empty() || self.test_windows.is_empty() {
            return bad("needs at least one training and one test window".into());
        }
        if self.outer_repeats < 1 || self.inner_repeats < 1 {
            return bad("repeats must be >= 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) || !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return bad("test_fraction must lie in (0, 1) and resample_fraction in (0, 1]".into());
        }
        if self.methods.is_empty() || self.percentiles.is_empty() {
            return bad("needs at least one method and one percentile".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)".into());
        }
        let mut names = BTreeSet::new();
        for w in self.train_windows.iter().chain(&self.test_windows) {
            if w.start >= w.end {
                return bad(format!("window `{}` is empty or reversed", w.name));
            }
            if !names.insert(w.name.as_str()) {
                return bad(format!("duplicate window name `{}`", w.name));
            }
        }
        for ws in [&self.train_windows, &self.test_windows] {
            if ws.windows(2).any(|p| (p[0].start, p[0].end) > (p[1].start, p[1].end)) {
                return bad("windows must be listed in time order".into());
            }
        }
        for tw in &self.train_windows {
            if !self.test_windows.iter().any(|e| e.start >= tw.end) {
                return bad(format!("no test window starts after training window `{}` ends", tw.name));
            }
        }
        self.embed.validate()?;
        self.shift.validate()?;
        self.classifier.cv.validate()?;
        self.phrases.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub outer: usize,
    pub inner: usize,
    pub train_window: String,
    pub test_window: String,
    pub method: Method,
    pub p: u32,
    pub split_seed: u64,
    pub cv_seed: u64,
    pub f1_test: f64,
    /// Cross-validated F1 at the chosen C on the training window.
    pub f1_dev: Option<f64>,
    pub chosen_c: f64,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub train_window: String,
    pub test_window: String,
    pub method: Method,
    pub p: u32,
    pub n: usize,
    pub f1_mean: f64,
    pub f1_sd: f64,
    pub f1_dev_mean: Option<f64>,
}

/// A method at its best vocabulary size for one window pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCell {
    pub train_window: String,
    pub test_window: String,
    pub method: Method,
    pub best_p: u32,
    pub f1_mean: f64,
    pub f1_sd: f64,
    pub n: usize,
    /// Paired mean difference against Cumulative, with its bootstrap interval.
    pub delta_vs_cumulative: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// Interval excludes zero and the difference is positive.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationOutput {
    pub plan: ExperimentPlan,
    pub records: Vec<RunRecord>,
    pub audits: Vec<SubsetAudit>,
}

struct OuterState {
    train_users: Vec<String>,
    test_users: Vec<String>,
    /// Per window (train windows, then test windows): training-side data.
    windows: Vec<super::WindowData>,
    test_slices: Vec<PeriodSlice>,
    tables: BTreeMap<(usize, usize), StabilityTable>,
}

/// Trains and evaluates every (method, p) classifier for every repeat and
/// window pair.
pub fn run_generalization(store: &PostStore, plan: &ExperimentPlan) -> Result<GeneralizationOutput> {
    plan.validate()?;
    let labelled: Vec<(String, bool)> = store.users().filter_map(|(u, _)| store.label(u).map(|l| (u.to_string(), l))).collect();
    if labelled.is_empty() {
        return Err(Error::Insufficient("the corpus has no labelled users".into()));
    }
    let parts = run_pool(plan.outer_repeats, plan.workers, |o| run_outer(store, plan, &labelled, o))?;
    let mut records = Vec::new();
    let mut audits = Vec::new();
    for (r, a) in parts {
        records.extend(r);
        audits.extend(a);
    }
    let window_pos = |name: &str| plan.train_windows.iter().chain(&plan.test_windows).position(|w| w.name == name);
    records.sort_by(|a, b| {
        (window_pos(&a.train_window), window_pos(&a.test_window), a.method, a.p, a.outer, a.inner).cmp(&(
            window_pos(&b.train_window),
            window_pos(&b.test_window),
            b.method,
            b.p,
            b.outer,
            b.inner,
        ))
    });
    Ok(GeneralizationOutput {
        plan: plan.clone(),
        records,
        audits,
    })
}

fn prepare_outer(store: &PostStore, plan: &ExperimentPlan, labelled: &[(String, bool)], o: usize) -> Result<OuterState> {
    let oseed = seed::derive_indexed(plan.seed, "outer", o as u64);
    let (train_users, test_users) = stratified_split(labelled, plan.test_fraction, &mut seed::rng(seed::derive(oseed, "split")))?;
    let train_store = store.restrict_users(train_users.iter().map(String::as_str));
    let test_store = store.restrict_users(test_users.iter().map(String::as_str));
    let all: Vec<&Period> = plan.train_windows.iter().chain(&plan.test_windows).collect();
    let mut windows = Vec::with_capacity(all.len());
    for (i, w) in all.iter().enumerate() {
        let embed = EmbedConfig {
            seed: seed::derive_indexed(oseed, "embed", i as u64),
            ..plan.embed.clone()
        };
        windows.push(learn_window(&train_store, w, plan.learn_phrases.then_some(&plan.phrases), &embed)?);
    }
    let nt = plan.train_windows.len();
    let test_slices = plan
        .test_windows
        .iter()
        .enumerate()
        .map(|(e, w)| apply_window(&test_store, w, windows[nt + e].phrases.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut tables = BTreeMap::new();
    if needs_table(&plan.methods) {
        for (t, e) in plan.pairs() {
            tables.insert((t, e), stability_table(&windows[t].space, &windows[nt + e].space, &plan.shift)?);
        }
    }
    Ok(OuterState {
        train_users,
        test_users,
        windows,
        test_slices,
        tables,
    })
}

fn run_outer(store: &PostStore, plan: &ExperimentPlan, labelled: &[(String, bool)], o: usize) -> Result<(Vec<RunRecord>, Vec<SubsetAudit>)> {
    let st = prepare_outer(store, plan, labelled, o)?;
    let oseed = seed::derive_indexed(plan.seed, "outer", o as u64);
    let train_set: BTreeSet<&str> = st.train_users.iter().map(String::as_str).collect();
    let test_set: BTreeSet<&str> = st.test_users.iter().map(String::as_str).collect();
    let nt = plan.train_windows.len();
    let min_posts = plan.min_posts();
    let mut records = Vec::new();
    let mut audits = Vec::new();

    for (i, w) in st.windows.iter().enumerate() {
        let users: Vec<String> = w.slice.users.keys().cloned().collect();
        audits.push(audit(&w.slice, &users, &test_set, (o, None), Role::Embedding));
        debug_assert!(i < nt + plan.test_windows.len());
    }

    for j in 0..plan.inner_repeats {
        let iseed = seed::derive_indexed(oseed, "inner", j as u64);
        let mut rng = seed::rng(iseed);

        let pools: Vec<(Vec<String>, Vec<String>)> = (0..nt).map(|t| eligible(&st.windows[t].slice, &train_set, min_posts)).collect();
        let mut per_class = usize::MAX;
        let mut binding = String::new();
        for (t, (pos, neg)) in pools.iter().enumerate() {
            let n = (plan.resample_fraction * pos.len().min(neg.len()) as f64).floor() as usize;
            if n < per_class {
                per_class = n;
                let class = if pos.len() <= neg.len() { "positive" } else { "negative" };
                binding = format!(
                    "training window `{}` has {} {class} training users with >= {min_posts} posts",
                    plan.train_windows[t].name,
                    pos.len().min(neg.len())
                );
            }
        }
        if per_class < 2 {
            return Err(Error::Insufficient(format!("class balance cannot be met: {binding}")));
        }
        let train_samples: Vec<Vec<String>> = pools.iter().map(|(p, n)| draw_balanced(p, n, per_class, &mut rng)).collect();

        let mut test_samples = Vec::with_capacity(plan.test_windows.len());
        for (e, slice) in st.test_slices.iter().enumerate() {
            let (pos, neg) = eligible(slice, &test_set, min_posts);
            let n = (plan.resample_fraction * pos.len().min(neg.len()) as f64).floor() as usize;
            if n < 1 {
                return Err(Error::Insufficient(format!(
                    "class balance cannot be met: test window `{}` has {} positive and {} negative test users with >= {min_posts} posts",
                    plan.test_windows[e].name,
                    pos.len(),
                    neg.len()
                )));
            }
            test_samples.push(draw_balanced(&pos, &neg, n, &mut rng));
        }
        for (t, s) in train_samples.iter().enumerate() {
            audits.push(audit(&st.windows[t].slice, s, &test_set, (o, Some(j)), Role::Train));
        }
        for (e, s) in test_samples.iter().enumerate() {
            audits.push(audit(&st.test_slices[e], s, &train_set, (o, Some(j)), Role::Test));
        }

        let cv_seed = seed::derive(iseed, "cv");
        let cfg = ClassifierConfig {
            cv: crate::model::CvConfig {
                seed: cv_seed,
                ..plan.classifier.cv.clone()
            },
            ..plan.classifier.clone()
        };
        for (t, e) in plan.pairs() {
            let src = &st.windows[t];
            let tgt = &st.windows[nt + e];
            let source = src.space.vocab();
            let train = users_dtm(&src.slice, &train_samples[t], source.clone());
            let test = users_dtm(&st.test_slices[e], &test_samples[e], source.clone());
            let mut inputs = SelectionInputs {
                source,
                target: tgt.space.vocab(),
                floor: plan.floor,
                labelled: Some(&train),
                model: None,
                table: st.tables.get(&(t, e)),
                seed: seed::derive(iseed, "random-selection"),
            };
            let base = inputs.intersection();
            if base.is_empty() {
                return Err(Error::Insufficient(format!(
                    "no term exceeds the frequency floor in both `{}` and `{}`",
                    plan.train_windows[t].name, plan.test_windows[e].name
                )));
            }
            let coef = if needs_model(&plan.methods) {
                let all = SelectedVocabulary {
                    method: Method::Intersection,
                    p: 100,
                    terms: base.iter().cloned().collect(),
                };
                Some(fit_selection(&train, &all, source, &cfg)?.model)
            } else {
                None
            };
            inputs.model = coef.as_ref();
            fit_all(&inputs, &plan.methods, &plan.percentiles, &train, &cfg, |method, p, fitted| {
                records.push(RunRecord {
                    dataset: plan.dataset.clone(),
                    outer: o,
                    inner: j,
                    train_window: plan.train_windows[t].name.clone(),
                    test_window: plan.test_windows[e].name.clone(),
                    method,
                    p,
                    split_seed: oseed,
                    cv_seed,
                    f1_test: test_f1(&fitted.model, &test)?,
                    f1_dev: fitted.dev_f1,
                    chosen_c: fitted.model.c,
                    vocab_size: fitted.model.n_features(),
                    vocab_hash: fitted.hash.clone(),
                    n_train: train.n_rows(),
                    n_test: test.n_rows(),
                });
                Ok(())
            })?;
        }
    }
    Ok((records, audits))
}

type CellKey = (String, String, Method, u32);

impl GeneralizationOutput {
    fn grouped(&self) -> (Grouped<CellKey>, Grouped<CellKey>) {
        let mut test: Grouped<CellKey> = BTreeMap::new();
        let mut dev: Grouped<CellKey> = BTreeMap::new();
        for r in &self.records {
            let key = (r.train_window.clone(), r.test_window.clone(), r.method, r.p);
            test.entry(key.clone()).or_default().push(r.f1_test);
            if let Some(d) = r.f1_dev {
                dev.entry(key).or_default().push(d);
            }
        }
        (test, dev)
    }

    /// Mean and standard deviation of test F1 per (pair, method, p).
    pub fn summary(&self) -> Vec<CellSummary> {
        let (test, dev) = self.grouped();
        test.into_iter()
            .map(|(k, xs)| CellSummary {
                f1_dev_mean: dev.get(&k).map(|d| mean(d)),
                train_window: k.0,
                test_window: k.1,
                method: k.2,
                p: k.3,
                n: xs.len(),
                f1_mean: mean(&xs),
                f1_sd: std_dev(&xs),
            })
            .collect()
    }

    /// Test F1 of one cell keyed by (outer, inner).
    fn paired(&self, train: &str, test: &str, method: Method, p: u32) -> BTreeMap<(usize, usize), f64> {
        self.records
            .iter()
            .filter(|r| r.train_window == train && r.test_window == test && r.method == method && r.p == p)
            .map(|r| ((r.outer, r.inner), r.f1_test))
            .collect()
    }

    /// Each method at its best p (ties to the smaller p), compared with
    /// Cumulative by a paired bootstrap over repeats.
    pub fn best(&self) -> Vec<BestCell> {
        let summary = self.summary();
        let mut best: BTreeMap<(String, String, Method), &CellSummary> = BTreeMap::new();
        for c in &summary {
            let key = (c.train_window.clone(), c.test_window.clone(), c.method);
            match best.get(&key) {
                Some(b) if b.f1_mean >= c.f1_mean => {}
                _ => {
                    best.insert(key, c);
                }
            }
        }
        best.into_iter()
            .map(|((tw, ew, method), c)| {
                let mut cell = BestCell {
                    train_window: tw.clone(),
                    test_window: ew.clone(),
                    method,
                    best_p: c.p,
                    f1_mean: c.f1_mean,
                    f1_sd: c.f1_sd,
                    n: c.n,
                    delta_vs_cumulative: None,
                    ci: None,
                    significant: false,
                };
                let reference = self.plan.percentiles.first().map(|&p| self.paired(&tw, &ew, Method::Cumulative, p));
                if let (Some(reference), true) = (reference, method != Method::Cumulative) {
                    let mine = self.paired(&tw, &ew, method, c.p);
                    let diffs: Vec<f64> = mine.iter().filter_map(|(k, v)| reference.get(k).map(|r| v - r)).collect();
                    if !diffs.is_empty() {
                        let key = format!("{tw}/{ew}/{method}");
                        let ci = bootstrap_ci(&diffs, self.plan.bootstrap_resamples, self.plan.alpha, seed::derive(self.plan.seed, &key));
                        cell.delta_vs_cumulative = Some(mean(&diffs));
                        cell.significant = ci.0 > 0.0;
                        cell.ci = Some(ci);
                    }
                }
                cell
            })
            .collect()
    }

    pub fn write_records_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "dataset,outer,inner,train_window,test_window,method,p,split_seed,cv_seed,f1_test,f1_dev,chosen_c,vocab_size,vocab_hash,n_train,n_test"
        )?;
        for r in &self.records {
            csv_row(
                &mut w,
                &[
                    r.dataset.clone(),
                    r.outer.to_string(),
                    r.inner.to_string(),
                    r.train_window.clone(),
                    r.test_window.clone(),
                    r.method.to_string(),
                    r.p.to_string(),
                    r.split_seed.to_string(),
                    r.cv_seed.to_string(),
                    r.f1_test.to_string(),
                    fmt_opt(r.f1_dev),
                    r.chosen_c.to_string(),
                    r.vocab_size.to_string(),
                    r.vocab_hash.clone(),
                    r.n_train.to_string(),
                    r.n_test.to_string(),
                ],
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "dataset,train_window,test_window,method,p,n,f1_mean,f1_sd,f1_dev_mean")?;
        for c in self.summary() {
            csv_row(
                &mut w,
                &[
                    self.plan.dataset.clone(),
                    c.train_window,
                    c.test_window,
                    c.method.to_string(),
                    c.p.to_string(),
                    c.n.to_string(),
                    c.f1_mean.to_string(),
                    c.f1_sd.to_string(),
                    fmt_opt(c.f1_dev_mean),
                ],
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Best-p F1 per (dataset, train window, test window, method); `*` marks
    /// a significant improvement over Cumulative.
    pub fn write_table_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "dataset,train_window,test_window,method,best_p,f1_mean,f1_sd,n,delta_vs_cumulative,ci_low,ci_high,marker"
        )?;
        for c in self.best() {
            csv_row(
                &mut w,
                &[
                    self.plan.dataset.clone(),
                    c.train_window,
                    c.test_window,
                    c.method.to_string(),
                    c.best_p.to_string(),
                    c.f1_mean.to_string(),
                    c.f1_sd.to_string(),
                    c.n.to_string(),
                    fmt_opt(c.delta_vs_cumulative),
                    fmt_opt(c.ci.map(|x| x.0)),
                    fmt_opt(c.ci.map(|x| x.1)),
                    if c.significant { "*".into() } else { String::new() },
                ],
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::synthlab::{generate, SynthSpec};

    pub(crate) fn tiny_spec() -> SynthSpec {
        SynthSpec {
            vocab_size: 150,
            topics: 5,
            users_per_class: 20,
            posts_per_user: 30,
            post_length: 12,
            signal_fraction: 0.1,
            overlap: 0.5,
            ..SynthSpec::default()
        }
    }

    pub(crate) fn tiny_embed() -> EmbedConfig {
        EmbedConfig {
            dim: 16,
            epochs: 2,
            ..EmbedConfig::default()
        }
    }

    fn tiny_plan() -> ExperimentPlan {
        let periods = crate::synthlab::periods();
        ExperimentPlan {
            train_windows: vec![periods[0].clone()],
            test_windows: vec![periods[1].clone()],
            outer_repeats: 1,
            inner_repeats: 1,
            min_posts: Some(10),
            floor: 20,
            learn_phrases: false,
            embed: tiny_embed(),
            shift: ShiftParams {
                k: 10,
                cf_nb: 20,
                cf_shift: 20,
                ..ShiftParams::default()
            },
            classifier: ClassifierConfig {
                cv: crate::model::CvConfig {
                    folds: 3,
                    c_grid: vec![0.1, 1.0, 10.0],
                    ..Default::default()
                },
                ..Default::default()
            },
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn one_record_per_method_p_and_window() {
        let corpus = generate(&tiny_spec()).unwrap();
        let out = run_generalization(&corpus.store(), &tiny_plan()).unwrap();
        assert_eq!(out.records.len(), Method::ALL.len() * PERCENTILES.len());
        let keys: BTreeSet<(Method, u32, &str)> = out.records.iter().map(|r| (r.method, r.p, r.test_window.as_str())).collect();
        assert_eq!(keys.len(), out.records.len());
        assert!(out.records.iter().all(|r| (0.0..=1.0).contains(&r.f1_test)));
        for a in &out.audits {
            assert_eq!(a.leaked, 0, "{a:?}");
            if a.role != Role::Embedding {
                assert_eq!(a.positives, a.negatives, "{a:?}");
                assert!(a.min_posts >= 10);
            }
        }
        let cum: BTreeSet<&str> = out
            .records
            .iter()
            .filter(|r| r.method == Method::Cumulative)
            .map(|r| r.vocab_hash.as_str())
            .collect();
        assert_eq!(cum.len(), 1);
        let best = out.best();
        assert_eq!(best.len(), Method::ALL.len());
        let mut table = Vec::new();
        out.write_table_csv(&mut table).unwrap();
        assert_eq!(String::from_utf8(table).unwrap().lines().count(), 1 + Method::ALL.len());
    }

    #[test]
    fn rerun_is_identical() {
        let corpus = generate(&tiny_spec()).unwrap();
        let plan = ExperimentPlan {
            methods: vec![Method::Cumulative, Method::Overlap, Method::Random],
            outer_repeats: 2,
            workers: 2,
            ..tiny_plan()
        };
        let a = run_generalization(&corpus.store(), &plan).unwrap();
        let b = run_generalization(&corpus.store(), &ExperimentPlan { workers: 1, ..plan }).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn balance_failure_names_constraint() {
        let corpus = generate(&tiny_spec()).unwrap();
        let plan = ExperimentPlan {
            min_posts: Some(31),
            ..tiny_plan()
        };
        let err = run_generalization(&corpus.store(), &plan).unwrap_err().to_string();
        assert!(err.contains("training window `P1`") && err.contains(">= 31 posts"), "{err}");
    }

    #[test]
    fn plan_validation() {
        let p = tiny_plan();
        assert!(p.validate().is_ok());
        let swapped = ExperimentPlan {
            train_windows: p.test_windows.clone(),
            test_windows: p.train_windows.clone(),
            ..p.clone()
        };
        assert!(swapped.validate().is_err());
        assert!(ExperimentPlan { outer_repeats: 0, ..p.clone() }.validate().is_err());
        assert_eq!(ExperimentPlan::default().full_scale().outer_repeats, 100);
        let toml_text = toml::to_string(&p).unwrap();
        assert_eq!(toml::from_str::<ExperimentPlan>(&toml_text).unwrap(), p);
        assert!(toml::from_str::<ExperimentPlan>("bogus = 1").is_err());
    }
}
