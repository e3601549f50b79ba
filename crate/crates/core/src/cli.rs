//! Command-line front end.
//!
//! Every stage reads its inputs from files named in the run configuration and
//! writes its outputs into `output_dir`. Outputs are staged in a scratch
//! directory and moved into place only when the stage succeeds, and each run
//! ends with one JSON summary line on stdout.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{defaults_audit, RunConfig};
use crate::corpus::{filter_posts, ingest_posts, learn_phrases, slice_store, FilterSet, PeriodSlice, PhraseModel, PostStore, Vocabulary};
use crate::embed::{train_cbow_tokens, EmbeddingSpace};
use crate::harness::{fit_selection, needs_model, needs_table, run_generalization, run_practical};
use crate::model::{f1_score, threshold, train_classifier, ClassifierModel};
use crate::monitor::{estimate_prevalence, keyword_series, prevalence_change, write_keyword_csv};
use crate::select::{select_cumulative, Method, SelectedVocabulary, SelectionInputs};
use crate::shift::{neighbor_diff, stability_table, StabilityTable};
use crate::synthlab::{deployment, evaluate_detector, generate, Manifest};
use crate::{seed, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "semshift", version, about = "Semantic stability, vocabulary selection and prevalence monitoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Single-worker numeric paths throughout.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Normalize, filter and slice posts; dump vocabularies and matrices.
    Ingest,
    /// Learn one phrase model per period.
    Phrases,
    /// Train one embedding per period.
    Embed,
    /// Stability table between two embeddings.
    Shift,
    /// Scores and selected vocabularies for every method and percentile.
    Select,
    /// Train a classifier on the source period.
    Train,
    /// Score a classifier on the target period, or a stability table against
    /// a synthetic manifest.
    Evaluate,
    /// Estimate prevalence before and during.
    Prevalence,
    /// Temporal generalization experiment.
    Generalization,
    /// Deployment experiment: prevalence against vocabulary.
    Practical,
    /// Write a synthetic corpus and its manifest.
    Synth,
    /// Check every default against its reference value.
    SelfTest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Phrases => "phrases",
            Command::Embed => "embed",
            Command::Shift => "shift",
            Command::Select => "select",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Prevalence => "prevalence",
            Command::Generalization => "generalization",
            Command::Practical => "practical",
            Command::Synth => "synth",
            Command::SelfTest => "self-test",
        }
    }
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STAGE: i32 = 1;

/// Loads, overrides, resolves and validates the configuration for `command`.
pub fn prepare(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    cfg.resolve();
    preflight(cli.command, &cfg)?;
    Ok(cfg)
}

fn need<'a>(what: &str, path: &'a Option<PathBuf>) -> Result<&'a Path> {
    let p = path.as_deref().ok_or_else(|| Error::Config(format!("inputs.{what} is required")))?;
    if !p.exists() {
        return Err(Error::Config(format!("inputs.{what}: {} does not exist", p.display())));
    }
    Ok(p)
}

fn need_periods(cfg: &RunConfig) -> Result<()> {
    if cfg.periods.is_empty() {
        return Err(Error::Config("at least one entry in `periods` is required".into()));
    }
    Ok(())
}

/// Stage-specific checks that run before anything is written.
fn exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("input {} does not exist", p.display())))
    }
}

fn preflight(command: Command, cfg: &RunConfig) -> Result<()> {
    let detection = command == Command::Evaluate && cfg.inputs.manifest.is_some();
    let reads_phrases = !detection
        && !matches!(
            command,
            Command::Synth | Command::SelfTest | Command::Shift | Command::Generalization | Command::Practical
        );
    if reads_phrases {
        for p in cfg.inputs.phrases.values() {
            exists(p)?;
        }
    }
    for name in cfg.inputs.phrases.keys() {
        cfg.period(name)?;
    }
    for p in &cfg.periods {
        if p.name.is_empty() || !p.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::Config(format!("period name `{}` must be non-empty [A-Za-z0-9_-]", p.name)));
        }
    }
    match command {
        Command::Ingest | Command::Phrases | Command::Embed => {
            need("corpus", &cfg.inputs.corpus)?;
            need_periods(cfg)?;
        }
        Command::Shift => {
            if cfg.inputs.embeddings.len() != 2 {
                return Err(Error::Config("inputs.embeddings must list exactly two files".into()));
            }
            for p in &cfg.inputs.embeddings {
                exists(p)?;
            }
        }
        Command::Select => {
            need("corpus", &cfg.inputs.corpus)?;
            cfg.period(&cfg.select.source)?;
            cfg.period(&cfg.select.target)?;
            if needs_table(&cfg.select.methods) {
                need("stability", &cfg.inputs.stability)?;
            }
        }
        Command::Train => {
            need("corpus", &cfg.inputs.corpus)?;
            cfg.period(&cfg.select.source)?;
            if cfg.inputs.vocabulary.is_some() {
                need("vocabulary", &cfg.inputs.vocabulary)?;
            }
        }
        Command::Evaluate => {
            if cfg.inputs.manifest.is_some() {
                need("manifest", &cfg.inputs.manifest)?;
                need("stability", &cfg.inputs.stability)?;
            } else {
                need("model", &cfg.inputs.model)?;
                need("corpus", &cfg.inputs.corpus)?;
                cfg.period(&cfg.select.target)?;
            }
        }
        Command::Prevalence => {
            need("model", &cfg.inputs.model)?;
            if cfg.inputs.unlabelled.is_some() {
                need("unlabelled", &cfg.inputs.unlabelled)?;
            } else {
                need("corpus", &cfg.inputs.corpus)?;
            }
            cfg.period(&cfg.monitor.pre)?;
            cfg.period(&cfg.monitor.during)?;
        }
        Command::Generalization => {
            need("corpus", &cfg.inputs.corpus)?;
            cfg.generalization.validate()?;
        }
        Command::Practical => {
            need("corpus", &cfg.inputs.corpus)?;
            need("unlabelled", &cfg.inputs.unlabelled)?;
            cfg.practical.validate()?;
        }
        Command::Synth | Command::SelfTest => {}
    }
    Ok(())
}

/// Output files of one stage, staged until the stage succeeds.
struct Outputs {
    staging: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.staging.join(name);
        self.names.push(name.to_string());
        Ok(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?))
    }

    fn json(&mut self, name: &str, value: &impl serde::Serialize) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let mut w = self.create(name)?;
        w.write_all(body.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    fn with(&mut self, name: &str, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = self.create(name)?;
        write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::with_capacity(self.names.len());
        for name in &self.names {
            let dest = dir.join(name);
            fs::rename(self.staging.join(name), &dest).map_err(|e| Error::io(&dest, e))?;
            out.push(dest);
        }
        fs::remove_dir_all(&self.staging).map_err(|e| Error::io(&self.staging, e))?;
        Ok(out)
    }
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let stage = cli.command.name();
    let started = Instant::now();
    let cfg = match prepare(cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", json!({"stage": stage, "status": "config_error", "error": e.to_string()}));
            return EXIT_CONFIG;
        }
    };
    let summary = |status: &str| json!({"stage": stage, "status": status, "seed": cfg.seed, "deterministic": cfg.deterministic});
    match execute(cli.command, &cfg) {
        Ok((paths, metrics, ok)) => {
            let mut s = summary(if ok { "ok" } else { "failed" });
            s["outputs"] = json!(paths);
            s["metrics"] = metrics;
            s["seconds"] = json!(started.elapsed().as_secs_f64());
            println!("{s}");
            if ok {
                0
            } else {
                EXIT_STAGE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut s = summary("error");
            s["error"] = json!(e.to_string());
            println!("{s}");
            EXIT_STAGE
        }
    }
}

fn execute(command: Command, cfg: &RunConfig) -> Result<(Vec<PathBuf>, Value, bool)> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let staging = dir.join(format!(".staging-{}-{}", command.name(), std::process::id()));
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let mut out = Outputs {
        staging: staging.clone(),
        names: Vec::new(),
    };
    let result = stage(command, cfg, &mut out);
    match result {
        Ok((metrics, ok)) => {
            out.text(&format!("{}.config.toml", command.name()), &cfg.to_toml()?)?;
            Ok((out.commit(dir)?, metrics, ok))
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn stage(command: Command, cfg: &RunConfig, out: &mut Outputs) -> Result<(Value, bool)> {
    let ok = |v: Value| Ok((v, true));
    match command {
        Command::Ingest => ok(ingest(cfg, out)?),
        Command::Phrases => ok(phrases(cfg, out)?),
        Command::Embed => ok(embed(cfg, out)?),
        Command::Shift => ok(shift(cfg, out)?),
        Command::Select => ok(select(cfg, out)?),
        Command::Train => ok(train(cfg, out)?),
        Command::Evaluate => ok(evaluate(cfg, out)?),
        Command::Prevalence => ok(prevalence(cfg, out)?),
        Command::Generalization => ok(generalization(cfg, out)?),
        Command::Practical => ok(practical(cfg, out)?),
        Command::Synth => ok(synth(cfg, out)?),
        Command::SelfTest => {
            let checks = defaults_audit();
            let passed = checks.iter().all(|c| c.ok);
            out.json("self_test.json", &checks)?;
            let failed: Vec<&str> = checks.iter().filter(|c| !c.ok).map(|c| c.name.as_str()).collect();
            Ok((json!({"checks": checks.len(), "failed": failed}), passed))
        }
    }
}

fn filter_set(cfg: &RunConfig) -> FilterSet {
    FilterSet {
        term_blocklist: cfg.filters.term_blocklist.iter().cloned().collect(),
        community_field: cfg.filters.community_field.clone(),
        community_blocklist: cfg.filters.community_blocklist.iter().cloned().collect(),
        ..Default::default()
    }
}

fn load_posts(cfg: &RunConfig, path: &Path) -> Result<PostStore> {
    let (store, report) = ingest_posts(path, &cfg.schema)?;
    let (store, removed) = filter_posts(&store, &filter_set(cfg));
    log::info!(
        "{}: {} posts read, {} skipped, {} filtered",
        path.display(),
        report.accepted,
        report.skipped,
        removed.total()
    );
    Ok(store)
}

fn read_phrases(path: &Path) -> Result<PhraseModel> {
    PhraseModel::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// One phrase model per configured period: loaded when given, learned when
/// `learn_phrases` is set, otherwise none. The flag reports which were learned.
fn phrase_models(cfg: &RunConfig, store: &PostStore) -> Result<Option<Vec<(PhraseModel, bool)>>> {
    if cfg.inputs.phrases.is_empty() && !cfg.learn_phrases {
        return Ok(None);
    }
    let raw = if cfg.inputs.phrases.len() < cfg.periods.len() {
        Some(slice_store(store, &cfg.periods, None)?)
    } else {
        None
    };
    let mut models = Vec::with_capacity(cfg.periods.len());
    for (i, p) in cfg.periods.iter().enumerate() {
        match cfg.inputs.phrases.get(&p.name) {
            Some(path) => models.push((read_phrases(path)?, false)),
            None if cfg.learn_phrases => {
                let slice = &raw.as_ref().expect("raw slices").slices[i];
                let sentences: Vec<&Vec<String>> = slice.sentences().collect();
                models.push((learn_phrases(&sentences, &cfg.phrases)?, true));
            }
            None => return Err(Error::Config(format!("no phrase model for period `{}` and learn_phrases is off", p.name))),
        }
    }
    Ok(Some(models))
}

fn phrased_slices(cfg: &RunConfig, store: &PostStore) -> Result<(Vec<PeriodSlice>, Option<Vec<(PhraseModel, bool)>>)> {
    let models = phrase_models(cfg, store)?;
    let plain: Option<Vec<PhraseModel>> = models.as_ref().map(|m| m.iter().map(|(m, _)| m.clone()).collect());
    let slices = slice_store(store, &cfg.periods, plain.as_deref())?.slices;
    Ok((slices, models))
}

fn slice_named<'a>(slices: &'a [PeriodSlice], name: &str) -> Result<&'a PeriodSlice> {
    slices
        .iter()
        .find(|s| s.period.name == name)
        .ok_or_else(|| Error::Config(format!("period `{name}` is not declared")))
}

fn ingest(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let path = cfg.inputs.corpus.as_deref().expect("preflight");
    let (store, report) = ingest_posts(path, &cfg.schema)?;
    let (store, removed) = filter_posts(&store, &filter_set(cfg));
    out.with("posts.jsonl", |w| store.write_jsonl(w))?;
    let models: Option<Vec<PhraseModel>> = if cfg.inputs.phrases.is_empty() {
        None
    } else {
        Some(cfg.periods.iter().map(|p| read_phrases(&cfg.inputs.phrases[&p.name])).collect::<Result<_>>()?)
    };
    let slices = slice_store(&store, &cfg.periods, models.as_deref())?.slices;
    let mut periods = Vec::new();
    for s in &slices {
        let vocab = Arc::new(s.vocabulary(cfg.vocab.min_count, cfg.vocab.max_size));
        let dtm = s.dtm(Arc::clone(&vocab), cfg.min_posts());
        let name = &s.period.name;
        out.with(&format!("vocab_{name}.csv"), |w| vocab.write_csv(w))?;
        out.with(&format!("dtm_{name}.triplets"), |w| dtm.write_triplets(w))?;
        out.with(&format!("rows_{name}.csv"), |w| dtm.write_rows(w))?;
        periods.push(json!({"period": name, "users": s.users.len(), "posts": s.post_count(), "vocab": vocab.len(), "rows": dtm.n_rows()}));
    }
    let summary = json!({"read": report, "filtered": removed, "periods": periods});
    out.json("ingest_report.json", &summary)?;
    Ok(summary)
}

fn phrases(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let store = load_posts(cfg, cfg.inputs.corpus.as_deref().expect("preflight"))?;
    let raw = slice_store(&store, &cfg.periods, None)?;
    let mut merges = serde_json::Map::new();
    for s in &raw.slices {
        let sentences: Vec<&Vec<String>> = s.sentences().collect();
        let model = learn_phrases(&sentences, &cfg.phrases)?;
        out.text(&format!("phrases_{}.json", s.period.name), &model.to_json()?)?;
        merges.insert(s.period.name.clone(), json!(model.len()));
    }
    Ok(json!({"merges": merges}))
}

fn embed(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let store = load_posts(cfg, cfg.inputs.corpus.as_deref().expect("preflight"))?;
    let (slices, models) = phrased_slices(cfg, &store)?;
    if let Some(models) = &models {
        for (p, (model, learned)) in cfg.periods.iter().zip(models) {
            if *learned {
                out.text(&format!("phrases_{}.json", p.name), &model.to_json()?)?;
            }
        }
    }
    let mut spaces = serde_json::Map::new();
    for s in &slices {
        if s.post_count() == 0 {
            return Err(Error::Insufficient(format!("no posts in period `{}`", s.period.name)));
        }
        let sentences: Vec<&Vec<String>> = s.sentences().collect();
        let space = train_cbow_tokens(&sentences, &cfg.embed)?.with_name(s.period.name.clone());
        out.with(&format!("embedding_{}.bin", s.period.name), |w| space.write_binary(w))?;
        spaces.insert(
            s.period.name.clone(),
            json!({"terms": space.len(), "dim": space.dim(), "final_loss": space.report().epoch_loss.last()}),
        );
    }
    Ok(json!({"embeddings": spaces}))
}

fn shift(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let p = EmbeddingSpace::load(&cfg.inputs.embeddings[0])?;
    let q = EmbeddingSpace::load(&cfg.inputs.embeddings[1])?;
    let table = stability_table(&p, &q, &cfg.shift)?;
    out.with("stability.csv", |w| table.write_csv(w))?;
    let diffs = table
        .records
        .iter()
        .take(cfg.report.terms)
        .map(|r| neighbor_diff(&p, &q, &r.term, cfg.report.top_m, &cfg.shift))
        .collect::<Result<Vec<_>>>()?;
    out.json("shifted_terms.json", &diffs)?;
    let mean = table.records.iter().map(|r| r.s).sum::<f64>() / table.len().max(1) as f64;
    Ok(json!({"terms": table.len(), "mean_s": mean, "small_pool": table.records.iter().filter(|r| r.small_pool).count()}))
}

fn read_table(cfg: &RunConfig) -> Result<Option<StabilityTable>> {
    match &cfg.inputs.stability {
        Some(path) => {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            Ok(Some(StabilityTable::read_csv(BufReader::new(f), cfg.shift)?))
        }
        None => Ok(None),
    }
}

fn select(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let store = load_posts(cfg, cfg.inputs.corpus.as_deref().expect("preflight"))?;
    let (slices, _) = phrased_slices(cfg, &store)?;
    let source_slice = slice_named(&slices, &cfg.select.source)?;
    let source = Arc::new(source_slice.vocabulary(cfg.vocab.min_count, cfg.vocab.max_size));
    let target = slice_named(&slices, &cfg.select.target)?.vocabulary(cfg.vocab.min_count, cfg.vocab.max_size);
    let labelled = source_slice.dtm(Arc::clone(&source), cfg.min_posts());
    let table = read_table(cfg)?;
    let mut inputs = SelectionInputs {
        source: &source,
        target: &target,
        floor: cfg.select.floor,
        labelled: Some(&labelled),
        model: None,
        table: table.as_ref(),
        seed: seed::derive(cfg.seed, "random-selection"),
    };
    let base = inputs.intersection();
    let coef = if needs_model(&cfg.select.methods) {
        let all = SelectedVocabulary {
            method: Method::Intersection,
            p: 100,
            terms: base.iter().cloned().collect(),
        };
        Some(fit_selection(&labelled, &all, &source, &cfg.classifier)?.model)
    } else {
        None
    };
    inputs.model = coef.as_ref();
    let mut sizes = serde_json::Map::new();
    for &method in &cfg.select.methods {
        if method.is_scored() {
            let scores = inputs.scores(method, &base)?;
            out.with(&format!("scores_{method}.csv"), |w| scores.write_csv(w))?;
        }
        let mut per_p = Vec::new();
        for sel in inputs.sweep(method, &cfg.select.percentiles)? {
            out.text(&format!("selection_{method}_p{}.json", sel.p), &sel.to_json()?)?;
            per_p.push(json!([sel.p, sel.terms.len()]));
        }
        sizes.insert(method.name().into(), json!(per_p));
    }
    Ok(json!({"cumulative": inputs.cumulative().len(), "intersection": base.len(), "sizes": sizes}))
}

fn train(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let store = load_posts(cfg, cfg.inputs.corpus.as_deref().expect("preflight"))?;
    let (slices, models) = phrased_slices(cfg, &store)?;
    let slice = slice_named(&slices, &cfg.select.source)?;
    let source = Arc::new(slice.vocabulary(cfg.vocab.min_count, cfg.vocab.max_size));
    let (terms, method, p): (Vec<String>, Method, u32) = match &cfg.inputs.vocabulary {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let sel: SelectedVocabulary = serde_json::from_str(&text)?;
            (sel.terms, sel.method, sel.p)
        }
        None => (select_cumulative(&source, cfg.select.floor).into_iter().collect(), Method::Cumulative, 100),
    };
    if terms.is_empty() {
        return Err(Error::Insufficient("the training vocabulary is empty".into()));
    }
    let vocab = Arc::new(Vocabulary::from_ordered(terms.iter().map(|t| (t.clone(), source.freq_of(t))))?);
    let dtm = slice.dtm(Arc::clone(&source), cfg.min_posts());
    let mut model = train_classifier(&dtm, vocab, &cfg.classifier)?;
    model.meta.method = Some(method.name().into());
    model.meta.percentile = Some(p);
    if let Some(models) = &models {
        let i = cfg.periods.iter().position(|x| x.name == cfg.select.source).expect("declared");
        if models[i].1 {
            out.text(&format!("phrases_{}.json", cfg.select.source), &models[i].0.to_json()?)?;
        }
    }
    out.with("model.bin", |w| model.write(w))?;
    out.json("training.json", &model.meta)?;
    Ok(json!({"features": model.n_features(), "users": dtm.n_rows(), "c": model.c, "converged": model.meta.converged}))
}

fn evaluate(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    if let Some(path) = &cfg.inputs.manifest {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let table = read_table(cfg)?.expect("preflight");
        let report = evaluate_detector(&manifest, &table)?;
        out.json("detection.json", &report)?;
        return Ok(serde_json::to_value(report)?);
    }
    let model = ClassifierModel::load(cfg.inputs.model.as_deref().expect("preflight"))?;
    let store = load_posts(cfg, cfg.inputs.corpus.as_deref().expect("preflight"))?;
    let (slices, _) = phrased_slices(cfg, &store)?;
    let slice = slice_named(&slices, &cfg.select.target)?;
    let dtm = slice.dtm(Arc::clone(&model.vocab), cfg.min_posts());
    let labels = dtm
        .labels()
        .ok_or_else(|| Error::invalid("evaluation matrix", "users in the target period are unlabelled"))?;
    let score = f1_score(&threshold(&model.predict_proba(&dtm)), labels);
    let report = json!({"period": cfg.select.target, "users": dtm.n_rows(), "score": score});
    out.json("evaluation.json", &report)?;
    Ok(report)
}

fn prevalence(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let model = ClassifierModel::load(cfg.inputs.model.as_deref().expect("preflight"))?;
    let path = cfg.inputs.unlabelled.as_deref().or(cfg.inputs.corpus.as_deref()).expect("preflight");
    let store = load_posts(cfg, path)?;
    let (slices, models) = phrased_slices(cfg, &store)?;
    let min_posts = cfg.monitor.min_posts.unwrap_or(cfg.min_posts() as u32);
    let estimate = |name: &str| -> Result<_> {
        let slice = slice_named(&slices, name)?;
        let dtm = slice.dtm(Arc::clone(&model.vocab), 1);
        estimate_prevalence(&model, &dtm, min_posts, name)
    };
    let pre = estimate(&cfg.monitor.pre)?;
    let during = estimate(&cfg.monitor.during)?;
    let change = prevalence_change(&pre, &during);
    let report = json!({"pre": pre, "during": during, "change": change});
    out.json("prevalence.json", &report)?;
    if !cfg.monitor.keywords.is_empty() {
        let series = keyword_series(&store, &cfg.monitor.keywords, None)?;
        out.with("keywords.csv", |w| write_keyword_csv(&series, w))?;
    }
    if let Some(models) = &models {
        for (p, (m, learned)) in cfg.periods.iter().zip(models) {
            if *learned && (p.name == cfg.monitor.pre || p.name == cfg.monitor.during) {
                out.text(&format!("phrases_{}.json", p.name), &m.to_json()?)?;
            }
        }
    }
    Ok(json!({"change": change}))
}

fn generalization(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let store = load_posts(cfg, cfg.inputs.corpus.as_deref().expect("preflight"))?;
    let result = run_generalization(&store, &cfg.generalization)?;
    out.with("records.csv", |w| result.write_records_csv(w))?;
    out.with("summary.csv", |w| result.write_summary_csv(w))?;
    out.with("table.csv", |w| result.write_table_csv(w))?;
    out.json("audits.json", &result.audits)?;
    let best = result.best();
    out.json("best.json", &best)?;
    Ok(json!({"records": result.records.len(), "best": best}))
}

fn practical(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let labelled = load_posts(cfg, cfg.inputs.corpus.as_deref().expect("preflight"))?;
    let unlabelled = load_posts(cfg, cfg.inputs.unlabelled.as_deref().expect("preflight"))?;
    let result = run_practical(&labelled, &unlabelled, &cfg.practical)?;
    out.with("records.csv", |w| result.write_records_csv(w))?;
    out.text("curves.json", &result.curves_json()?)?;
    let divergence = result.divergence();
    out.json("divergence.json", &divergence)?;
    out.json("shifted_terms.json", &result.shifted_terms)?;
    out.json("audits.json", &result.audits)?;
    Ok(json!({"records": result.records.len(), "divergence": divergence}))
}

fn synth(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let posts_jsonl = |posts: &[crate::corpus::Post], w: &mut BufWriter<File>| -> Result<()> {
        for p in posts {
            serde_json::to_writer(&mut *w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    };
    match &cfg.deployment {
        Some(dep) => {
            let d = deployment(&cfg.synth, dep)?;
            out.with("labelled.jsonl", |w| posts_jsonl(&d.labelled, w))?;
            out.with("unlabelled.jsonl", |w| posts_jsonl(&d.unlabelled, w))?;
            out.json("manifest.json", &d.manifest)?;
            Ok(json!({"labelled_posts": d.labelled.len(), "unlabelled_posts": d.unlabelled.len(), "periods": [d.labelled_span, d.pre, d.during]}))
        }
        None => {
            let c = generate(&cfg.synth)?;
            out.with("corpus.jsonl", |w| c.write_jsonl(w))?;
            out.json("manifest.json", &c.manifest)?;
            let users: BTreeSet<&str> = c.posts.iter().map(|p| p.user_id.as_str()).collect();
            Ok(json!({"posts": c.posts.len(), "users": users.len(), "shifted": c.manifest.shifted.len(), "periods": c.periods}))
        }
    }
}
