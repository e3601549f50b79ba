//! Run configuration shared by every CLI stage.
//!
//! One TOML document carries the inputs, the periods and every module's
//! parameters. Unknown keys are rejected at every level. Module seeds are
//! derived from the root `seed`, so a run is reproduced by the document and
//! that one number.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{FieldSchema, Period, PhraseConfig, DEFAULT_MAX_VOCAB};
use crate::embed::{EmbedConfig, Metric};
use crate::harness::{ExperimentPlan, PlatformProfile, PracticalPlan};
use crate::model::ClassifierConfig;
use crate::seed;
use crate::select::{Method, FREQ_FLOOR, PERCENTILES};
use crate::shift::ShiftParams;
use crate::synthlab::{DeploymentSpec, SynthSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    /// Posts as line-delimited JSON (the labelled corpus where it matters).
    pub corpus: Option<PathBuf>,
    pub unlabelled: Option<PathBuf>,
    /// Phrase models by period name.
    pub phrases: BTreeMap<String, PathBuf>,
    /// Two embedding files, `P` then `Q`.
    pub embeddings: Vec<PathBuf>,
    pub stability: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// A selected vocabulary (JSON) to train on.
    pub vocabulary: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub term_blocklist: Vec<String>,
    pub community_field: Option<String>,
    pub community_blocklist: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    pub min_count: u64,
    pub max_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            min_count: 5,
            max_size: DEFAULT_MAX_VOCAB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    /// Period the classifier is trained on.
    pub source: String,
    /// Period it is applied to.
    pub target: String,
    pub methods: Vec<Method>,
    pub percentiles: Vec<u32>,
    pub floor: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            source: String::new(),
            target: String::new(),
            methods: Method::ALL.to_vec(),
            percentiles: PERCENTILES.to_vec(),
            floor: FREQ_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Lowest-stability terms listed with their neighbour differences.
    pub terms: usize,
    pub top_m: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { terms: 20, top_m: 15 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorConfig {
    pub pre: String,
    pub during: String,
    /// Posts a user needs in a period to be scored; defaults to `min_posts`.
    pub min_posts: Option<u32>,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub deterministic: bool,
    pub output_dir: PathBuf,
    pub inputs: Inputs,
    pub schema: FieldSchema,
    pub periods: Vec<Period>,
    pub filters: FilterConfig,
    pub vocab: VocabConfig,
    pub profile: PlatformProfile,
    pub min_posts: Option<usize>,
    pub learn_phrases: bool,
    pub phrases: PhraseConfig,
    pub embed: EmbedConfig,
    pub shift: ShiftParams,
    pub report: ReportConfig,
    pub select: SelectConfig,
    pub classifier: ClassifierConfig,
    pub monitor: MonitorConfig,
    pub generalization: ExperimentPlan,
    pub practical: PracticalPlan,
    pub synth: SynthSpec,
    /// When present, `synth` writes a labelled/unlabelled deployment instead
    /// of a two-period corpus.
    pub deployment: Option<DeploymentSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            deterministic: false,
            output_dir: PathBuf::from("out"),
            inputs: Inputs::default(),
            schema: FieldSchema::default(),
            periods: Vec::new(),
            filters: FilterConfig::default(),
            vocab: VocabConfig::default(),
            profile: PlatformProfile::Twitter,
            min_posts: None,
            learn_phrases: true,
            phrases: PhraseConfig::default(),
            embed: EmbedConfig::default(),
            shift: ShiftParams::default(),
            report: ReportConfig::default(),
            select: SelectConfig::default(),
            classifier: ClassifierConfig::default(),
            monitor: MonitorConfig::default(),
            generalization: ExperimentPlan::default(),
            practical: PracticalPlan::default(),
            synth: SynthSpec::default(),
            deployment: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn min_posts(&self) -> usize {
        self.min_posts.unwrap_or_else(|| self.profile.min_posts())
    }

    pub fn period(&self, name: &str) -> Result<&Period> {
        self.periods
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("period `{name}` is not declared in `periods`")))
    }

    /// Pushes the root seed and worker settings down into every module.
    pub fn resolve(&mut self) {
        let root = self.seed;
        if self.deterministic {
            self.workers = 1;
        }
        let workers = self.workers.max(1);
        self.embed.seed = seed::derive(root, "embed");
        self.embed.workers = workers;
        self.classifier.cv.seed = seed::derive(root, "cv");
        self.generalization.seed = root;
        self.generalization.workers = workers;
        self.practical.seed = root;
        self.practical.workers = workers;
        self.synth.seed = root;
        if self.deterministic {
            self.generalization.embed.workers = 1;
            self.practical.embed.workers = 1;
        }
    }

    /// Checks everything that does not depend on the stage being run.
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.vocab.max_size == 0 {
            return Err(Error::Config("vocab.max_size must be >= 1".into()));
        }
        if self.min_posts == Some(0) {
            return Err(Error::Config("min_posts must be >= 1".into()));
        }
        Period::validate_all(&self.periods)?;
        self.phrases.validate()?;
        self.embed.validate()?;
        self.shift.validate()?;
        self.classifier.cv.validate()?;
        if self.select.methods.is_empty() || self.select.percentiles.is_empty() {
            return Err(Error::Config("select needs at least one method and one percentile".into()));
        }
        if let Some(bad) = self.select.percentiles.iter().find(|p| **p == 0 || **p > 100 || **p % 10 != 0) {
            return Err(Error::Config(format!("percentile {bad} is not one of 10, 20, .., 100")));
        }
        self.synth.validate()?;
        Ok(())
    }
}

/// One audited default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultCheck {
    pub name: String,
    pub expected: String,
    pub actual: String,
    pub ok: bool,
}

fn check(out: &mut Vec<DefaultCheck>, name: &str, expected: impl ToString, actual: impl ToString) {
    let (expected, actual) = (expected.to_string(), actual.to_string());
    out.push(DefaultCheck {
        name: name.into(),
        ok: expected == actual,
        expected,
        actual,
    });
}

/// Compares the built-in defaults with their reference values.
pub fn defaults_audit() -> Vec<DefaultCheck> {
    let cfg = RunConfig::default();
    let mut out = Vec::new();
    check(&mut out, "vocab.max_size", 500_000, cfg.vocab.max_size);
    check(&mut out, "vocab.min_count", 5, cfg.vocab.min_count);
    check(&mut out, "phrases.min_count", 5, cfg.phrases.min_count);
    check(&mut out, "phrases.threshold", 10.0, cfg.phrases.threshold);
    check(&mut out, "phrases.max_ngram", 3, cfg.phrases.max_ngram);
    check(&mut out, "profile.twitter.min_posts", 200, PlatformProfile::Twitter.min_posts());
    check(&mut out, "profile.reddit.min_posts", 100, PlatformProfile::Reddit.min_posts());
    check(&mut out, "select.floor", 50, cfg.select.floor);
    check(
        &mut out,
        "select.percentiles",
        format!("{:?}", (1..=10).map(|i| i * 10).collect::<Vec<u32>>()),
        format!("{:?}", cfg.select.percentiles),
    );
    let embeds = [
        ("", &cfg.embed, &cfg.shift, &cfg.classifier),
        (
            "generalization.",
            &cfg.generalization.embed,
            &cfg.generalization.shift,
            &cfg.generalization.classifier,
        ),
        ("practical.", &cfg.practical.embed, &cfg.practical.shift, &cfg.practical.classifier),
    ];
    for (prefix, embed, shift, classifier) in embeds {
        let key = |k: &str| format!("{prefix}{k}");
        check(&mut out, &key("embed.dim"), 100, embed.dim);
        check(&mut out, &key("embed.epochs"), 20, embed.epochs);
        check(&mut out, &key("embed.window"), 5, embed.window);
        check(&mut out, &key("embed.negatives"), 5, embed.negatives);
        check(&mut out, &key("embed.min_count"), 5, embed.min_count);
        check(&mut out, &key("shift.k"), 500, shift.k);
        check(&mut out, &key("shift.cf_nb"), 50, shift.cf_nb);
        check(&mut out, &key("shift.cf_shift"), 50, shift.cf_shift);
        check(&mut out, &key("shift.metric"), format!("{:?}", Metric::Cosine), format!("{:?}", shift.metric));
        check(&mut out, &key("classifier.cv.folds"), 10, classifier.cv.folds);
    }
    for (name, plan_phrases) in [("generalization", &cfg.generalization.phrases), ("practical", &cfg.practical.phrases)] {
        check(&mut out, &format!("{name}.phrases.min_count"), 5, plan_phrases.min_count);
        check(&mut out, &format!("{name}.phrases.threshold"), 10.0, plan_phrases.threshold);
    }
    let g = cfg.generalization.clone().full_scale();
    check(&mut out, "generalization.full_scale.outer_repeats", 100, g.outer_repeats);
    check(&mut out, "generalization.full_scale.inner_repeats", 10, g.inner_repeats);
    check(&mut out, "generalization.test_fraction", 0.2, cfg.generalization.test_fraction);
    let p = cfg.practical.clone().full_scale();
    check(&mut out, "practical.full_scale.outer_repeats", 10, p.outer_repeats);
    check(&mut out, "practical.train_fraction", 0.8, cfg.practical.train_fraction);
    check(&mut out, "practical.unlabelled_post_fraction", 0.2, cfg.practical.unlabelled_post_fraction);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_values() {
        let audit = defaults_audit();
        let bad: Vec<_> = audit.iter().filter(|c| !c.ok).collect();
        assert!(bad.is_empty(), "{bad:?}");
        assert!(audit.iter().any(|c| c.name == "shift.k"));
        assert!(audit.iter().any(|c| c.name == "practical.shift.k"));
    }

    #[test]
    fn default_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn populated_round_trip_keeps_keys() {
        let text = r#"
            seed = 7
            output_dir = "runs/a"
            periods = [{ name = "A", start = 0, end = 10 }, { name = "B", start = 10, end = 20 }]

            [inputs]
            corpus = "posts.jsonl"
            embeddings = ["a.bin", "b.bin"]

            [inputs.phrases]
            A = "phrases_A.json"

            [shift]
            k = 25

            [select]
            source = "A"
            target = "B"
            methods = ["overlap", "chi2"]

            [deployment]
            unlabelled_users = 40
        "#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.shift.k, 25);
        assert_eq!(cfg.select.methods, [Method::Overlap, Method::ChiSquared]);
        assert_eq!(cfg.deployment.as_ref().unwrap().unlabelled_users, 40);
        let again = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        let a: toml::Table = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        let b: toml::Table = toml::from_str(&again.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("sede = 1").is_err());
        assert!(RunConfig::parse("[shift]\nkk = 3").is_err());
        assert!(RunConfig::parse("[generalization.embed]\ndims = 3").is_err());
    }

    #[test]
    fn resolve_derives_module_seeds() {
        let mut cfg = RunConfig {
            seed: 9,
            workers: 4,
            deterministic: true,
            ..Default::default()
        };
        cfg.resolve();
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.embed.seed, seed::derive(9, "embed"));
        assert_eq!(cfg.synth.seed, 9);
        assert_eq!(cfg.generalization.workers, 1);
    }

    #[test]
    fn validation_fails_closed() {
        let cfg = RunConfig {
            periods: vec![Period::new("a", 0, 10), Period::new("b", 5, 20)],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            select: SelectConfig {
                percentiles: vec![15],
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
