//! Run configuration: a TOML file whose relative paths resolve against the
//! file's own directory. The resolved form is written next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sensaudit::classifiers::TrainConfig;
use sensaudit::corpus::TokenizationPolicy;
use sensaudit::{AuditOptions, FilterSpec, SwapScheme};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// 0 lets the engine decide.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_scheme")]
    pub scheme: SwapScheme,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub tokens: TokenSection,
    #[serde(default)]
    pub filters: FilterSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub audit: AuditSection,
}

fn default_scheme() -> SwapScheme {
    SwapScheme::OneSwap
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Line-delimited notes.
    pub path: Option<PathBuf>,
    /// Labels table from `labelgen`; overrides labels stored in the notes.
    pub labels: Option<PathBuf>,
    #[serde(default = "yes")]
    pub lowercase: bool,
    #[serde(default = "yes")]
    pub strip_punctuation: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            path: None,
            labels: None,
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

impl CorpusSection {
    pub fn policy(&self) -> TokenizationPolicy {
        TokenizationPolicy {
            lowercase: self.lowercase,
            strip_punctuation: self.strip_punctuation,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSection {
    /// One token per line; `#` starts a comment.
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub list: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(default = "five")]
    pub uniform: usize,
    #[serde(default = "five")]
    pub onegram: usize,
    #[serde(default = "five")]
    pub context: usize,
    /// `cooccurrence`, `tcp:HOST:PORT` or `exec:COMMAND ARGS`.
    #[serde(default = "default_provider")]
    pub provider: String,
    #[serde(default = "default_window")]
    pub window: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            uniform: 5,
            onegram: 5,
            context: 5,
            provider: default_provider(),
            window: default_window(),
        }
    }
}

fn five() -> usize {
    5
}

fn default_provider() -> String {
    "cooccurrence".into()
}

fn default_window() -> usize {
    3
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    #[default]
    Linear,
    Constant,
    External,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    #[serde(default)]
    pub kind: ClassifierKind,
    /// Model file for `linear`.
    pub model: Option<PathBuf>,
    /// Output of `constant`.
    pub value: Option<f64>,
    /// Endpoint for `external`.
    pub endpoint: Option<String>,
    /// Recorded probabilities for `replay`.
    pub replay: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            kind: ClassifierKind::Linear,
            model: None,
            value: None,
            endpoint: None,
            replay: None,
            timeout_secs: default_timeout(),
        }
    }
}

fn default_timeout() -> u64 {
    30
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_init")]
    pub init_scale: f64,
    /// Fraction of each class held out for evaluation.
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    #[serde(default = "default_recall")]
    pub target_recall: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            init_scale: default_init(),
            holdout: default_holdout(),
            target_recall: default_recall(),
        }
    }
}

fn default_lr() -> f64 {
    TrainConfig::default().learning_rate
}

fn default_epochs() -> usize {
    TrainConfig::default().epochs
}

fn default_init() -> f64 {
    TrainConfig::default().init_scale
}

fn default_holdout() -> f64 {
    0.2
}

fn default_recall() -> f64 {
    0.7
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    pub max_notes_per_token: Option<usize>,
    pub max_filters_per_family: Option<usize>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub scheme: Option<SwapScheme>,
    pub output_dir: Option<PathBuf>,
    pub stub_classifier: Option<String>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` and makes every relative path absolute against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        let base = fs::canonicalize(&base).with_context(|| format!("resolving {}", base.display()))?;
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.corpus.path);
        fix(&mut self.corpus.labels);
        fix(&mut self.tokens.path);
        fix(&mut self.classifier.model);
        fix(&mut self.classifier.replay);
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(s) = o.scheme {
            self.scheme = s;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = Some(std::path::absolute(dir)?);
        }
        if let Some(stub) = &o.stub_classifier {
            let Some(file) = stub.strip_prefix("replay:") else {
                bail!("unsupported stub classifier `{stub}` (expected replay:<file>)");
            };
            self.classifier.kind = ClassifierKind::Replay;
            self.classifier.replay = Some(std::path::absolute(file)?);
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .context("no output directory: set `output_dir` in the config or pass --out")
    }

    pub fn filter_spec(&self) -> FilterSpec {
        FilterSpec {
            uniform: self.filters.uniform,
            onegram: self.filters.onegram,
            context: self.filters.context,
            seed: self.seed,
        }
    }

    pub fn audit_options(&self) -> AuditOptions {
        AuditOptions {
            scheme: self.scheme,
            workers: self.workers,
            max_notes_per_token: self.audit.max_notes_per_token,
            max_filters_per_family: self.audit.max_filters_per_family,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            seed: self.seed,
            init_scale: self.train.init_scale,
            class_weights: None,
        }
    }
}
