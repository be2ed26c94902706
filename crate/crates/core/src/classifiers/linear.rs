//! Logistic regression over tf-idf features, trained by full-batch
//! gradient descent on class-weighted cross-entropy.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::tfidf::{TfidfEmbedding, TfidfVocabulary};
use super::{Classifier, ClassifierError};
use crate::corpus::{Corpus, Note, Token};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("training corpus is empty")]
    Empty,
    #[error("note `{0}` has no label")]
    Unlabeled(String),
    #[error("training labels contain only class {0}; both classes are required")]
    SingleClass(u8),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

/// Per-class loss weights. Positives are weighted by the fraction of
/// negatives and vice versa.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl ClassWeights {
    pub fn from_labels(labels: &[bool]) -> Self {
        let n = labels.len() as f64;
        let pos = labels.iter().filter(|&&y| y).count() as f64;
        ClassWeights {
            positive: (n - pos) / n,
            negative: pos / n,
        }
    }

    pub fn swapped(self) -> Self {
        ClassWeights {
            positive: self.negative,
            negative: self.positive,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Half-width of the uniform weight initialization.
    pub init_scale: f64,
    /// Derived from the training labels when `None`.
    pub class_weights: Option<ClassWeights>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 300,
            seed: 0,
            init_scale: 0.01,
            class_weights: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    vocab: TfidfVocabulary,
    weights: Vec<f64>,
    bias: f64,
    seed: u64,
    id: String,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LinearModel {
    pub fn new(vocab: TfidfVocabulary, weights: Vec<f64>, bias: f64, seed: u64) -> Self {
        assert_eq!(vocab.len(), weights.len(), "one weight per vocabulary entry");
        LinearModel {
            vocab,
            weights,
            bias,
            seed,
            id: format!("tfidf-linear(seed={seed})"),
        }
    }

    pub fn vocabulary(&self) -> &TfidfVocabulary {
        &self.vocab
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weight_of(&self, t: &str) -> Option<f64> {
        self.vocab.index_of(t).map(|i| self.weights[i])
    }

    pub fn embed(&self, tokens: &[Token]) -> TfidfEmbedding {
        self.vocab.embed(tokens)
    }

    pub fn probability(&self, embedding: &TfidfEmbedding) -> f64 {
        logistic(embedding.dot(&self.weights) + self.bias)
    }
}

impl Classifier for LinearModel {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, note: &Note) -> Result<f64, ClassifierError> {
        Ok(self.probability(&self.embed(&note.tokens)))
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: LinearModel,
    pub class_weights: ClassWeights,
    /// Weighted cross-entropy at the returned weights.
    pub final_loss: f64,
}

/// Weighted mean cross-entropy, normalized by the total example weight.
fn weighted_loss(probs: &[f64], labels: &[bool], cw: ClassWeights) -> f64 {
    let (mut total, mut mass) = (0.0, 0.0);
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(1e-15, 1.0 - 1e-15);
        let (c, l) = if y { (cw.positive, -p.ln()) } else { (cw.negative, -(1.0 - p).ln()) };
        total += c * l;
        mass += c;
    }
    if mass > 0.0 {
        total / mass
    } else {
        0.0
    }
}

pub fn train_linear(corpus: &Corpus, config: &TrainConfig) -> Result<TrainedModel, TrainError> {
    if !(config.learning_rate > 0.0) || !(config.init_scale >= 0.0) {
        return Err(TrainError::InvalidConfig(
            "learning_rate must be positive and init_scale non-negative".into(),
        ));
    }
    let vocab = TfidfVocabulary::fit(corpus).ok_or(TrainError::Empty)?;
    let labels: Vec<bool> = corpus
        .notes()
        .iter()
        .map(|n| n.label.ok_or_else(|| TrainError::Unlabeled(n.id.clone())))
        .collect::<Result<_, _>>()?;
    match labels.iter().filter(|&&y| y).count() {
        0 => return Err(TrainError::SingleClass(0)),
        k if k == labels.len() => return Err(TrainError::SingleClass(1)),
        _ => {}
    }
    let cw = config.class_weights.unwrap_or_else(|| ClassWeights::from_labels(&labels));
    let example_weights: Vec<f64> = labels
        .iter()
        .map(|&y| if y { cw.positive } else { cw.negative })
        .collect();
    let mass: f64 = example_weights.iter().sum();
    if !(mass > 0.0) {
        return Err(TrainError::InvalidConfig("class weights sum to zero".into()));
    }

    let features: Vec<TfidfEmbedding> = corpus.notes().iter().map(|n| vocab.embed(&n.tokens)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights: Vec<f64> = (0..vocab.len())
        .map(|_| {
            if config.init_scale > 0.0 {
                rng.random_range(-config.init_scale..=config.init_scale)
            } else {
                0.0
            }
        })
        .collect();
    let mut bias = 0.0;

    let mut grad = vec![0.0; weights.len()];
    for _ in 0..config.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_bias = 0.0;
        for ((x, &y), &c) in features.iter().zip(&labels).zip(&example_weights) {
            let p = logistic(x.dot(&weights) + bias);
            let r = c * (p - if y { 1.0 } else { 0.0 });
            for &(i, v) in x.entries() {
                grad[i] += r * v;
            }
            grad_bias += r;
        }
        let step = config.learning_rate / mass;
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= step * g;
        }
        bias -= step * grad_bias;
    }

    let probs: Vec<f64> = features.iter().map(|x| logistic(x.dot(&weights) + bias)).collect();
    let final_loss = weighted_loss(&probs, &labels, cw);
    Ok(TrainedModel {
        model: LinearModel::new(vocab, weights, bias, config.seed),
        class_weights: cw,
        final_loss,
    })
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const MODEL_MAGIC: &str = "# sensaudit-linear-model v1";

/// Writes `# key = value` header lines followed by a `token,df,weight` table.
pub fn write_model<W: Write>(mut w: W, model: &LinearModel) -> Result<(), ModelIoError> {
    writeln!(w, "{MODEL_MAGIC}")?;
    writeln!(w, "# bias = {}", model.bias)?;
    writeln!(w, "# log_base = e")?;
    writeln!(w, "# seed = {}", model.seed)?;
    writeln!(w, "# num_docs = {}", model.vocab.num_docs())?;
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(["token", "df", "weight"])?;
    for (i, t) in model.vocab.tokens().iter().enumerate() {
        wtr.write_record([
            t.as_str(),
            &model.vocab.doc_frequency(i).to_string(),
            &model.weights[i].to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_model<R: BufRead>(mut r: R) -> Result<LinearModel, ModelIoError> {
    let fmt = |m: String| ModelIoError::Format(m);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MODEL_MAGIC {
        return Err(fmt("missing model header".into()));
    }
    let (mut bias, mut seed, mut num_docs) = (None, None, None);
    loop {
        line.clear();
        r.read_line(&mut line)?;
        let Some(kv) = line.strip_prefix('#') else { break };
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| fmt(format!("bad header line `{}`", line.trim_end())))?;
        let value = value.trim();
        let parse_err = |_| fmt(format!("bad value for `{}`", key.trim()));
        match key.trim() {
            "bias" => bias = Some(value.parse::<f64>().map_err(|_| fmt("bad bias".into()))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(parse_err)?),
            "num_docs" => num_docs = Some(value.parse::<usize>().map_err(parse_err)?),
            "log_base" if value == "e" => {}
            "log_base" => return Err(fmt(format!("unsupported log base `{value}`"))),
            other => return Err(fmt(format!("unknown header key `{other}`"))),
        }
    }
    let (Some(bias), Some(seed), Some(num_docs)) = (bias, seed, num_docs) else {
        return Err(fmt("header must define bias, seed and num_docs".into()));
    };
    // `line` now holds the table header.
    let rest = line.clone() + &{
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        s
    };
    let mut rdr = csv::Reader::from_reader(rest.as_bytes());
    let mut dfs = Vec::new();
    let mut weights = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let bad = || fmt(format!("bad row {:?}", row));
        let token = row.get(0).filter(|t| !t.is_empty()).ok_or_else(bad)?;
        let df: usize = row.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let weight: f64 = row.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        dfs.push((Token::from(token), df));
        weights.push((Token::from(token), weight));
    }
    let vocab = TfidfVocabulary::from_parts(num_docs, dfs)
        .ok_or_else(|| fmt("inconsistent document frequencies".into()))?;
    if vocab.len() != weights.len() {
        return Err(fmt("duplicate tokens in weight table".into()));
    }
    weights.sort_by(|a, b| a.0.cmp(&b.0));
    let weights = weights.into_iter().map(|(_, w)| w).collect();
    Ok(LinearModel::new(vocab, weights, bias, seed))
}
