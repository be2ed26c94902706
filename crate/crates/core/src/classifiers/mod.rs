//! The note → probability contract and its implementations.

mod external;
mod linear;
pub mod metrics;
mod tfidf;

use std::collections::HashMap;
use std::io::Read;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Note, Token};
use crate::wire::WireError;

pub use external::ExternalClassifier;
pub use linear::{
    read_model, train_linear, write_model, ClassWeights, LinearModel, ModelIoError, TrainConfig,
    TrainError, TrainedModel,
};
pub use tfidf::{TfidfEmbedding, TfidfVocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("constant value {0} is outside [0, 1]")]
    InvalidConstant(f64),
    #[error("classifier returned probability {0}, outside [0, 1]")]
    InvalidProbability(f64),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("no recorded probability for note `{note_id}` (content hash {hash})")]
    ReplayMiss { note_id: String, hash: String },
    #[error("replay file line {line}: {message}")]
    ReplayParse { line: u64, message: String },
}

/// A binary classifier producing the probability of the positive class.
///
/// `predict` must be a pure function of the note's tokens for a fixed model
/// state and must return a value in `[0, 1]`.
pub trait Classifier: Send + Sync {
    fn id(&self) -> &str;

    fn predict(&self, note: &Note) -> Result<f64, ClassifierError>;

    /// Scores a batch. Implementations backed by a remote model pipeline
    /// the requests.
    fn predict_many(&self, notes: &[Note]) -> Result<Vec<f64>, ClassifierError> {
        notes.iter().map(|n| self.predict(n)).collect()
    }

    /// Whether `predict` may be called from several threads at once.
    fn supports_concurrency(&self) -> bool {
        true
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn predict(&self, note: &Note) -> Result<f64, ClassifierError> {
        (**self).predict(note)
    }
    fn predict_many(&self, notes: &[Note]) -> Result<Vec<f64>, ClassifierError> {
        (**self).predict_many(notes)
    }
    fn supports_concurrency(&self) -> bool {
        (**self).supports_concurrency()
    }
}

pub(crate) fn check_probability(p: f64) -> Result<f64, ClassifierError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(ClassifierError::InvalidProbability(p))
    }
}

#[derive(Clone, Debug)]
pub struct ConstantClassifier {
    value: f64,
    id: String,
}

impl ConstantClassifier {
    pub fn new(value: f64) -> Result<Self, ClassifierError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(ClassifierError::InvalidConstant(value));
        }
        Ok(ConstantClassifier {
            value,
            id: format!("constant({value})"),
        })
    }
}

impl Classifier for ConstantClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, _note: &Note) -> Result<f64, ClassifierError> {
        Ok(self.value)
    }
}

/// Stable content hash of a token sequence (hex, 128 bits).
pub fn note_hash(tokens: &[Token]) -> String {
    let mut h = Sha256::new();
    for t in tokens {
        h.update((t.as_str().len() as u64).to_le_bytes());
        h.update(t.as_str().as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// Replays recorded probabilities. Perturbed notes keep their id, so the
/// content hash is consulted first and the note id second.
#[derive(Clone, Debug, Default)]
pub struct ReplayClassifier {
    by_hash: HashMap<String, f64>,
    by_id: HashMap<String, f64>,
    id: String,
}

impl ReplayClassifier {
    pub fn new(id: impl Into<String>) -> Self {
        ReplayClassifier {
            id: id.into(),
            ..Default::default()
        }
    }

    pub fn record_note(&mut self, note_id: impl Into<String>, p: f64) -> Result<(), ClassifierError> {
        self.by_id.insert(note_id.into(), check_probability(p)?);
        Ok(())
    }

    pub fn record_tokens(&mut self, tokens: &[Token], p: f64) -> Result<(), ClassifierError> {
        self.by_hash.insert(note_hash(tokens), check_probability(p)?);
        Ok(())
    }

    /// Reads `key,p` rows where `key` is `id:<note id>` or `hash:<hex>`.
    pub fn from_csv<R: Read>(id: impl Into<String>, reader: R) -> Result<Self, ClassifierError> {
        let mut replay = ReplayClassifier::new(id);
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for row in rdr.records() {
            let row = row.map_err(|e| ClassifierError::ReplayParse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = |message: String| ClassifierError::ReplayParse { line, message };
            let (Some(key), Some(p)) = (row.get(0), row.get(1)) else {
                return Err(bad("expected two columns".into()));
            };
            let p: f64 = p.parse().map_err(|_| bad(format!("bad probability `{p}`")))?;
            let p = check_probability(p).map_err(|e| bad(e.to_string()))?;
            if let Some(id) = key.strip_prefix("id:") {
                replay.by_id.insert(id.to_owned(), p);
            } else if let Some(h) = key.strip_prefix("hash:") {
                replay.by_hash.insert(h.to_owned(), p);
            } else {
                return Err(bad(format!("key `{key}` must start with id: or hash:")));
            }
        }
        Ok(replay)
    }
}

impl Classifier for ReplayClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, note: &Note) -> Result<f64, ClassifierError> {
        let hash = note_hash(&note.tokens);
        self.by_hash
            .get(&hash)
            .or_else(|| self.by_id.get(&note.id))
            .copied()
            .ok_or(ClassifierError::ReplayMiss {
                note_id: note.id.clone(),
                hash,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_classifier() {
        let one = ConstantClassifier::new(1.0).unwrap();
        let note = Note::from_words("x", &["his", "mom", "visited"], None);
        assert_eq!(one.predict(&note).unwrap(), 1.0);
        let perturbed = Note::from_words("x", &["his", "dad", "visited"], None);
        assert_eq!((one.predict(&note).unwrap() - one.predict(&perturbed).unwrap()).abs(), 0.0);
        let half = ConstantClassifier::new(0.5).unwrap();
        assert_eq!(half.predict(&Note::new("e", vec![], None)).unwrap(), 0.5);
        assert!(ConstantClassifier::new(1.5).is_err());
        assert!(ConstantClassifier::new(-0.1).is_err());
        assert!(ConstantClassifier::new(f64::NAN).is_err());
    }

    #[test]
    fn hash_separates_token_boundaries() {
        let a = note_hash(&[Token::from("ab"), Token::from("c")]);
        let b = note_hash(&[Token::from("a"), Token::from("bc")]);
        assert_ne!(a, b);
        assert_eq!(a.len(), 32);
    }

    #[test]
    fn replay_prefers_content_hash() {
        let orig = Note::from_words("n1", &["a", "b"], None);
        let pert = Note::from_words("n1", &["c", "b"], None);
        let mut r = ReplayClassifier::new("replay");
        r.record_note("n1", 0.8).unwrap();
        r.record_tokens(&pert.tokens, 0.3).unwrap();
        assert_eq!(r.predict(&orig).unwrap(), 0.8);
        assert_eq!(r.predict(&pert).unwrap(), 0.3);
        let other = Note::from_words("n2", &["z"], None);
        assert!(matches!(r.predict(&other), Err(ClassifierError::ReplayMiss { .. })));
    }

    #[test]
    fn replay_csv() {
        let h = note_hash(&[Token::from("c")]);
        let text = format!("key,p\nid:n1,0.8\nhash:{h},0.25\n");
        let r = ReplayClassifier::from_csv("r", text.as_bytes()).unwrap();
        assert_eq!(r.predict(&Note::from_words("n9", &["c"], None)).unwrap(), 0.25);
        assert_eq!(r.predict(&Note::from_words("n1", &["q"], None)).unwrap(), 0.8);
        assert!(ReplayClassifier::from_csv("r", "key,p\nid:n1,1.2\n".as_bytes()).is_err());
        assert!(ReplayClassifier::from_csv("r", "key,p\nfoo,0.1\n".as_bytes()).is_err());
    }
}
