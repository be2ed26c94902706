//! Tokenized notes, corpus-level frequency statistics, line-delimited
//! ingestion and a seeded synthetic corpus generator.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate note id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible correlation {correlation} for `{token}`: {reason}")]
    InfeasibleCorrelation {
        token: String,
        correlation: f64,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A normalized vocabulary item. Cheap to clone.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(Arc<str>);

impl Token {
    /// Wraps an already-normalized string.
    pub fn new(text: impl Into<String>) -> Self {
        Token(Arc::from(text.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for Token {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Token {
    fn from(s: &str) -> Self {
        Token(Arc::from(s))
    }
}

impl From<String> for Token {
    fn from(s: String) -> Self {
        Token(Arc::from(s))
    }
}

/// Whole-word tokenization rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizationPolicy {
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for TokenizationPolicy {
    fn default() -> Self {
        TokenizationPolicy {
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

impl TokenizationPolicy {
    /// Normalizes a single whitespace-free word. Returns `None` when nothing
    /// survives normalization.
    pub fn normalize(&self, word: &str) -> Option<Token> {
        let mut s = if self.strip_punctuation {
            word.trim_matches(|c: char| c.is_ascii_punctuation())
        } else {
            word
        }
        .to_owned();
        if self.lowercase {
            s = s.to_lowercase();
            if self.strip_punctuation {
                s = s.trim_matches(|c: char| c.is_ascii_punctuation()).to_owned();
            }
        }
        (!s.is_empty()).then_some(Token::new(s))
    }
}

pub fn tokenize(text: &str, policy: &TokenizationPolicy) -> Vec<Token> {
    text.split_whitespace()
        .filter_map(|w| policy.normalize(w))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub id: String,
    pub tokens: Vec<Token>,
    #[serde(default, with = "label_serde", skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
}

impl Note {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>, label: Option<bool>) -> Self {
        Note {
            id: id.into(),
            tokens,
            label,
        }
    }

    /// Convenience constructor from string slices.
    pub fn from_words(id: impl Into<String>, words: &[&str], label: Option<bool>) -> Self {
        Note::new(id, words.iter().map(|&w| Token::from(w)).collect(), label)
    }

    pub fn contains(&self, u: &str) -> bool {
        self.tokens.iter().any(|t| t.as_str() == u)
    }

    pub fn term_frequency(&self, u: &str) -> usize {
        self.tokens.iter().filter(|t| t.as_str() == u).count()
    }
}

mod label_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(label: &Option<bool>, s: S) -> Result<S::Ok, S::Error> {
        match label {
            Some(l) => s.serialize_u8(u8::from(*l)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<bool>, D::Error> {
        match Option::<u8>::deserialize(d)? {
            None => Ok(None),
            Some(0) => Ok(Some(false)),
            Some(1) => Ok(Some(true)),
            Some(other) => Err(serde::de::Error::custom(format!(
                "label must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// Immutable note collection with vocabulary and frequency maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    notes: Vec<Note>,
    doc_frequency: BTreeMap<Token, usize>,
    token_frequency: BTreeMap<Token, usize>,
}

impl Corpus {
    pub fn new(notes: Vec<Note>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(notes.len());
        let mut doc_frequency = BTreeMap::new();
        let mut token_frequency = BTreeMap::new();
        for note in &notes {
            if !seen.insert(note.id.as_str()) {
                return Err(CorpusError::DuplicateId(note.id.clone()));
            }
            let mut distinct = BTreeSet::new();
            for t in &note.tokens {
                *token_frequency.entry(t.clone()).or_insert(0) += 1;
                distinct.insert(t);
            }
            for t in distinct {
                *doc_frequency.entry(t.clone()).or_insert(0) += 1;
            }
        }
        Ok(Corpus {
            notes,
            doc_frequency,
            token_frequency,
        })
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &Token> {
        self.doc_frequency.keys()
    }

    pub fn vocab_size(&self) -> usize {
        self.doc_frequency.len()
    }

    pub fn contains_token(&self, u: &str) -> bool {
        self.doc_frequency.contains_key(u)
    }

    pub fn doc_frequency(&self, u: &str) -> usize {
        self.doc_frequency.get(u).copied().unwrap_or(0)
    }

    pub fn token_frequency(&self, u: &str) -> usize {
        self.token_frequency.get(u).copied().unwrap_or(0)
    }

    pub fn doc_frequencies(&self) -> &BTreeMap<Token, usize> {
        &self.doc_frequency
    }

    pub fn token_frequencies(&self) -> &BTreeMap<Token, usize> {
        &self.token_frequency
    }

    /// Notes containing `u` at least once, in corpus order.
    pub fn subset_containing(&self, u: &str) -> CorpusView<'_> {
        CorpusView {
            notes: self.notes.iter().filter(|n| n.contains(u)).collect(),
        }
    }

    pub fn view(&self) -> CorpusView<'_> {
        CorpusView {
            notes: self.notes.iter().collect(),
        }
    }

    pub fn labels(&self) -> Option<Vec<bool>> {
        self.notes.iter().map(|n| n.label).collect()
    }

    /// Splits into `(train, holdout)`, sending `round(fraction * n_c)` notes
    /// of each class `c` to the holdout. Both halves keep corpus order.
    pub fn stratified_split(&self, fraction: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(CorpusError::InvalidSpec(format!("holdout fraction {fraction} must lie in [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut held = vec![false; self.notes.len()];
        for class in [false, true] {
            let mut idx = Vec::new();
            for (i, n) in self.notes.iter().enumerate() {
                match n.label {
                    Some(y) if y == class => idx.push(i),
                    Some(_) => {}
                    None => return Err(CorpusError::InvalidSpec(format!("note `{}` has no label", n.id))),
                }
            }
            idx.shuffle(&mut rng);
            let take = (fraction * idx.len() as f64).round() as usize;
            for &i in &idx[..take] {
                held[i] = true;
            }
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (n, h) in self.notes.iter().zip(held) {
            if h { test.push(n.clone()) } else { train.push(n.clone()) }
        }
        Ok((Corpus::new(train)?, Corpus::new(test)?))
    }

    /// Reads one note per line. Each line is a JSON object with `id`, an
    /// optional `label` (0/1) and either raw `text` or pre-split `tokens`.
    pub fn read_jsonl<R: BufRead>(reader: R, policy: &TokenizationPolicy) -> Result<Self, CorpusError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Record {
            id: String,
            #[serde(default)]
            text: Option<String>,
            #[serde(default)]
            tokens: Option<Vec<String>>,
            #[serde(default, with = "label_serde")]
            label: Option<bool>,
        }

        let mut notes = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| CorpusError::Parse { line: i + 1, message };
            let rec: Record = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let tokens = match (rec.text, rec.tokens) {
                (Some(text), None) => tokenize(&text, policy),
                (None, Some(tokens)) => {
                    if tokens.iter().any(|t| t.is_empty()) {
                        return Err(err("empty token in `tokens`".into()));
                    }
                    tokens.into_iter().map(Token::from).collect()
                }
                (Some(_), Some(_)) => return Err(err("both `text` and `tokens` given".into())),
                (None, None) => return Err(err("one of `text` or `tokens` is required".into())),
            };
            notes.push(Note::new(rec.id, tokens, rec.label));
        }
        Corpus::new(notes)
    }

    /// Writes the pre-tokenized line format accepted by [`Corpus::read_jsonl`].
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        for note in &self.notes {
            serde_json::to_writer(&mut w, note).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Borrowed selection of notes from a [`Corpus`].
#[derive(Clone, Debug)]
pub struct CorpusView<'a> {
    notes: Vec<&'a Note>,
}

impl<'a> CorpusView<'a> {
    pub fn from_notes(notes: Vec<&'a Note>) -> Self {
        CorpusView { notes }
    }

    pub fn notes(&self) -> &[&'a Note] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn token_frequencies(&self) -> BTreeMap<&'a Token, usize> {
        let mut freq = BTreeMap::new();
        for note in &self.notes {
            for t in &note.tokens {
                *freq.entry(t).or_insert(0) += 1;
            }
        }
        freq
    }

    /// Notes sorted by id, the canonical reduction order.
    pub fn sorted_by_id(mut self) -> Self {
        self.notes.sort_by(|a, b| a.id.cmp(&b.id));
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSignal {
    pub token: String,
    /// Target phi correlation between presence of the token and the label.
    pub correlation: f64,
    /// Marginal fraction of notes containing the token. Defaults to the
    /// positive rate, which admits the widest range of correlations.
    #[serde(default)]
    pub presence_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_notes: usize,
    pub note_length_min: usize,
    pub note_length_max: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub planted: Vec<PlantedSignal>,
    pub positive_rate: f64,
    /// Exponent of the Zipf law used for background tokens.
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
}

fn default_zipf() -> f64 {
    1.0
}

const MIN_BACKGROUND: usize = 10;

impl SyntheticSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, CorpusError> {
        toml::from_str(s).map_err(|e| CorpusError::InvalidSpec(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Name of the `i`-th background token (0 = most frequent).
    pub fn background_token(i: usize) -> Token {
        Token::new(format!("w{i:04}"))
    }

    pub fn background_count(&self) -> usize {
        self.vocab_size.saturating_sub(self.planted.len())
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.to_owned()));
        if self.vocab_size < self.planted.len() + MIN_BACKGROUND {
            return bad("vocab_size must be at least the number of planted signals + 10");
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad("positive_rate must lie in (0, 1)");
        }
        if self.note_length_min == 0 || self.note_length_min > self.note_length_max {
            return bad("note length range must satisfy 1 <= min <= max");
        }
        if !(self.zipf_exponent >= 0.0) {
            return bad("zipf_exponent must be non-negative");
        }
        let mut names = HashSet::new();
        for p in &self.planted {
            let policy = TokenizationPolicy::default();
            if policy.normalize(&p.token).as_ref().map(Token::as_str) != Some(p.token.as_str()) {
                return Err(CorpusError::InvalidSpec(format!(
                    "planted token `{}` is not a normalized token",
                    p.token
                )));
            }
            let is_background = p
                .token
                .strip_prefix('w')
                .is_some_and(|d| d.len() == 4 && d.bytes().all(|b| b.is_ascii_digit()));
            if is_background || !names.insert(p.token.as_str()) {
                return Err(CorpusError::InvalidSpec(format!(
                    "planted token `{}` collides with another token",
                    p.token
                )));
            }
        }
        Ok(())
    }
}

/// Conditional presence probabilities `(P(s=1|y=1), P(s=1|y=0))` giving a
/// phi correlation of `rho` with a label of rate `pi` and presence rate `q`.
fn presence_probabilities(rho: f64, pi: f64, q: f64) -> (f64, f64) {
    let spread = rho * (q * (1.0 - q) / (pi * (1.0 - pi))).sqrt();
    (q + (1.0 - pi) * spread, q - pi * spread)
}

/// Generates a labeled corpus: labels first (exact positive count), then
/// Zipf background tokens, then planted tokens substituted at a random
/// position with label-conditional probability.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let pi = spec.positive_rate;

    let mut planted = Vec::with_capacity(spec.planted.len());
    for p in &spec.planted {
        let q = p.presence_rate.unwrap_or(pi);
        let infeasible = |reason: String| CorpusError::InfeasibleCorrelation {
            token: p.token.clone(),
            correlation: p.correlation,
            reason,
        };
        if !(-1.0..=1.0).contains(&p.correlation) {
            return Err(infeasible("correlation must lie in [-1, 1]".into()));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(infeasible("presence rate must lie in (0, 1)".into()));
        }
        let (p1, p0) = presence_probabilities(p.correlation, pi, q);
        if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p0) {
            return Err(infeasible(format!(
                "with positive_rate {pi} and presence_rate {q} the conditional presence \
                 probabilities would be {p1:.4} (positive) and {p0:.4} (negative)"
            )));
        }
        planted.push((Token::from(p.token.as_str()), p1, p0));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_pos = (pi * spec.num_notes as f64).round() as usize;
    let mut labels: Vec<bool> = (0..spec.num_notes).map(|i| i < n_pos).collect();
    labels.shuffle(&mut rng);

    let background: Vec<Token> = (0..spec.background_count())
        .map(SyntheticSpec::background_token)
        .collect();
    let weights: Vec<f64> = (1..=background.len())
        .map(|r| (r as f64).powf(-spec.zipf_exponent))
        .collect();
    let zipf = WeightedIndex::new(&weights).expect("positive weights");

    let width = spec.num_notes.max(1).to_string().len().max(6);
    let mut notes = Vec::with_capacity(spec.num_notes);
    for (i, &label) in labels.iter().enumerate() {
        let len = rng.random_range(spec.note_length_min..=spec.note_length_max);
        let mut tokens: Vec<Token> = (0..len)
            .map(|_| background[zipf.sample(&mut rng)].clone())
            .collect();
        for (token, p1, p0) in &planted {
            let p = if label { *p1 } else { *p0 };
            if rng.random_bool(p) {
                let pos = rng.random_range(0..tokens.len());
                tokens[pos] = token.clone();
            }
        }
        notes.push(Note::new(format!("n{i:0width$}"), tokens, Some(label)));
    }
    Corpus::new(notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(ts: &[Token]) -> Vec<&str> {
        ts.iter().map(Token::as_str).collect()
    }

    #[test]
    fn tokenize_examples() {
        let p = TokenizationPolicy::default();
        assert_eq!(words(&tokenize("His mom visited.", &p)), ["his", "mom", "visited"]);
        assert!(tokenize("", &p).is_empty());
        assert_eq!(words(&tokenize("MG  mg", &p)), ["mg", "mg"]);
        assert_eq!(words(&tokenize("(bp) ... 120/80,", &p)), ["bp", "120/80"]);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(word in "\\PC{1,12}") {
            let p = TokenizationPolicy::default();
            if let Some(t) = p.normalize(&word) {
                prop_assert_eq!(p.normalize(t.as_str()), Some(t.clone()));
            }
        }
    }

    #[test]
    fn build_corpus_counts() {
        let c = Corpus::new(vec![
            Note::from_words("1", &["hi", "there"], None),
            Note::from_words("2", &["hi", "hi"], None),
        ])
        .unwrap();
        assert_eq!(c.doc_frequency("hi"), 2);
        assert_eq!(c.doc_frequency("there"), 1);
        assert_eq!(c.token_frequency("hi"), 3);

        let empty = Corpus::new(vec![]).unwrap();
        assert_eq!(empty.vocab_size(), 0);

        let one = Corpus::new(vec![Note::from_words("x", &["a", "a", "b"], None)]).unwrap();
        assert_eq!(one.token_frequency("a"), 2);
        assert_eq!(one.doc_frequency("a"), 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Corpus::new(vec![
            Note::from_words("a", &["x"], None),
            Note::from_words("a", &["y"], None),
        ])
        .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn subset_examples() {
        let c = Corpus::new(vec![
            Note::from_words("1", &["hi", "there"], None),
            Note::from_words("2", &["hi", "hi"], None),
        ])
        .unwrap();
        let v = c.subset_containing("there");
        assert_eq!(v.len(), 1);
        assert_eq!(v.notes()[0].id, "1");
        assert!(c.subset_containing("absent").is_empty());
        assert_eq!(c.subset_containing("hi").len(), 2);
    }

    #[test]
    fn empty_notes_are_kept() {
        let c = Corpus::new(vec![Note::new("e", vec![], None)]).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.vocab_size(), 0);
    }

    #[test]
    fn jsonl_ingestion_text_and_tokens() {
        let input = r#"{"id": "a", "text": "Blood pressure, stable.", "label": 1}
{"id": "b", "tokens": ["blood", "sugar"], "label": 0}

{"id": "c", "text": ""}
"#;
        let c = Corpus::read_jsonl(input.as_bytes(), &TokenizationPolicy::default()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(words(&c.notes()[0].tokens), ["blood", "pressure", "stable"]);
        assert_eq!(c.notes()[0].label, Some(true));
        assert_eq!(c.notes()[1].label, Some(false));
        assert_eq!(c.notes()[2].label, None);
        assert_eq!(c.doc_frequency("blood"), 2);
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let policy = TokenizationPolicy::default();
        let bad_label = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\",\"label\":2}\n";
        match Corpus::read_jsonl(bad_label.as_bytes(), &policy) {
            Err(CorpusError::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let neither = "{\"id\":\"a\"}\n";
        assert!(matches!(
            Corpus::read_jsonl(neither.as_bytes(), &policy),
            Err(CorpusError::Parse { line: 1, .. })
        ));
        let dup = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
        assert!(matches!(
            Corpus::read_jsonl(dup.as_bytes(), &policy),
            Err(CorpusError::DuplicateId(_))
        ));
    }

    fn small_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            seed,
            num_notes: 300,
            note_length_min: 10,
            note_length_max: 30,
            vocab_size: 40,
            planted: vec![PlantedSignal {
                token: "stroke".into(),
                correlation: 0.8,
                presence_rate: None,
            }],
            positive_rate: 0.2,
            zipf_exponent: 1.0,
        }
    }

    #[test]
    fn synthetic_is_deterministic_per_seed() {
        let a = generate_synthetic(&small_spec(7)).unwrap();
        let b = generate_synthetic(&small_spec(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small_spec(8)).unwrap();
        assert_ne!(a.notes(), c.notes());
        let va: Vec<_> = a.vocabulary().collect();
        let vc: Vec<_> = c.vocabulary().collect();
        assert_eq!(va, vc);
    }

    #[test]
    fn synthetic_rejects_bad_specs() {
        let mut s = small_spec(1);
        s.vocab_size = 5;
        assert!(matches!(generate_synthetic(&s), Err(CorpusError::InvalidSpec(_))));

        let mut s = small_spec(1);
        s.planted[0].presence_rate = Some(0.5);
        assert!(matches!(
            generate_synthetic(&s),
            Err(CorpusError::InfeasibleCorrelation { .. })
        ));

        let mut s = small_spec(1);
        s.planted[0].token = "w0003".into();
        assert!(matches!(generate_synthetic(&s), Err(CorpusError::InvalidSpec(_))));
    }

    #[test]
    fn synthetic_spec_toml_roundtrip() {
        let text = r#"
seed = 7
num_notes = 100
note_length_min = 5
note_length_max = 9
vocab_size = 30
positive_rate = 0.1
planted = [{ token = "stroke", correlation = 0.8 }]
"#;
        let spec = SyntheticSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.planted[0].token, "stroke");
        assert_eq!(spec.zipf_exponent, 1.0);
        assert_eq!(SyntheticSpec::from_toml_str(&spec.to_toml_string()).unwrap(), spec);
        assert!(SyntheticSpec::from_toml_str("seed = 1\nbogus = 2").is_err());
    }

    #[test]
    fn stratified_split_keeps_class_balance() {
        let c = generate_synthetic(&small_spec(3)).unwrap();
        let (train, test) = c.stratified_split(0.2, 9).unwrap();
        let pos = |c: &Corpus| c.notes().iter().filter(|n| n.label == Some(true)).count();
        assert_eq!(train.len() + test.len(), c.len());
        assert_eq!(pos(&test), (0.2 * pos(&c) as f64).round() as usize);
        assert_eq!(c.stratified_split(0.2, 9).unwrap().1, test);
        assert!(c.stratified_split(1.0, 9).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn corpus_invariants_and_roundtrip(
            docs in prop::collection::vec(prop::collection::vec("[a-e]{1,2}", 0..8), 0..12)
        ) {
            let notes: Vec<Note> = docs
                .iter()
                .enumerate()
                .map(|(i, d)| Note::new(i.to_string(), d.iter().map(|w| Token::from(w.as_str())).collect(), None))
                .collect();
            let c = Corpus::new(notes).unwrap();
            for note in c.notes() {
                for t in &note.tokens {
                    prop_assert!(c.contains_token(t.as_str()));
                }
            }
            for (t, &df) in c.doc_frequencies() {
                prop_assert!(df > 0 && df <= c.len());
                prop_assert!(c.token_frequency(t.as_str()) >= df);
                prop_assert_eq!(c.subset_containing(t.as_str()).len(), df);
            }
            let mut buf = Vec::new();
            c.write_jsonl(&mut buf).unwrap();
            let back = Corpus::read_jsonl(buf.as_slice(), &TokenizationPolicy::default()).unwrap();
            prop_assert_eq!(back.doc_frequencies(), c.doc_frequencies());
            prop_assert_eq!(back.token_frequencies(), c.token_frequencies());
        }
    }
}
