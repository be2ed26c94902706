//! Token replacement filters and the perturbation function.
//!
//! A filter maps a token of interest `u` to a replacement `h(u)`. Three
//! families are built here: uniform draws from the vocabulary, the most
//! frequent tokens of the notes containing `u`, and in-context candidates
//! from a [`ReplacementProvider`].

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusView, Note, Token};
use crate::wire::{ContextResponse, WireClient, WireError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbationError {
    #[error("uniform filters need at least 2 vocabulary tokens, got {0}")]
    VocabularyTooSmall(usize),
    #[error("no notes contain `{0}`")]
    EmptySubset(String),
    #[error("filter set is empty")]
    EmptyFilterSet,
    #[error("filter {filter} is not defined for `{token}`")]
    Undefined { filter: String, token: String },
    #[error("mask index {index} out of bounds for note of length {len}")]
    MaskOutOfBounds { index: usize, len: usize },
    #[error("replacement provider `{provider}` failed: {message}")]
    Provider { provider: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Uniform,
    #[serde(rename = "onegram")]
    OneGram,
    Context,
    Explicit,
}

impl FilterKind {
    pub const FAMILIES: [FilterKind; 3] = [FilterKind::Uniform, FilterKind::OneGram, FilterKind::Context];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Uniform => "uniform",
            FilterKind::OneGram => "onegram",
            FilterKind::Context => "context",
            FilterKind::Explicit => "explicit",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SwapScheme {
    /// Replace only the first occurrence.
    #[serde(rename = "one-swap")]
    OneSwap,
    /// Replace every occurrence.
    #[serde(rename = "multi-swap")]
    MultiSwap,
}

impl SwapScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            SwapScheme::OneSwap => "one-swap",
            SwapScheme::MultiSwap => "multi-swap",
        }
    }
}

impl fmt::Display for SwapScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SwapScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one-swap" | "one_swap" => Ok(SwapScheme::OneSwap),
            "multi-swap" | "multi_swap" => Ok(SwapScheme::MultiSwap),
            other => Err(format!("unknown swap scheme `{other}` (one-swap or multi-swap)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Rule {
    /// Uniform draw from `candidates \ {u}`, seeded by `(seed, index, u)`.
    Uniform {
        candidates: Arc<[Token]>,
        seed: u64,
        index: usize,
    },
    Map(BTreeMap<Token, Token>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationFilter {
    kind: FilterKind,
    rule: Rule,
    provenance: String,
    seed: Option<u64>,
}

impl PerturbationFilter {
    /// A filter with an explicit token → token table.
    pub fn explicit(mapping: BTreeMap<Token, Token>, provenance: impl Into<String>) -> Self {
        Self::mapped(FilterKind::Explicit, mapping, provenance.into())
    }

    fn mapped(kind: FilterKind, mapping: BTreeMap<Token, Token>, provenance: String) -> Self {
        PerturbationFilter {
            kind,
            rule: Rule::Map(mapping),
            provenance,
            seed: None,
        }
    }

    fn single(kind: FilterKind, u: &Token, replacement: Token, provenance: String) -> Self {
        Self::mapped(kind, BTreeMap::from([(u.clone(), replacement)]), provenance)
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `h(u)`, or `None` where the filter is undefined.
    pub fn apply(&self, u: &str) -> Option<Token> {
        match &self.rule {
            Rule::Map(m) => m.get(u).cloned(),
            Rule::Uniform { candidates, seed, index } => {
                let own = candidates.binary_search_by(|t| t.as_str().cmp(u)).ok();
                let pool = candidates.len() - usize::from(own.is_some());
                if pool == 0 {
                    return None;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(*seed, *index, u));
                let mut k = rng.random_range(0..pool);
                if own.is_some_and(|p| k >= p) {
                    k += 1;
                }
                Some(candidates[k].clone())
            }
        }
    }
}

fn derive_seed(seed: u64, index: usize, u: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    h.update(u.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Ordered, non-empty collection of filters.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSet {
    filters: Vec<PerturbationFilter>,
}

impl FilterSet {
    pub fn new(filters: Vec<PerturbationFilter>) -> Result<Self, PerturbationError> {
        if filters.is_empty() {
            return Err(PerturbationError::EmptyFilterSet);
        }
        Ok(FilterSet { filters })
    }

    pub fn filters(&self) -> &[PerturbationFilter] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn family_labels(&self) -> impl Iterator<Item = FilterKind> + '_ {
        self.filters.iter().map(|f| f.kind)
    }
}

/// Output of a filter builder. `requested - filters.len()` filters could
/// not be built for lack of candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBuild {
    pub filters: Vec<PerturbationFilter>,
    pub requested: usize,
}

impl FilterBuild {
    pub fn is_short(&self) -> bool {
        self.filters.len() < self.requested
    }
}

/// Replaces the first (one-swap) or every (multi-swap) occurrence of `u`
/// with `replacement`. Notes without `u` come back unchanged.
pub fn perturb_with(note: &Note, u: &str, replacement: &Token, scheme: SwapScheme) -> Note {
    let mut out = note.clone();
    match scheme {
        SwapScheme::OneSwap => {
            if let Some(t) = out.tokens.iter_mut().find(|t| t.as_str() == u) {
                *t = replacement.clone();
            }
        }
        SwapScheme::MultiSwap => {
            for t in out.tokens.iter_mut().filter(|t| t.as_str() == u) {
                *t = replacement.clone();
            }
        }
    }
    out
}

pub fn perturb(
    note: &Note,
    u: &str,
    h: &PerturbationFilter,
    scheme: SwapScheme,
) -> Result<Note, PerturbationError> {
    if !note.contains(u) {
        return Ok(note.clone());
    }
    let replacement = h.apply(u).ok_or_else(|| PerturbationError::Undefined {
        filter: h.provenance.clone(),
        token: u.to_owned(),
    })?;
    Ok(perturb_with(note, u, &replacement, scheme))
}

/// `count` filters, each sending `u` to a uniform draw from `vocab \ {u}`.
pub fn build_uniform_filters<I>(vocab: I, count: usize, seed: u64) -> Result<FilterBuild, PerturbationError>
where
    I: IntoIterator<Item = Token>,
{
    let mut candidates: Vec<Token> = vocab.into_iter().collect();
    candidates.sort();
    candidates.dedup();
    if candidates.len() < 2 {
        return Err(PerturbationError::VocabularyTooSmall(candidates.len()));
    }
    let candidates: Arc<[Token]> = candidates.into();
    let filters = (0..count)
        .map(|index| PerturbationFilter {
            kind: FilterKind::Uniform,
            rule: Rule::Uniform {
                candidates: Arc::clone(&candidates),
                seed,
                index,
            },
            provenance: format!("uniform draw #{index} (seed {seed})"),
            seed: Some(seed),
        })
        .collect();
    Ok(FilterBuild { filters, requested: count })
}

/// Filter `i` sends `u` to the `i`-th most frequent other token among the
/// notes containing `u`; ties go to the lexicographically smaller token.
pub fn build_onegram_filters(
    corpus_u: &CorpusView<'_>,
    u: &Token,
    count: usize,
) -> Result<FilterBuild, PerturbationError> {
    if corpus_u.is_empty() {
        return Err(PerturbationError::EmptySubset(u.to_string()));
    }
    let mut ranked: Vec<(&Token, usize)> = corpus_u
        .token_frequencies()
        .into_iter()
        .filter(|(t, _)| *t != u)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let filters = ranked
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(i, (t, n))| {
            PerturbationFilter::single(
                FilterKind::OneGram,
                u,
                t.clone(),
                format!("1-gram #{} `{t}` ({n} occurrences)", i + 1),
            )
        })
        .collect();
    Ok(FilterBuild { filters, requested: count })
}

/// Source of in-context replacement candidates for a masked position.
pub trait ReplacementProvider: Send + Sync {
    fn id(&self) -> &str;

    /// Up to `k` candidates for `tokens[mask_index]`, most likely first.
    fn replacements(&self, tokens: &[Token], mask_index: usize, k: usize) -> Result<Vec<Token>, PerturbationError>;
}

pub fn build_context_filters(
    provider: &dyn ReplacementProvider,
    note: &Note,
    position: usize,
    count: usize,
) -> Result<FilterBuild, PerturbationError> {
    let u = note.tokens.get(position).ok_or(PerturbationError::MaskOutOfBounds {
        index: position,
        len: note.tokens.len(),
    })?;
    let mut candidates = provider.replacements(&note.tokens, position, count)?;
    candidates.truncate(count);
    let filters = candidates
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let provenance = format!("context #{} `{t}` from {} at position {position}", i + 1, provider.id());
            PerturbationFilter::single(FilterKind::Context, u, t, provenance)
        })
        .collect();
    Ok(FilterBuild { filters, requested: count })
}

/// Offline stand-in for a masked language model: ranks candidates by how
/// often they occur at the same relative offsets to the surrounding
/// context tokens elsewhere in the corpus.
pub struct CooccurrenceProvider {
    window: usize,
    /// Sorted, so ids order like the tokens themselves.
    vocab: Vec<Token>,
    index: HashMap<Token, u32>,
    /// (context token, offset of the candidate relative to it) → (candidate, count)
    counts: HashMap<(u32, i32), Vec<(u32, u32)>>,
}

thread_local! {
    static SCRATCH: RefCell<Vec<u64>> = const { RefCell::new(Vec::new()) };
}

impl CooccurrenceProvider {
    pub const DEFAULT_WINDOW: usize = 3;

    pub fn new(corpus: &Corpus, window: usize) -> Self {
        let vocab: Vec<Token> = corpus.vocabulary().cloned().collect();
        let index: HashMap<Token, u32> = vocab.iter().cloned().enumerate().map(|(i, t)| (t, i as u32)).collect();
        let mut tally: HashMap<(u32, i32), HashMap<u32, u32>> = HashMap::new();
        let w = window as i32;
        for note in corpus.notes() {
            let ids: Vec<u32> = note.tokens.iter().map(|t| index[t]).collect();
            for (i, &ctx) in ids.iter().enumerate() {
                for off in (-w..=w).filter(|&o| o != 0) {
                    let j = i as i64 + off as i64;
                    if j < 0 || j >= ids.len() as i64 {
                        continue;
                    }
                    *tally.entry((ctx, off)).or_default().entry(ids[j as usize]).or_insert(0) += 1;
                }
            }
        }
        let counts = tally
            .into_iter()
            .map(|(key, cands)| {
                let mut v: Vec<(u32, u32)> = cands.into_iter().collect();
                v.sort_unstable();
                (key, v)
            })
            .collect();
        CooccurrenceProvider {
            window,
            vocab,
            index,
            counts,
        }
    }
}

impl ReplacementProvider for CooccurrenceProvider {
    fn id(&self) -> &str {
        "cooccurrence"
    }

    fn replacements(&self, tokens: &[Token], mask_index: usize, k: usize) -> Result<Vec<Token>, PerturbationError> {
        let masked = tokens.get(mask_index).ok_or(PerturbationError::MaskOutOfBounds {
            index: mask_index,
            len: tokens.len(),
        })?;
        let masked_id = self.index.get(masked).copied();
        SCRATCH.with(|scratch| {
            let mut scores = scratch.borrow_mut();
            scores.resize(self.vocab.len(), 0);
            let mut touched: Vec<u32> = Vec::new();
            let w = self.window as i64;
            for d in (-w..=w).filter(|&d| d != 0) {
                let pos = mask_index as i64 + d;
                if pos < 0 || pos >= tokens.len() as i64 {
                    continue;
                }
                let Some(&ctx) = self.index.get(&tokens[pos as usize]) else { continue };
                // the masked slot sits at offset -d from this context token
                let Some(cands) = self.counts.get(&(ctx, -d as i32)) else { continue };
                for &(cand, n) in cands {
                    if Some(cand) == masked_id {
                        continue;
                    }
                    let slot = &mut scores[cand as usize];
                    if *slot == 0 {
                        touched.push(cand);
                    }
                    *slot += u64::from(n);
                }
            }
            // highest count first, ties to the smaller (= lexicographically first) token
            let mut top = touched.clone();
            {
                let key = |&c: &u32| (std::cmp::Reverse(scores[c as usize]), c);
                if top.len() > k && k > 0 {
                    top.select_nth_unstable_by_key(k - 1, key);
                }
                top.truncate(k);
                top.sort_unstable_by_key(key);
            }
            for c in touched {
                scores[c as usize] = 0;
            }
            let out = top.iter().map(|&c| self.vocab[c as usize].clone()).collect();
            Ok(out)
        })
    }
}

/// Replacement provider served over the line protocol.
pub struct ExternalProvider {
    client: WireClient,
    id: String,
}

impl ExternalProvider {
    pub fn new(client: WireClient, id: impl Into<String>) -> Self {
        ExternalProvider { client, id: id.into() }
    }

    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, WireError> {
        Ok(ExternalProvider::new(
            WireClient::connect(endpoint, timeout)?,
            format!("external({endpoint})"),
        ))
    }
}

impl ReplacementProvider for ExternalProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn replacements(&self, tokens: &[Token], mask_index: usize, k: usize) -> Result<Vec<Token>, PerturbationError> {
        let fail = |message: String| PerturbationError::Provider {
            provider: self.id.clone(),
            message,
        };
        let words: Vec<&str> = tokens.iter().map(|t| t.as_str()).collect();
        let ticket = self
            .client
            .send(|id| json!({ "id": id, "tokens": words, "mask_index": mask_index, "k": k }))
            .map_err(|e| fail(e.to_string()))?;
        let value = self.client.wait(ticket).map_err(|e| fail(e.to_string()))?;
        let resp: ContextResponse = serde_json::from_value(value).map_err(|e| fail(e.to_string()))?;
        if resp.replacements.iter().any(String::is_empty) {
            return Err(fail("empty replacement token".into()));
        }
        Ok(resp.replacements.into_iter().map(Token::from).collect())
    }
}
