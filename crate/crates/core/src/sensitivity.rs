//! The sensitivity metric: how much a classifier's probability moves when a
//! token is swapped out, averaged over a filter set and over the notes that
//! contain the token.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifiers::{Classifier, ClassifierError};
use crate::corpus::{Corpus, CorpusView, Note, Token};
use crate::perturbation::{
    build_context_filters, build_onegram_filters, build_uniform_filters, perturb, perturb_with, FilterKind,
    FilterSet, PerturbationError, PerturbationFilter, ReplacementProvider, SwapScheme,
};
use crate::stats::{rank_tokens, TiePolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("token set is empty")]
    EmptyTokenSet,
    #[error("sensitivity of `{0}` is undefined: no note contains it")]
    Unsupported(String),
    #[error("no filter applies to `{token}` in note `{note_id}`")]
    EmptyFilterSet { token: String, note_id: String },
    #[error("context filters requested but no replacement provider given")]
    MissingProvider,
    #[error("classifier failed on note `{note_id}` (token `{token}`{}): {source}", filter.as_ref().map(|f| format!(", filter {f}")).unwrap_or_default())]
    Classifier {
        token: String,
        note_id: String,
        filter: Option<String>,
        source: ClassifierError,
    },
    #[error("building filters for `{token}`{}: {source}", note_id.as_ref().map(|n| format!(" in note `{n}`")).unwrap_or_default())]
    Perturbation {
        token: String,
        note_id: Option<String>,
        source: PerturbationError,
    },
    #[error("could not start worker pool: {0}")]
    ThreadPool(String),
}

fn classifier_error(u: &str, note: &Note, filter: Option<&PerturbationFilter>, e: ClassifierError) -> SensitivityError {
    SensitivityError::Classifier {
        token: u.to_owned(),
        note_id: note.id.clone(),
        filter: filter.map(|f| f.provenance().to_owned()),
        source: e,
    }
}

fn checked_predict(f: &dyn Classifier, note: &Note) -> Result<f64, ClassifierError> {
    let p = f.predict(note)?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(ClassifierError::InvalidProbability(p))
    }
}

/// `|f(x) - f(g(x))|` for one filter.
pub fn delta(
    f: &dyn Classifier,
    note: &Note,
    u: &str,
    h: &PerturbationFilter,
    scheme: SwapScheme,
) -> Result<f64, SensitivityError> {
    let perturbed = perturb(note, u, h, scheme).map_err(|e| SensitivityError::Perturbation {
        token: u.to_owned(),
        note_id: Some(note.id.clone()),
        source: e,
    })?;
    let before = checked_predict(f, note).map_err(|e| classifier_error(u, note, None, e))?;
    let after = checked_predict(f, &perturbed).map_err(|e| classifier_error(u, note, Some(h), e))?;
    Ok((before - after).abs())
}

/// Mean of the filter deltas on one note; `f(note)` is evaluated once.
pub fn note_sensitivity(
    f: &dyn Classifier,
    note: &Note,
    u: &str,
    filters: &FilterSet,
    scheme: SwapScheme,
) -> Result<f64, SensitivityError> {
    if !note.contains(u) {
        return Ok(0.0);
    }
    let before = checked_predict(f, note).map_err(|e| classifier_error(u, note, None, e))?;
    let mut total = 0.0;
    for h in filters.filters() {
        let perturbed = perturb(note, u, h, scheme).map_err(|e| SensitivityError::Perturbation {
            token: u.to_owned(),
            note_id: Some(note.id.clone()),
            source: e,
        })?;
        let after = checked_predict(f, &perturbed).map_err(|e| classifier_error(u, note, Some(h), e))?;
        total += (before - after).abs();
    }
    Ok(total / filters.len() as f64)
}

/// Mean note-level score over `notes`, summed in note-id order.
pub fn overall_sensitivity(
    f: &dyn Classifier,
    notes: &CorpusView<'_>,
    u: &str,
    filters: &FilterSet,
    scheme: SwapScheme,
) -> Result<f64, SensitivityError> {
    if !notes.notes().iter().any(|n| n.contains(u)) {
        return Err(SensitivityError::Unsupported(u.to_owned()));
    }
    let mut sorted: Vec<&Note> = notes.notes().to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut total = 0.0;
    for note in &sorted {
        total += note_sensitivity(f, note, u, filters, scheme)?;
    }
    Ok(total / sorted.len() as f64)
}

/// How the filter set for each token is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterSpec {
    pub uniform: usize,
    pub onegram: usize,
    pub context: usize,
    /// Seeds the uniform draws.
    pub seed: u64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            uniform: 5,
            onegram: 5,
            context: 5,
            seed: 0,
        }
    }
}

impl FilterSpec {
    pub fn total(&self) -> usize {
        self.uniform + self.onegram + self.context
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuditOptions {
    pub scheme: SwapScheme,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    /// Evaluate at most this many (seeded, randomly chosen) notes per token.
    pub max_notes_per_token: Option<usize>,
    /// Cap on the filters taken from each family.
    pub max_filters_per_family: Option<usize>,
    /// Seeds note subsampling.
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            scheme: SwapScheme::OneSwap,
            workers: 0,
            max_notes_per_token: None,
            max_filters_per_family: None,
            seed: 0,
        }
    }
}

/// One perturbation's effect.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityRecord {
    pub filter_index: usize,
    pub family: FilterKind,
    pub replacement: Token,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoteScore {
    pub note_id: String,
    pub score: f64,
    pub records: Vec<SensitivityRecord>,
}

impl NoteScore {
    fn family_mean(&self, kind: FilterKind) -> Option<f64> {
        let (mut total, mut n) = (0.0, 0usize);
        for r in self.records.iter().filter(|r| r.family == kind) {
            total += r.delta;
            n += 1;
        }
        (n > 0).then(|| total / n as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenScore {
    pub token: Token,
    /// Number of notes that contributed.
    pub support: usize,
    /// Pooled over every filter.
    pub overall: f64,
    /// Family → mean over notes of the family's note-level mean. Absent when
    /// the family produced no filter for any note.
    pub per_family: BTreeMap<FilterKind, f64>,
    /// 1 = most sensitive among the supported tokens.
    pub rank: usize,
    /// Set when some family could not supply the requested filter count.
    pub short_filters: bool,
    pub notes: Vec<NoteScore>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityReport {
    pub classifier_id: String,
    pub scheme: SwapScheme,
    /// Requested filters per note.
    pub filter_count: usize,
    pub token_set: Vec<Token>,
    /// Supported tokens, in `token_set` order.
    pub scores: Vec<TokenScore>,
    /// Tokens no note contains.
    pub unsupported: Vec<Token>,
}

impl SensitivityReport {
    pub fn get(&self, u: &str) -> Option<&TokenScore> {
        self.scores.iter().find(|s| s.token.as_str() == u)
    }

    pub fn overall(&self, u: &str) -> Option<f64> {
        self.get(u).map(|s| s.overall)
    }

    pub fn per_family(&self, u: &str, kind: FilterKind) -> Option<f64> {
        self.get(u).and_then(|s| s.per_family.get(&kind).copied())
    }

    pub fn note_level(&self, u: &str, note_id: &str) -> Option<f64> {
        let s = self.get(u)?;
        s.notes.iter().find(|n| n.note_id == note_id).map(|n| n.score)
    }

    pub fn support(&self, u: &str) -> usize {
        self.get(u).map_or(0, |s| s.support)
    }

    pub fn rank(&self, u: &str) -> Option<usize> {
        self.get(u).map(|s| s.rank)
    }

    /// Supported tokens ordered by rank.
    pub fn by_rank(&self) -> Vec<&TokenScore> {
        let mut v: Vec<&TokenScore> = self.scores.iter().collect();
        v.sort_by_key(|s| s.rank);
        v
    }

    /// `token,support,overall,uniform_family,onegram_family,context_family,rank`,
    /// one row per token by rank, unsupported tokens last.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record([
            "token",
            "support",
            "overall",
            "uniform_family",
            "onegram_family",
            "context_family",
            "rank",
        ])?;
        for s in self.by_rank() {
            let fam = |k| s.per_family.get(&k).map(|v: &f64| v.to_string()).unwrap_or_default();
            out.write_record([
                s.token.to_string(),
                s.support.to_string(),
                s.overall.to_string(),
                fam(FilterKind::Uniform),
                fam(FilterKind::OneGram),
                fam(FilterKind::Context),
                s.rank.to_string(),
            ])?;
        }
        for t in &self.unsupported {
            out.write_record([t.as_str(), "0", "unsupported", "", "", "", ""])?;
        }
        out.flush()
    }

    /// A header line, then one line per token with note-level detail.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = serde_json::json!({
            "classifier_id": self.classifier_id,
            "scheme": self.scheme,
            "filter_count": self.filter_count,
            "tokens": self.token_set,
        });
        writeln!(w, "{header}")?;
        for s in self.by_rank() {
            writeln!(w, "{}", serde_json::to_string(s)?)?;
        }
        for t in &self.unsupported {
            writeln!(w, "{}", serde_json::json!({ "token": t, "unsupported": true }))?;
        }
        w.flush()
    }
}

fn subsample_seed(seed: u64, u: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"notes");
    h.update(seed.to_le_bytes());
    h.update(u.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

struct TokenPlan<'a> {
    token: Token,
    shared: Vec<PerturbationFilter>,
    short: bool,
    notes: Vec<&'a Note>,
}

/// Scores every token of `tokens` against `f`.
///
/// Uniform filters are shared by all tokens; 1-gram filters are built per
/// token; context filters per (token, note) at the first occurrence of the
/// token. Results are reduced in note-id order, so the report does not
/// depend on the number of workers.
pub fn audit(
    f: &dyn Classifier,
    corpus: &Corpus,
    tokens: &[Token],
    spec: &FilterSpec,
    provider: Option<&dyn ReplacementProvider>,
    opts: &AuditOptions,
) -> Result<SensitivityReport, SensitivityError> {
    if tokens.is_empty() {
        return Err(SensitivityError::EmptyTokenSet);
    }
    let cap = |n: usize| opts.max_filters_per_family.map_or(n, |m| n.min(m));
    let (n_uniform, n_onegram, n_context) = (cap(spec.uniform), cap(spec.onegram), cap(spec.context));
    if n_context > 0 && provider.is_none() {
        return Err(SensitivityError::MissingProvider);
    }

    let mut token_set = Vec::new();
    let mut seen = BTreeSet::new();
    for t in tokens {
        if seen.insert(t) {
            token_set.push(t.clone());
        }
    }

    let uniform = if n_uniform > 0 {
        build_uniform_filters(corpus.vocabulary().cloned(), n_uniform, spec.seed).map_err(|e| {
            SensitivityError::Perturbation {
                token: token_set[0].to_string(),
                note_id: None,
                source: e,
            }
        })?
        .filters
    } else {
        Vec::new()
    };

    let mut plans = Vec::new();
    let mut unsupported = Vec::new();
    for u in &token_set {
        let subset = corpus.subset_containing(u.as_str()).sorted_by_id();
        if subset.is_empty() {
            unsupported.push(u.clone());
            continue;
        }
        let mut shared = uniform.clone();
        let mut short = false;
        if n_onegram > 0 {
            let build = build_onegram_filters(&subset, u, n_onegram).map_err(|e| SensitivityError::Perturbation {
                token: u.to_string(),
                note_id: None,
                source: e,
            })?;
            short |= build.is_short();
            shared.extend(build.filters);
        }
        let mut notes = subset.notes().to_vec();
        if let Some(max) = opts.max_notes_per_token.filter(|&m| m < notes.len()) {
            let mut rng = ChaCha8Rng::seed_from_u64(subsample_seed(opts.seed, u.as_str()));
            let mut picked = index::sample(&mut rng, notes.len(), max).into_vec();
            picked.sort_unstable();
            notes = picked.into_iter().map(|i| notes[i]).collect();
        }
        plans.push(TokenPlan {
            token: u.clone(),
            shared,
            short,
            notes,
        });
    }

    let items: Vec<(usize, &Note)> = plans
        .iter()
        .enumerate()
        .flat_map(|(i, p)| p.notes.iter().map(move |&n| (i, n)))
        .collect();
    let scheme = opts.scheme;
    let work = |&(i, note): &(usize, &Note)| -> Result<(NoteScore, bool), SensitivityError> {
        let plan = &plans[i];
        score_note(f, note, &plan.token, &plan.shared, provider, n_context, scheme)
    };
    let results: Vec<(NoteScore, bool)> = if opts.workers == 1 || !f.supports_concurrency() {
        items.iter().map(work).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| SensitivityError::ThreadPool(e.to_string()))?;
        pool.install(|| items.par_iter().map(work).collect::<Result<_, _>>())?
    };

    let mut results = results.into_iter();
    let mut scores = Vec::with_capacity(plans.len());
    for plan in &plans {
        let mut notes = Vec::with_capacity(plan.notes.len());
        let mut short = plan.short;
        for _ in 0..plan.notes.len() {
            let (ns, s) = results.next().expect("one result per item");
            short |= s;
            notes.push(ns);
        }
        scores.push(reduce(plan.token.clone(), notes, short));
    }

    let overall: BTreeMap<Token, f64> = scores.iter().map(|s| (s.token.clone(), s.overall)).collect();
    if !overall.is_empty() {
        let ranking = rank_tokens(&overall, TiePolicy::Strict).expect("scores are finite");
        for s in &mut scores {
            s.rank = ranking.get(s.token.as_str()).expect("ranked") as usize;
        }
    }

    Ok(SensitivityReport {
        classifier_id: f.id().to_owned(),
        scheme,
        filter_count: n_uniform + n_onegram + n_context,
        token_set,
        scores,
        unsupported,
    })
}

fn score_note(
    f: &dyn Classifier,
    note: &Note,
    u: &Token,
    shared: &[PerturbationFilter],
    provider: Option<&dyn ReplacementProvider>,
    n_context: usize,
    scheme: SwapScheme,
) -> Result<(NoteScore, bool), SensitivityError> {
    let mut filters: Vec<PerturbationFilter> = shared.to_vec();
    let mut short = false;
    if let Some(provider) = provider.filter(|_| n_context > 0) {
        let position = note.tokens.iter().position(|t| t == u).expect("note contains u");
        let build = build_context_filters(provider, note, position, n_context).map_err(|e| {
            SensitivityError::Perturbation {
                token: u.to_string(),
                note_id: Some(note.id.clone()),
                source: e,
            }
        })?;
        short = build.is_short();
        filters.extend(build.filters);
    }
    if filters.is_empty() {
        return Err(SensitivityError::EmptyFilterSet {
            token: u.to_string(),
            note_id: note.id.clone(),
        });
    }

    let mut batch = Vec::with_capacity(filters.len() + 1);
    batch.push(note.clone());
    let mut replacements = Vec::with_capacity(filters.len());
    for h in &filters {
        let r = h.apply(u.as_str()).ok_or_else(|| SensitivityError::Perturbation {
            token: u.to_string(),
            note_id: Some(note.id.clone()),
            source: PerturbationError::Undefined {
                filter: h.provenance().to_owned(),
                token: u.to_string(),
            },
        })?;
        batch.push(perturb_with(note, u.as_str(), &r, scheme));
        replacements.push(r);
    }
    let probs = f.predict_many(&batch).map_err(|e| classifier_error(u.as_str(), note, None, e))?;
    if probs.len() != batch.len() {
        return Err(classifier_error(
            u.as_str(),
            note,
            None,
            ClassifierError::Protocol(format!("{} probabilities for {} notes", probs.len(), batch.len())),
        ));
    }
    for (i, &p) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            let filter = i.checked_sub(1).map(|j| &filters[j]);
            return Err(classifier_error(u.as_str(), note, filter, ClassifierError::InvalidProbability(p)));
        }
    }

    let before = probs[0];
    let records: Vec<SensitivityRecord> = filters
        .iter()
        .zip(replacements)
        .zip(&probs[1..])
        .enumerate()
        .map(|(i, ((h, replacement), &after))| SensitivityRecord {
            filter_index: i,
            family: h.kind(),
            replacement,
            delta: (before - after).abs(),
        })
        .collect();
    let score = records.iter().map(|r| r.delta).sum::<f64>() / records.len() as f64;
    Ok((
        NoteScore {
            note_id: note.id.clone(),
            score,
            records,
        },
        short,
    ))
}

fn reduce(token: Token, notes: Vec<NoteScore>, short_filters: bool) -> TokenScore {
    let support = notes.len();
    let overall = notes.iter().map(|n| n.score).sum::<f64>() / support as f64;
    let mut per_family = BTreeMap::new();
    for kind in FilterKind::FAMILIES {
        let (mut total, mut n) = (0.0, 0usize);
        for m in notes.iter().filter_map(|note| note.family_mean(kind)) {
            total += m;
            n += 1;
        }
        if n > 0 {
            per_family.insert(kind, total / n as f64);
        }
    }
    TokenScore {
        token,
        support,
        overall,
        per_family,
        rank: 0,
        short_filters,
        notes,
    }
}
