use std::collections::HashMap;

use crate::corpus::{Corpus, Token};

/// Vocabulary and inverse document frequencies fitted on a corpus.
///
/// `idf(t) = ln(|X| / df(t))` with no smoothing, so a token present in
/// every note gets weight zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfVocabulary {
    num_docs: usize,
    index: HashMap<Token, usize>,
    tokens: Vec<Token>,
    doc_freq: Vec<usize>,
    idf: Vec<f64>,
}

impl TfidfVocabulary {
    /// Returns `None` for an empty corpus.
    pub fn fit(corpus: &Corpus) -> Option<Self> {
        if corpus.is_empty() {
            return None;
        }
        Self::from_parts(
            corpus.len(),
            corpus.doc_frequencies().iter().map(|(t, &df)| (t.clone(), df)),
        )
    }

    /// Builds from stored statistics. Returns `None` if `num_docs` is zero or
    /// any document frequency is outside `1..=num_docs`.
    pub fn from_parts(num_docs: usize, doc_freqs: impl IntoIterator<Item = (Token, usize)>) -> Option<Self> {
        if num_docs == 0 {
            return None;
        }
        let mut sorted: Vec<(Token, usize)> = doc_freqs.into_iter().collect();
        sorted.sort();
        sorted.dedup_by(|a, b| a.0 == b.0);
        if sorted.iter().any(|&(_, df)| df == 0 || df > num_docs) {
            return None;
        }
        let n = num_docs as f64;
        let idf = sorted.iter().map(|&(_, df)| (n / df as f64).ln()).collect();
        let doc_freq = sorted.iter().map(|&(_, df)| df).collect();
        let tokens: Vec<Token> = sorted.into_iter().map(|(t, _)| t).collect();
        let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Some(TfidfVocabulary {
            num_docs,
            index,
            tokens,
            doc_freq,
            idf,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, t: &str) -> Option<usize> {
        self.index.get(t).copied()
    }

    pub fn token(&self, i: usize) -> &Token {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn doc_frequency(&self, i: usize) -> usize {
        self.doc_freq[i]
    }

    pub fn idf(&self, i: usize) -> f64 {
        self.idf[i]
    }

    /// tf-idf embedding; out-of-vocabulary tokens contribute nothing.
    pub fn embed(&self, tokens: &[Token]) -> TfidfEmbedding {
        let mut ids: Vec<usize> = tokens.iter().filter_map(|t| self.index.get(t.as_str()).copied()).collect();
        ids.sort_unstable();
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for run in ids.chunk_by(|a, b| a == b) {
            entries.push((run[0], run.len() as f64 * self.idf[run[0]]));
        }
        TfidfEmbedding {
            dim: self.len(),
            entries,
        }
    }
}

/// Sparse tf-idf vector; entries are sorted by vocabulary index.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfEmbedding {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl TfidfEmbedding {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> f64 {
        self.entries
            .binary_search_by_key(&i, |&(j, _)| j)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, x) in &self.entries {
            v[i] = x;
        }
        v
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, x)| weights[i] * x).sum()
    }

    pub fn l1_distance(&self, other: &TfidfEmbedding) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut total) = (0, 0, 0.0);
        while i < a.len() || j < b.len() {
            match (a.get(i), b.get(j)) {
                (Some(&(ia, xa)), Some(&(ib, xb))) if ia == ib => {
                    total += (xa - xb).abs();
                    i += 1;
                    j += 1;
                }
                (Some(&(ia, xa)), Some(&(ib, _))) if ia < ib => {
                    total += xa.abs();
                    i += 1;
                }
                (Some(&(_, xa)), None) => {
                    total += xa.abs();
                    i += 1;
                }
                (_, Some(&(_, xb))) => {
                    total += xb.abs();
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        total
    }
}
