//! Ranking and correlation: sensitivity ranks, tie policies, Spearman
//! (plain rank-difference formula and a tie-corrected variant), Pearson,
//! and combination of per-rater reference scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::Token;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("nothing to rank")]
    Empty,
    #[error("score for `{0}` is NaN")]
    NaN(String),
    #[error("token sets differ; symmetric difference: {0:?}")]
    MismatchedTokens(Vec<String>),
    #[error("token sets are disjoint")]
    Disjoint,
    #[error("need at least 2 paired values, got {0}")]
    TooFew(usize),
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("rater `{rater}` has no score for `{token}`")]
    MissingRating { rater: String, token: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TiePolicy {
    /// Ties broken lexicographically by token; ranks are 1..=n.
    Strict,
    /// Tied items share the block's smallest rank (1, 2, 3, 3, 3, 6).
    Competition,
    /// Tied items share the mean of the block's positions.
    Average,
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(TiePolicy::Strict),
            "competition" => Ok(TiePolicy::Competition),
            "average" => Ok(TiePolicy::Average),
            other => Err(format!("unknown tie policy `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankSource {
    Model,
    Reference,
}

/// Token → rank, where rank 1 is the most important item.
#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    entries: BTreeMap<Token, f64>,
    pub source: RankSource,
    pub tie_policy: TiePolicy,
}

impl Ranking {
    pub fn from_ranks(entries: BTreeMap<Token, f64>, source: RankSource, tie_policy: TiePolicy) -> Self {
        Ranking {
            entries,
            source,
            tie_policy,
        }
    }

    pub fn get(&self, t: &str) -> Option<f64> {
        self.entries.get(t).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &BTreeMap<Token, f64> {
        &self.entries
    }

    /// Entries by ascending rank, ties by token.
    pub fn ordered(&self) -> Vec<(&Token, f64)> {
        let mut v: Vec<(&Token, f64)> = self.entries.iter().map(|(t, &r)| (t, r)).collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    /// The ranking restricted to `keep`, re-ranked within it while
    /// preserving ties.
    pub fn restricted(&self, keep: &BTreeSet<&str>) -> Ranking {
        let kept: Vec<(Token, f64)> = self
            .entries
            .iter()
            .filter(|(t, _)| keep.contains(t.as_str()))
            .map(|(t, &r)| (t.clone(), r))
            .collect();
        let policy = match self.tie_policy {
            TiePolicy::Average => TiePolicy::Average,
            _ => TiePolicy::Competition,
        };
        let ranks = rank_values(&kept, Direction::Ascending, policy);
        Ranking {
            entries: kept.into_iter().map(|(t, _)| t).zip(ranks).collect(),
            source: self.source,
            tie_policy: self.tie_policy,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    /// Largest value gets rank 1.
    Descending,
    /// Smallest value gets rank 1.
    Ascending,
}

/// Ranks `items` (already sorted by token) and returns ranks in input order.
fn rank_values(items: &[(Token, f64)], dir: Direction, policy: TiePolicy) -> Vec<f64> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    let cmp_values = |a: f64, b: f64| match dir {
        Direction::Descending => b.total_cmp(&a),
        Direction::Ascending => a.total_cmp(&b),
    };
    order.sort_by(|&i, &j| cmp_values(items[i].1, items[j].1).then_with(|| items[i].0.cmp(&items[j].0)));
    let mut ranks = vec![0.0; items.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && items[order[end + 1]].1 == items[order[start]].1 {
            end += 1;
        }
        for (offset, &i) in order[start..=end].iter().enumerate() {
            ranks[i] = match policy {
                TiePolicy::Strict => (start + offset + 1) as f64,
                TiePolicy::Competition => (start + 1) as f64,
                TiePolicy::Average => (start + end + 2) as f64 / 2.0,
            };
        }
        start = end + 1;
    }
    ranks
}

/// Rank 1 = highest score.
pub fn rank_tokens(scores: &BTreeMap<Token, f64>, tie_policy: TiePolicy) -> Result<Ranking, StatsError> {
    if scores.is_empty() {
        return Err(StatsError::Empty);
    }
    if let Some((t, _)) = scores.iter().find(|(_, s)| s.is_nan()) {
        return Err(StatsError::NaN(t.to_string()));
    }
    let items: Vec<(Token, f64)> = scores.iter().map(|(t, &s)| (t.clone(), s)).collect();
    let ranks = rank_values(&items, Direction::Descending, tie_policy);
    Ok(Ranking {
        entries: items.into_iter().map(|(t, _)| t).zip(ranks).collect(),
        source: RankSource::Model,
        tie_policy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpearmanVariant {
    /// `1 - 6 ΣD² / (n(n² - 1))` on the ranks as given.
    RankDifference,
    /// Pearson correlation of tie-averaged ranks.
    TieCorrected,
}

fn paired(a: &Ranking, b: &Ranking) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
    if a.entries.keys().ne(b.entries.keys()) {
        let ka: BTreeSet<&Token> = a.entries.keys().collect();
        let kb: BTreeSet<&Token> = b.entries.keys().collect();
        let diff = ka.symmetric_difference(&kb).map(|t| t.to_string()).collect();
        return Err(StatsError::MismatchedTokens(diff));
    }
    if a.len() < 2 {
        return Err(StatsError::TooFew(a.len()));
    }
    Ok((a.entries.values().copied().collect(), b.entries.values().copied().collect()))
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let items: Vec<(Token, f64)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (Token::new(format!("{i:020}")), v))
        .collect();
    rank_values(&items, Direction::Ascending, TiePolicy::Average)
}

pub fn spearman(a: &Ranking, b: &Ranking, variant: SpearmanVariant) -> Result<f64, StatsError> {
    let (ra, rb) = paired(a, b)?;
    match variant {
        SpearmanVariant::RankDifference => {
            let n = ra.len() as f64;
            let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
            Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
        }
        SpearmanVariant::TieCorrected => pearson(&average_ranks(&ra), &average_ranks(&rb)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpearmanReport {
    pub n: usize,
    pub sum_d2: f64,
    pub rank_difference: f64,
    /// `None` when a ranking is constant and the correlation is undefined.
    pub tie_corrected: Option<f64>,
}

impl SpearmanReport {
    pub fn compute(a: &Ranking, b: &Ranking) -> Result<Self, StatsError> {
        let (ra, rb) = paired(a, b)?;
        let sum_d2 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(SpearmanReport {
            n: ra.len(),
            sum_d2,
            rank_difference: spearman(a, b, SpearmanVariant::RankDifference)?,
            tie_corrected: match spearman(a, b, SpearmanVariant::TieCorrected) {
                Ok(r) => Some(r),
                Err(StatsError::ZeroVariance) => None,
                Err(e) => return Err(e),
            },
        })
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n = {}", self.n)?;
        writeln!(w, "sum_d2 = {}", self.sum_d2)?;
        writeln!(w, "spearman_rank_difference = {}", self.rank_difference)?;
        match self.tie_corrected {
            Some(r) => writeln!(w, "spearman_tie_corrected = {r}"),
            None => writeln!(w, "spearman_tie_corrected = undefined"),
        }
    }
}

impl fmt::Display for SpearmanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut buf = Vec::new();
        self.write_text(&mut buf).map_err(|_| fmt::Error)?;
        f.write_str(&String::from_utf8_lossy(&buf))
    }
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(StatsError::TooFew(xs.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Expert significance scores (1 = most significant) and their combination.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceRanking {
    pub per_rater: BTreeMap<String, BTreeMap<Token, f64>>,
    pub averages: BTreeMap<Token, f64>,
    pub combined: Ranking,
}

/// Averages each token's score over raters, then competition-ranks the
/// averages ascending.
pub fn combine_raters(per_rater: BTreeMap<String, BTreeMap<Token, f64>>) -> Result<ReferenceRanking, StatsError> {
    let tokens: BTreeSet<&Token> = per_rater.values().flat_map(|m| m.keys()).collect();
    if tokens.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut averages = BTreeMap::new();
    for &t in &tokens {
        let mut total = 0.0;
        for (rater, scores) in &per_rater {
            let s = scores.get(t).ok_or_else(|| StatsError::MissingRating {
                rater: rater.clone(),
                token: t.to_string(),
            })?;
            if s.is_nan() {
                return Err(StatsError::NaN(t.to_string()));
            }
            total += s;
        }
        averages.insert(t.clone(), total / per_rater.len() as f64);
    }
    let items: Vec<(Token, f64)> = averages.iter().map(|(t, &v)| (t.clone(), v)).collect();
    let ranks = rank_values(&items, Direction::Ascending, TiePolicy::Competition);
    let combined = Ranking {
        entries: items.into_iter().map(|(t, _)| t).zip(ranks).collect(),
        source: RankSource::Reference,
        tie_policy: TiePolicy::Competition,
    };
    Ok(ReferenceRanking {
        per_rater,
        averages,
        combined,
    })
}

/// Contents of a ranking table.
#[derive(Clone, Debug, PartialEq)]
pub enum RankingTable {
    /// `token,rater_id,score` rows.
    Raters(ReferenceRanking),
    /// `token,rank` rows (extra columns ignored; blank ranks skipped).
    Ranks(Ranking),
    /// `token,score` rows.
    Scores(BTreeMap<Token, f64>),
}

/// Reads a comma-separated table, recognizing the layout from its header.
pub fn read_ranking_csv<R: Read>(reader: R, source: RankSource) -> Result<RankingTable, StatsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let parse = |line: u64, message: String| StatsError::Parse { line, message };
    let headers = rdr.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let token_col = col("token").ok_or_else(|| parse(1, "missing `token` column".into()))?;
    let layout = (col("rater_id"), col("rank"), col("score"));

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("").to_owned();
        rows.push((line, field(token_col), layout.0.map(field), layout.1.map(field), layout.2.map(field)));
    }
    let number = |line: u64, s: &str| -> Result<f64, StatsError> {
        let v: f64 = s.parse().map_err(|_| parse(line, format!("bad number `{s}`")))?;
        if v.is_nan() {
            return Err(parse(line, "NaN".into()));
        }
        Ok(v)
    };
    let mut seen = BTreeSet::new();
    let mut fresh = |line: u64, key: String| {
        if seen.insert(key.clone()) {
            Ok(())
        } else {
            Err(parse(line, format!("duplicate entry `{key}`")))
        }
    };
    match layout {
        (Some(_), _, Some(_)) => {
            let mut per_rater: BTreeMap<String, BTreeMap<Token, f64>> = BTreeMap::new();
            for (line, token, rater, _, score) in rows {
                let rater = rater.unwrap_or_default();
                fresh(line, format!("{rater}/{token}"))?;
                let score = number(line, &score.unwrap_or_default())?;
                per_rater.entry(rater).or_default().insert(Token::new(token), score);
            }
            Ok(RankingTable::Raters(combine_raters(per_rater)?))
        }
        (None, Some(_), _) => {
            let mut entries = BTreeMap::new();
            for (line, token, _, rank, _) in rows {
                let rank = rank.unwrap_or_default();
                if rank.is_empty() {
                    continue;
                }
                fresh(line, token.clone())?;
                entries.insert(Token::new(token), number(line, &rank)?);
            }
            if entries.is_empty() {
                return Err(StatsError::Empty);
            }
            let has_ties = {
                let mut v: Vec<f64> = entries.values().copied().collect();
                v.sort_by(f64::total_cmp);
                v.windows(2).any(|w| w[0] == w[1])
            };
            let policy = if has_ties { TiePolicy::Competition } else { TiePolicy::Strict };
            Ok(RankingTable::Ranks(Ranking::from_ranks(entries, source, policy)))
        }
        (None, None, Some(_)) => {
            let mut scores = BTreeMap::new();
            for (line, token, _, _, score) in rows {
                fresh(line, token.clone())?;
                scores.insert(Token::new(token), number(line, &score.unwrap_or_default())?);
            }
            Ok(RankingTable::Scores(scores))
        }
        _ => Err(parse(1, "expected columns token,rater_id,score or token,rank or token,score".into())),
    }
}
