//! Acceptance criteria, one result line each.
//!
//! Runs without the libtest harness so every criterion is evaluated and
//! reported even when an earlier one fails. Criteria listed in
//! `KNOWN_UNATTAINABLE` are still evaluated and printed as FAIL when they
//! fail, but do not fail the run; anything else failing does.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sensaudit::classifiers::metrics::{auprc, auroc};
use sensaudit::classifiers::{train_linear, Classifier, LinearModel, TfidfVocabulary, TrainConfig};
use sensaudit::corpus::PlantedSignal;
use sensaudit::perturbation::{perturb_with, CooccurrenceProvider};
use sensaudit::stats::{pearson, read_ranking_csv, RankSource, RankingTable, SpearmanReport};
use sensaudit::{
    audit, generate_synthetic, rank_tokens, spearman, AuditOptions, ConstantClassifier, Corpus, FilterSpec, Note,
    Ranking, SpearmanVariant, SwapScheme, SyntheticSpec, TiePolicy, Token,
};

/// The reference score table for the frequency probes is not in descending
/// score order (rows 12 and 13 are swapped relative to their scores), so no
/// ranking of its scores can reproduce its rank column.
const KNOWN_UNATTAINABLE: &[&str] = &["AC-4"];

type Outcome = Result<String, String>;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("{what} took {elapsed:.2?} (limit {limit:?})"))
    }
}

fn ac1() -> Outcome {
    let corpus = generate_synthetic(&SyntheticSpec {
        seed: 11,
        num_notes: 1000,
        note_length_min: 20,
        note_length_max: 60,
        vocab_size: 300,
        planted: vec![PlantedSignal { token: "stroke".into(), correlation: 0.8, presence_rate: None }],
        positive_rate: 0.1,
        zipf_exponent: 1.0,
    })
    .map_err(|e| e.to_string())?;
    let mut tokens: Vec<Token> = (0..19).map(|i| SyntheticSpec::background_token(i * 15)).collect();
    tokens.push("stroke".into());

    let start = Instant::now();
    let f = ConstantClassifier::new(1.0).map_err(|e| e.to_string())?;
    let provider = CooccurrenceProvider::new(&corpus, 3);
    let spec = FilterSpec::default();
    let mut checked = 0usize;
    for scheme in [SwapScheme::OneSwap, SwapScheme::MultiSwap] {
        let opts = AuditOptions { scheme, ..AuditOptions::default() };
        let r = audit(&f, &corpus, &tokens, &spec, Some(&provider), &opts).map_err(|e| e.to_string())?;
        if r.filter_count != 15 {
            return Err(format!("{} filters per note, expected 15", r.filter_count));
        }
        for s in &r.scores {
            let zero = s.overall == 0.0
                && s.per_family.values().all(|&v| v == 0.0)
                && s.notes.iter().all(|n| n.score == 0.0 && n.records.iter().all(|d| d.delta == 0.0));
            if !zero {
                return Err(format!("{scheme}: `{}` scored {}", s.token, s.overall));
            }
            checked += s.notes.iter().map(|n| n.records.len()).sum::<usize>();
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(5), "audit")?;
    Ok(format!("{checked} perturbation deltas all exactly 0 over both schemes in {elapsed:.2?}"))
}

fn ac2() -> Outcome {
    // Six documents; df(hi) = 3, df(there) = 4.
    let vocab = TfidfVocabulary::from_parts(6, [(Token::from("hi"), 3), (Token::from("there"), 4)])
        .ok_or("empty vocabulary")?;
    let model = LinearModel::new(vocab.clone(), vec![-0.8, 1.3], 0.1, 0);
    let idf_sum = (6.0f64 / 3.0).ln() + (6.0f64 / 4.0).ln();
    let mut ratios = Vec::new();
    let mut deltas = Vec::new();
    for n in 1..=4usize {
        let mut words = vec!["hi"];
        words.extend(std::iter::repeat_n("there", n));
        let x = Note::from_words("x", &words, None);
        let g = perturb_with(&x, "there", &Token::from("hi"), SwapScheme::MultiSwap);
        ratios.push(vocab.embed(&x.tokens).l1_distance(&vocab.embed(&g.tokens)) / n as f64);
        let px = model.predict(&x).map_err(|e| e.to_string())?;
        let pg = model.predict(&g).map_err(|e| e.to_string())?;
        deltas.push((px - pg).abs());
    }
    let spread = ratios.iter().map(|r| (r - ratios[0]).abs()).fold(0.0, f64::max);
    let oracle_gap = (ratios[0] - idf_sum).abs();
    let monotone = deltas.windows(2).all(|w| w[1] >= w[0]);
    check(
        spread < 1e-9 && oracle_gap < 1e-9 && monotone,
        format!("L1/n = {:.12} for n = 1..4 (spread {spread:.1e}); deltas {deltas:.6?} non-decreasing: {monotone}", ratios[0]),
    )
}

fn load_ranks(name: &str) -> Result<Ranking, String> {
    let file = File::open(fixture(name)).map_err(|e| e.to_string())?;
    match read_ranking_csv(BufReader::new(file), RankSource::Reference).map_err(|e| e.to_string())? {
        RankingTable::Ranks(r) => Ok(r),
        other => Err(format!("{name}: unexpected layout {other:?}")),
    }
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let expert = load_ranks("expert_ranks.csv")?;
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, target) in [("language_ranks.csv", 0.5754), ("tfidf_ranks.csv", 0.1259)] {
        let model = load_ranks(name)?;
        let report = SpearmanReport::compute(&expert, &model).map_err(|e| e.to_string())?;
        let tie_corrected = report.tie_corrected.ok_or("tie-corrected value undefined")?;
        let matching: Vec<&str> = [("rank_difference", report.rank_difference), ("tie_corrected", tie_corrected)]
            .into_iter()
            .filter(|(_, v)| (v - target).abs() <= 0.02)
            .map(|(k, _)| k)
            .collect();
        ok &= !matching.is_empty();
        lines.push(format!(
            "{name}: n={} rank_difference={:.4} tie_corrected={:.4} target={target} matches={matching:?}",
            report.n, report.rank_difference, tie_corrected
        ));
    }
    within(start.elapsed(), Duration::from_secs(1), "comparison")?;
    check(ok, lines.join("; "))
}

fn ac4() -> Outcome {
    let mut rdr = csv::Reader::from_path(fixture("frequency_probe_scores.csv")).map_err(|e| e.to_string())?;
    let mut scores = BTreeMap::new();
    let mut expected = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        let token = Token::from(&row[0]);
        scores.insert(token.clone(), row[1].parse::<f64>().map_err(|e| e.to_string())?);
        expected.insert(token, row[2].parse::<f64>().map_err(|e| e.to_string())?);
    }
    let ranking = rank_tokens(&scores, TiePolicy::Strict).map_err(|e| e.to_string())?;
    let mismatches: Vec<String> = expected
        .iter()
        .filter(|(t, &r)| ranking.get(t.as_str()) != Some(r))
        .map(|(t, &r)| format!("{t}: expected {r}, got {}", ranking.get(t.as_str()).unwrap_or(f64::NAN)))
        .collect();
    check(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{} ranks reproduced", expected.len())
        } else {
            format!("{} of {} ranks differ: {}", mismatches.len(), expected.len(), mismatches.join(", "))
        },
    )
}

/// The planted-signal experiment shared by AC-5 and AC-6.
struct PlantedRun {
    auroc: f64,
    signal_rank: usize,
    bottom_half_neutrals: usize,
    one_swap_pearson: f64,
    multi_swap_pearson: f64,
    elapsed: Duration,
}

fn planted_run(seed: u64) -> Result<PlantedRun, String> {
    let start = Instant::now();
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let corpus = generate_synthetic(&SyntheticSpec {
        seed,
        num_notes: 5000,
        note_length_min: 20,
        note_length_max: 60,
        vocab_size: 500,
        planted: vec![PlantedSignal { token: "stroke".into(), correlation: 0.8, presence_rate: None }],
        positive_rate: 0.06,
        zipf_exponent: 1.0,
    })
    .map_err(|e| err(&e))?;
    let (train, holdout) = corpus.stratified_split(0.2, seed).map_err(|e| err(&e))?;
    let model = train_linear(&train, &TrainConfig { seed, ..TrainConfig::default() }).map_err(|e| err(&e))?.model;
    let labels = holdout.labels().ok_or("unlabeled holdout")?;
    let scores = model.predict_many(holdout.notes()).map_err(|e| err(&e))?;
    let auroc = auroc(&scores, &labels).map_err(|e| err(&e))?;

    // 19 neutral probes spread log-uniformly over the frequency ranks.
    let background = 500 - 1;
    let mut probes: Vec<Token> = (0..19)
        .map(|i| {
            let r = (background as f64 + 1.0).powf(i as f64 / 18.0).round() as usize - 1;
            SyntheticSpec::background_token(r)
        })
        .collect();
    probes.push("stroke".into());

    let provider = CooccurrenceProvider::new(&holdout, 3);
    let spec = FilterSpec { seed, ..FilterSpec::default() };
    let mut pearsons = Vec::new();
    let mut one_swap = None;
    for scheme in [SwapScheme::OneSwap, SwapScheme::MultiSwap] {
        let opts = AuditOptions { scheme, seed, ..AuditOptions::default() };
        let report = audit(&model, &holdout, &probes, &spec, Some(&provider), &opts).map_err(|e| err(&e))?;
        let freq: Vec<f64> = report.scores.iter().map(|s| holdout.token_frequency(s.token.as_str()) as f64).collect();
        let rank: Vec<f64> = report.scores.iter().map(|s| s.rank as f64).collect();
        pearsons.push(pearson(&freq, &rank).map_err(|e| err(&e))?);
        if scheme == SwapScheme::OneSwap {
            one_swap = Some(report);
        }
    }
    let one_swap = one_swap.expect("one-swap report");
    let signal_rank = one_swap.rank("stroke").ok_or("signal token unsupported")?;
    let half = one_swap.scores.len() / 2;
    let bottom_half_neutrals = one_swap
        .scores
        .iter()
        .filter(|s| s.token.as_str() != "stroke" && s.rank > half)
        .count();
    Ok(PlantedRun {
        auroc,
        signal_rank,
        bottom_half_neutrals,
        one_swap_pearson: pearsons[0],
        multi_swap_pearson: pearsons[1],
        elapsed: start.elapsed(),
    })
}

fn ac5(run: &PlantedRun) -> Outcome {
    within(run.elapsed, Duration::from_secs(60), "experiment")?;
    check(
        run.auroc > 0.8 && run.signal_rank <= 3 && run.bottom_half_neutrals >= 1,
        format!(
            "held-out AUROC {:.4}, signal rank {} of 20, {} neutral probes in the bottom half, {:.2?}",
            run.auroc, run.signal_rank, run.bottom_half_neutrals, run.elapsed
        ),
    )
}

fn ac6(run: &PlantedRun) -> Outcome {
    let (one, multi) = (run.one_swap_pearson, run.multi_swap_pearson);
    check(
        multi < 0.0 && one.abs() < multi.abs(),
        format!("pearson(freq, rank): multi-swap {multi:.4}, one-swap {one:.4}"),
    )
}

fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

/// Average precision as the area under the step precision-recall curve,
/// one step per distinct threshold.
fn sweep_auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let p = labels.iter().filter(|&&y| y).count() as f64;
    let (mut area, mut prev) = (0.0, 0.0);
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|&(&s, &y)| y && s >= t).count() as f64;
        let called = scores.iter().filter(|&&s| s >= t).count() as f64;
        area += (tp / p - prev) * (tp / called);
        prev = tp / p;
    }
    area
}

fn moment_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn ranking_of(ranks: &[f64]) -> Ranking {
    let entries = ranks.iter().enumerate().map(|(i, &r)| (Token::new(format!("t{i:03}")), r)).collect();
    Ranking::from_ranks(entries, RankSource::Model, TiePolicy::Strict)
}

fn ac7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_auprc: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(2..=100);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..25u8)) / 25.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let got = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        if got != pairwise_auroc(&scores, &labels) {
            return Err(format!("case {case}: auroc {got} vs pairwise {}", pairwise_auroc(&scores, &labels)));
        }
        let got = auprc(&scores, &labels).map_err(|e| e.to_string())?;
        let gap = (got - sweep_auprc(&scores, &labels)).abs();
        worst_auprc = worst_auprc.max(gap);
        if gap > 1e-12 {
            return Err(format!("case {case}: auprc {got} vs sweep {}", sweep_auprc(&scores, &labels)));
        }
    }
    let mut worst_corr: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(3..=80);
        let mut a: Vec<f64> = (1..=n).map(f64::from).collect();
        let mut b = a.clone();
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        let nf = f64::from(n);
        let oracle = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
        for v in [SpearmanVariant::RankDifference, SpearmanVariant::TieCorrected] {
            let got = spearman(&ranking_of(&a), &ranking_of(&b), v).map_err(|e| e.to_string())?;
            worst_corr = worst_corr.max((got - oracle).abs());
        }
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + rng.random_range(-4.0..4.0)).collect();
        let got = pearson(&x, &y).map_err(|e| e.to_string())?;
        worst_corr = worst_corr.max((got - moment_pearson(&x, &y)).abs());
        if worst_corr >= 1e-9 {
            return Err(format!("case {case}: correlation off by {worst_corr:.2e}"));
        }
    }
    Ok(format!(
        "100 auroc/auprc instances exact (auprc gap {worst_auprc:.1e}); 100 spearman/pearson instances within {worst_corr:.1e}"
    ))
}

fn sensaudit(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sensaudit")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!("sensaudit {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn ac8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("labels.csv");
    let encounters = fixture("encounters.csv");
    sensaudit(&["labelgen", path_str(&encounters)?, "--out", path_str(&out)?])?;
    let got = fs::read(&out).map_err(|e| e.to_string())?;
    let expected = fs::read(fixture("expected_labels.csv")).map_err(|e| e.to_string())?;
    check(
        got == expected,
        format!("{} bytes, identical to the hand-computed table: {}", got.len(), got == expected),
    )
}

fn path_str(p: &Path) -> Result<&str, String> {
    p.to_str().ok_or_else(|| format!("non-UTF-8 path {}", p.display()))
}

fn ac9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let corpus: Corpus = generate_synthetic(&SyntheticSpec {
        seed: 5,
        num_notes: 400,
        note_length_min: 15,
        note_length_max: 40,
        vocab_size: 150,
        planted: vec![PlantedSignal { token: "stroke".into(), correlation: 0.7, presence_rate: None }],
        positive_rate: 0.15,
        zipf_exponent: 1.0,
    })
    .map_err(|e| e.to_string())?;
    corpus
        .write_jsonl(File::create(root.join("notes.jsonl")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    fs::write(root.join("tokens.txt"), "stroke\nw0000\nw0003\nw0010\nw0040\nw0100\nabsent # never occurs\n")
        .map_err(|e| e.to_string())?;
    fs::write(
        root.join("run.toml"),
        "seed = 3\n\n[corpus]\npath = \"notes.jsonl\"\n\n[tokens]\npath = \"tokens.txt\"\n\n\
         [classifier]\nkind = \"linear\"\nmodel = \"model/model.csv\"\n\n[train]\nepochs = 60\n",
    )
    .map_err(|e| e.to_string())?;
    let config = root.join("run.toml");
    let config = path_str(&config)?;
    let model_dir = root.join("model");
    sensaudit(&["train", "--config", config, "--out", path_str(&model_dir)?])?;

    let mut reports = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "8"), ("c", "1"), ("d", "8")] {
        let out = root.join(run);
        sensaudit(&["audit", "--config", config, "--workers", workers, "--out", path_str(&out)?])?;
        let csv = fs::read(out.join("report.csv")).map_err(|e| e.to_string())?;
        let jsonl = fs::read(out.join("report.jsonl")).map_err(|e| e.to_string())?;
        reports.push((csv, jsonl));
    }
    let identical = reports.windows(2).all(|w| w[0] == w[1]);
    check(
        identical,
        format!(
            "4 CLI audits (workers 1, 8, 1, 8): report.csv {} bytes, report.jsonl {} bytes, bit-identical: {identical}",
            reports[0].0.len(),
            reports[0].1.len()
        ),
    )
}

fn main() {
    let planted = planted_run(1);
    let criteria: Vec<(&str, &str, Outcome)> = vec![
        ("AC-1", "constant classifier scores zero", ac1()),
        ("AC-2", "tf-idf difference proportional to swaps", ac2()),
        ("AC-3", "expert vs model Spearman reproduction", ac3()),
        ("AC-4", "frequency-probe rank fixture", ac4()),
        ("AC-5", "planted signal end to end", planted.as_ref().map_err(Clone::clone).and_then(ac5)),
        ("AC-6", "frequency-bias direction", planted.as_ref().map_err(Clone::clone).and_then(ac6)),
        ("AC-7", "metric oracles", ac7()),
        ("AC-8", "label generation fixture", ac8()),
        ("AC-9", "audit determinism across worker counts", ac9()),
    ];

    let mut unexpected = 0;
    for (id, title, outcome) in &criteria {
        match outcome {
            Ok(detail) => println!("{id} PASS {title}: {detail}"),
            Err(detail) => {
                let known = KNOWN_UNATTAINABLE.contains(id);
                if !known {
                    unexpected += 1;
                }
                println!(
                    "{id} FAIL {title}: {detail}{}",
                    if known { " [known unattainable; see README]" } else { "" }
                );
            }
        }
    }

    // Robustness of AC-6 beyond the designated seed; informational only.
    println!("-- planted-signal seed sweep (informational)");
    for seed in 1..=5 {
        match planted_run(seed) {
            Ok(r) => println!(
                "seed {seed}: auroc {:.4} signal rank {} pearson multi {:.4} one {:.4} -> direction {}",
                r.auroc,
                r.signal_rank,
                r.multi_swap_pearson,
                r.one_swap_pearson,
                if r.multi_swap_pearson < 0.0 && r.one_swap_pearson.abs() < r.multi_swap_pearson.abs() {
                    "holds"
                } else {
                    "does not hold"
                }
            ),
            Err(e) => println!("seed {seed}: error {e}"),
        }
    }

    let passed = criteria.iter().filter(|c| c.2.is_ok()).count();
    println!("{passed}/{} criteria passed", criteria.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
