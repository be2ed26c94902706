use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};

use sensaudit::classifiers::metrics::{auprc, auroc, calibrate_threshold};
use sensaudit::classifiers::{read_model, train_linear, write_model};
use sensaudit::labels::read_encounters_csv;
use sensaudit::perturbation::{CooccurrenceProvider, ExternalProvider};
use sensaudit::stats::{read_ranking_csv, RankSource, RankingTable, SpearmanReport};
use sensaudit::{
    generate_labels, generate_synthetic, Classifier, ConstantClassifier, Corpus, ExternalClassifier, LabelConfig,
    Ranking, ReplacementProvider, ReplayClassifier, SyntheticSpec, TiePolicy, Token,
};

use crate::config::{ClassifierKind, Overrides, RunConfig};
use crate::output::write_atomic;

/// Loads the config file (or defaults) and applies command-line overrides.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_toml_str("")?,
    };
    cfg.apply(overrides)?;
    Ok(cfg)
}

pub fn labelgen(encounters: &Path, out: &Path, window_days: i64) -> Result<()> {
    let file = File::open(encounters).with_context(|| format!("opening {}", encounters.display()))?;
    let records = read_encounters_csv(BufReader::new(file)).with_context(|| format!("reading {}", encounters.display()))?;
    let labeled = generate_labels(&records, &LabelConfig::with_window(window_days))?;
    let overlaps = labeled.iter().filter(|l| l.overlap).count();
    if overlaps > 0 {
        eprintln!("warning: {overlaps} encounter(s) overlap the next admission; see the warning column");
    }
    write_atomic(out, |w| Ok(sensaudit::labels::write_labels_csv(w, &labeled)?))
}

pub fn synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let mut spec = SyntheticSpec::from_toml_str(&text)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let corpus = generate_synthetic(&spec)?;
    write_atomic(out, |w| Ok(corpus.write_jsonl(w)?))
}

fn write_resolved_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("config.toml"), |w| Ok(w.write_all(cfg.to_toml_string().as_bytes())?))
}

/// Reads the configured corpus; a labels table, when given, replaces the
/// notes' own labels and drops notes it excludes or does not mention.
fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let path = cfg.corpus.path.as_deref().context("no corpus: set [corpus] path")?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let corpus = Corpus::read_jsonl(BufReader::new(file), &cfg.corpus.policy())
        .with_context(|| format!("reading {}", path.display()))?;
    let Some(labels_path) = &cfg.corpus.labels else {
        return Ok(corpus);
    };
    let labels = read_note_labels(labels_path)?;
    let notes: Vec<_> = corpus
        .notes()
        .iter()
        .filter_map(|n| {
            let y = (*labels.get(&n.id)?)?;
            let mut n = n.clone();
            n.label = Some(y);
            Some(n)
        })
        .collect();
    Ok(Corpus::new(notes)?)
}

/// `note_id → Some(label)`, or `None` for excluded encounters.
fn read_note_labels(path: &Path) -> Result<HashMap<String, Option<bool>>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: missing column `{name}`", path.display()))
    };
    let (id_col, label_col) = (col("note_id")?, col("label")?);
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let label = match &rec[label_col] {
            "1" => Some(true),
            "0" => Some(false),
            "excluded" => None,
            other => bail!("{}:{line}: bad label `{other}`", path.display()),
        };
        out.insert(rec[id_col].to_owned(), label);
    }
    Ok(out)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir()?;
    let corpus = load_corpus(cfg)?;
    let (train_set, holdout) = corpus.stratified_split(cfg.train.holdout, cfg.seed)?;
    let (labels_train, labels_holdout) = (labels_of(&train_set)?, labels_of(&holdout)?);
    for (name, labels) in [("training", &labels_train), ("held-out", &labels_holdout)] {
        let pos = labels.iter().filter(|&&y| y).count();
        if pos == 0 || pos == labels.len() {
            bail!(
                "the {name} split has a single class ({pos} positive of {}); a classifier cannot be trained or evaluated",
                labels.len()
            );
        }
    }
    let trained = train_linear(&train_set, &cfg.train_config())?;
    let scores = trained.model.predict_many(holdout.notes())?;
    let cal = calibrate_threshold(&scores, &labels_holdout, cfg.train.target_recall)?;
    let metrics = format!(
        "n_train = {}\nn_holdout = {}\nauroc = {}\nauprc = {}\nthreshold = {}\nrecall = {}\ntarget_recall = {}\nfinal_loss = {}\n",
        train_set.len(),
        holdout.len(),
        auroc(&scores, &labels_holdout)?,
        auprc(&scores, &labels_holdout)?,
        cal.threshold,
        cal.recall,
        cfg.train.target_recall,
        trained.final_loss,
    );

    write_atomic(&out.join("model.csv"), |w| Ok(write_model(w, &trained.model)?))?;
    write_atomic(&out.join("holdout.jsonl"), |w| Ok(holdout.write_jsonl(w)?))?;
    write_atomic(&out.join("metrics.txt"), |w| Ok(w.write_all(metrics.as_bytes())?))?;
    write_resolved_config(cfg, out)?;
    print!("{metrics}");
    Ok(())
}

fn labels_of(corpus: &Corpus) -> Result<Vec<bool>> {
    corpus.labels().context("every note needs a label for training")
}

fn load_tokens(cfg: &RunConfig) -> Result<Vec<Token>> {
    let mut tokens: Vec<Token> = Vec::new();
    if let Some(path) = &cfg.tokens.path {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for line in text.lines() {
            let word = line.split('#').next().unwrap_or("").trim();
            if !word.is_empty() {
                tokens.push(word.into());
            }
        }
    }
    tokens.extend(cfg.tokens.list.iter().map(|t| Token::from(t.as_str())));
    if tokens.is_empty() {
        bail!("no tokens to audit: set [tokens] path or list");
    }
    Ok(tokens)
}

fn build_classifier(cfg: &RunConfig) -> Result<Box<dyn Classifier>> {
    let c = &cfg.classifier;
    Ok(match c.kind {
        ClassifierKind::Linear => {
            let path = c.model.as_deref().context("classifier `linear` needs [classifier] model")?;
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Box::new(read_model(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?)
        }
        ClassifierKind::Constant => {
            Box::new(ConstantClassifier::new(c.value.context("classifier `constant` needs [classifier] value")?)?)
        }
        ClassifierKind::External => {
            let endpoint = c.endpoint.as_deref().context("classifier `external` needs [classifier] endpoint")?;
            Box::new(ExternalClassifier::connect(endpoint, Duration::from_secs(c.timeout_secs))?)
        }
        ClassifierKind::Replay => {
            let path = c.replay.as_deref().context("classifier `replay` needs [classifier] replay")?;
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Box::new(ReplayClassifier::from_csv(format!("replay({})", path.display()), BufReader::new(file))?)
        }
    })
}

fn build_provider(cfg: &RunConfig, corpus: &Corpus) -> Result<Option<Box<dyn ReplacementProvider>>> {
    let n_context = cfg.audit.max_filters_per_family.map_or(cfg.filters.context, |m| m.min(cfg.filters.context));
    if n_context == 0 {
        return Ok(None);
    }
    let p = cfg.filters.provider.as_str();
    Ok(Some(if p == "cooccurrence" {
        Box::new(CooccurrenceProvider::new(corpus, cfg.filters.window))
    } else if p.starts_with("tcp:") || p.starts_with("exec:") {
        Box::new(ExternalProvider::connect(p, Duration::from_secs(cfg.classifier.timeout_secs))?)
    } else {
        bail!("unknown context provider `{p}` (expected cooccurrence, tcp:HOST:PORT or exec:COMMAND)")
    }))
}

pub fn audit(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir()?;
    let corpus = load_corpus(cfg)?;
    let tokens = load_tokens(cfg)?;
    let classifier = build_classifier(cfg)?;
    let provider = build_provider(cfg, &corpus)?;
    let report = sensaudit::audit(
        &classifier,
        &corpus,
        &tokens,
        &cfg.filter_spec(),
        provider.as_deref(),
        &cfg.audit_options(),
    )?;
    if !report.unsupported.is_empty() {
        let names: Vec<&str> = report.unsupported.iter().map(Token::as_str).collect();
        eprintln!(
            "warning: {} token(s) appear in no note and were not scored: {}",
            names.len(),
            names.join(", ")
        );
    }
    write_atomic(&out.join("report.csv"), |w| Ok(report.write_csv(w)?))?;
    write_atomic(&out.join("report.jsonl"), |w| Ok(report.write_jsonl(w)?))?;
    write_resolved_config(cfg, out)?;
    Ok(())
}

/// A ranking from any supported table: sensitivity reports and `token,rank`
/// tables are taken as is, rater tables are combined, and `token,score`
/// tables are ranked highest first.
pub fn load_ranking(path: &Path) -> Result<Ranking> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let table = read_ranking_csv(BufReader::new(file), RankSource::Model).with_context(|| format!("reading {}", path.display()))?;
    Ok(match table {
        RankingTable::Raters(r) => r.combined,
        RankingTable::Ranks(r) => r,
        RankingTable::Scores(s) => sensaudit::rank_tokens(&s, TiePolicy::Strict)?,
    })
}

pub fn compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<()> {
    let (ra, rb) = (load_ranking(a)?, load_ranking(b)?);
    let keys = |r: &Ranking| -> BTreeSet<String> { r.entries().keys().map(|t| t.as_str().to_owned()).collect() };
    let (ka, kb) = (keys(&ra), keys(&rb));
    let common: BTreeSet<&str> = ka.intersection(&kb).map(String::as_str).collect();
    if common.is_empty() {
        bail!("{} and {} share no tokens", a.display(), b.display());
    }
    let (ra, rb) = if common.len() != ka.len() || common.len() != kb.len() {
        eprintln!(
            "warning: comparing the {} shared tokens ({} only in the first table, {} only in the second)",
            common.len(),
            ka.len() - common.len(),
            kb.len() - common.len()
        );
        (ra.restricted(&common), rb.restricted(&common))
    } else {
        (ra, rb)
    };
    let report = SpearmanReport::compute(&ra, &rb)?;

    let mut rows: Vec<(f64, &Token, f64)> =
        ra.entries().iter().map(|(t, &x)| (x, t, rb.get(t.as_str()).unwrap_or(f64::NAN))).collect();
    rows.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(y.1)));
    let mut table = String::from("token,rank_a,rank_b\n");
    for (x, t, y) in rows {
        table.push_str(&format!("{t},{x},{y}\n"));
    }

    let mut text = Vec::new();
    report.write_text(&mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    print!("{table}");
    if let Some(dir) = out {
        write_atomic(&dir.join("spearman.txt"), |w| Ok(w.write_all(&text)?))?;
        write_atomic(&dir.join("ranks.csv"), |w| Ok(w.write_all(table.as_bytes())?))?;
    }
    Ok(())
}

pub fn rank(scores_path: &Path, out: &Path, ties: TiePolicy) -> Result<()> {
    let file = File::open(scores_path).with_context(|| format!("opening {}", scores_path.display()))?;
    let RankingTable::Scores(scores) = read_ranking_csv(BufReader::new(file), RankSource::Model)? else {
        bail!("{}: expected a token,score table", scores_path.display());
    };
    let ranking = sensaudit::rank_tokens(&scores, ties)?;
    write_atomic(out, |w| {
        writeln!(w, "token,score,rank")?;
        for (t, r) in ranking.ordered() {
            writeln!(w, "{t},{},{r}", scores[t])?;
        }
        Ok(())
    })
}
