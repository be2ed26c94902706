//! Command-line front end: config-driven runs of label generation, corpus
//! synthesis, training, auditing, ranking and ranking comparison.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use sensaudit::{SwapScheme, TiePolicy};

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "sensaudit", version, about = "Token sensitivity audits for text classifiers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML); relative paths resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the audit; 1 runs serially.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub scheme: Option<Scheme>,
    /// Replace the configured classifier with recorded probabilities
    /// (`replay:<file>`).
    #[arg(long, global = true, value_name = "replay:FILE")]
    pub stub_classifier: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    OneSwap,
    MultiSwap,
}

impl From<Scheme> for SwapScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::OneSwap => SwapScheme::OneSwap,
            Scheme::MultiSwap => SwapScheme::MultiSwap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ties {
    Strict,
    Competition,
    Average,
}

impl From<Ties> for TiePolicy {
    fn from(t: Ties) -> Self {
        match t {
            Ties::Strict => TiePolicy::Strict,
            Ties::Competition => TiePolicy::Competition,
            Ties::Average => TiePolicy::Average,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive readmission labels from an encounter table.
    Labelgen {
        encounters: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Readmission window in days (the final-encounter buffer matches it).
        #[arg(long, default_value_t = 30)]
        window_days: i64,
    },
    /// Generate a synthetic labeled corpus from a TOML spec.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the tf-idf logistic model and report held-out metrics.
    Train {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score the configured token set against the configured classifier.
    Audit {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spearman correlation between two rankings (reports or reference tables).
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Directory for `spearman.txt` and `ranks.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank a `token,score` table, highest score first.
    Rank {
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Ties::Strict)]
        ties: Ties,
    },
}

impl GlobalArgs {
    fn overrides(&self, out: Option<PathBuf>) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            scheme: self.scheme.map(Into::into),
            output_dir: out,
            stub_classifier: self.stub_classifier.clone(),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Labelgen { encounters, out, window_days } => commands::labelgen(&encounters, &out, window_days),
        Command::Synth { spec, out } => commands::synth(&spec, &out, g.seed),
        Command::Train { out } => commands::train(&commands::load_config(g.config.as_deref(), &g.overrides(out))?),
        Command::Audit { out } => commands::audit(&commands::load_config(g.config.as_deref(), &g.overrides(out))?),
        Command::Compare { a, b, out } => commands::compare(&a, &b, out.as_deref()),
        Command::Rank { scores, out, ties } => commands::rank(&scores, &out, ties.into()),
    }
}
