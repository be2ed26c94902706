//! Token-level sensitivity auditing for binary text classifiers.
//!
//! Perturb a token of interest across the notes that contain it, measure
//! how far the classifier's probability moves, rank tokens by that
//! movement and compare the ranking against a reference ranking.

pub mod classifiers;
pub mod corpus;
pub mod labels;
pub mod perturbation;
pub mod sensitivity;
pub mod stats;
pub mod wire;

pub use classifiers::{Classifier, ClassifierError, ConstantClassifier, ExternalClassifier, LinearModel, ReplayClassifier};
pub use corpus::{generate_synthetic, Corpus, CorpusError, CorpusView, Note, SyntheticSpec, Token};
pub use labels::{generate_labels, EncounterRecord, LabelConfig, LabelOutcome, LabeledEncounter};
pub use perturbation::{
    perturb, FilterKind, FilterSet, PerturbationError, PerturbationFilter, ReplacementProvider, SwapScheme,
};
pub use sensitivity::{audit, AuditOptions, FilterSpec, SensitivityError, SensitivityReport};
pub use stats::{rank_tokens, spearman, Ranking, SpearmanVariant, TiePolicy};
