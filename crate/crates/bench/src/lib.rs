//! Shared fixtures for the benchmarks.

use sensaudit::classifiers::{train_linear, LinearModel, TrainConfig};
use sensaudit::corpus::PlantedSignal;
use sensaudit::{generate_synthetic, Corpus, SyntheticSpec, Token};

/// A labeled synthetic corpus with one planted signal token, `stroke`.
pub fn corpus(num_notes: usize, vocab_size: usize, seed: u64) -> Corpus {
    generate_synthetic(&SyntheticSpec {
        seed,
        num_notes,
        note_length_min: 20,
        note_length_max: 60,
        vocab_size,
        planted: vec![PlantedSignal {
            token: "stroke".into(),
            correlation: 0.8,
            presence_rate: None,
        }],
        positive_rate: 0.1,
        zipf_exponent: 1.0,
    })
    .expect("valid spec")
}

pub fn model(corpus: &Corpus, epochs: usize) -> LinearModel {
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    train_linear(corpus, &cfg).expect("trainable corpus").model
}

/// `count` background tokens spread over the frequency ranks, plus the
/// planted token.
pub fn probes(vocab_size: usize, count: usize) -> Vec<Token> {
    let step = (vocab_size - 1) / count.max(1);
    let mut v: Vec<Token> = (0..count).map(|i| SyntheticSpec::background_token(i * step)).collect();
    v.push("stroke".into());
    v
}
