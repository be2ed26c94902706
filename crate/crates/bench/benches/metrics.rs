use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use sensaudit::classifiers::metrics::{auprc, auroc};
use sensaudit::classifiers::{train_linear, Classifier, TrainConfig};
use sensaudit::{rank_tokens, spearman, SpearmanVariant, TiePolicy, Token};
use sensaudit_bench::corpus;

fn bench_training(c: &mut Criterion) {
    let corpus = corpus(1000, 300, 3);
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("linear");
    group.sample_size(10);
    group.bench_function("train/1000x20", |b| b.iter(|| train_linear(&corpus, &cfg).unwrap()));
    let model = train_linear(&corpus, &cfg).unwrap().model;
    group.bench_function("predict_many/1000", |b| b.iter(|| model.predict_many(corpus.notes()).unwrap()));
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let labels: Vec<bool> = (0..n).map(|i| (i * 31) % 11 == 0).collect();
    c.bench_function("auroc/10k", |b| b.iter(|| auroc(black_box(&scores), &labels).unwrap()));
    c.bench_function("auprc/10k", |b| b.iter(|| auprc(black_box(&scores), &labels).unwrap()));

    let a: BTreeMap<Token, f64> = (0..500).map(|i| (Token::new(format!("t{i}")), ((i * 37) % 101) as f64)).collect();
    let bm: BTreeMap<Token, f64> = (0..500).map(|i| (Token::new(format!("t{i}")), ((i * 53) % 97) as f64)).collect();
    let (ra, rb) = (rank_tokens(&a, TiePolicy::Average).unwrap(), rank_tokens(&bm, TiePolicy::Average).unwrap());
    c.bench_function("spearman_tie_corrected/500", |b| {
        b.iter(|| spearman(&ra, &rb, SpearmanVariant::TieCorrected).unwrap())
    });
}

criterion_group!(benches, bench_training, bench_metrics);
criterion_main!(benches);
