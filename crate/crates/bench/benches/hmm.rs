use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hmt_core::data::{generate_synthetic, synthetic_vocab, ParallelBatch, SyntheticTaskSpec, TaskKind};
use hmt_core::hmm::{expected_latency, forward_marginal, TransitionTensor};
use hmt_core::model::LogConfidence;
use hmt_core::policy::{source_from_ids, translate_streaming, HmtScorer, PolicyConfig};
use hmt_core::train::{loss_and_gradients, mean_loss};
use hmt_core::{ConfidenceMatrix, Hmt, HmtConfig, MomentGrid};

/// Deterministic values in `(0, 1)` without a RNG dependency.
fn spread(n: usize, salt: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.05 + 0.9 * (((i * 7919 + salt * 104_729) % 1000) as f64 / 1000.0))
        .collect()
}

fn lattice(rows: usize, states: usize) -> (Vec<f64>, TransitionTensor, MomentGrid) {
    let grid = MomentGrid::new(2, states, rows, rows);
    let c = ConfidenceMatrix::from_probabilities(rows, states, spread(rows * states, 1));
    let trans = TransitionTensor::new(&LogConfidence::from_confidences(&c), &grid);
    let emissions = spread(rows * states, 2).into_iter().map(|p| p.ln()).collect();
    (emissions, trans, grid)
}

fn dynamic_programs(c: &mut Criterion) {
    let mut group = c.benchmark_group("hmm");
    for &(rows, states) in &[(20, 4), (50, 8), (100, 16)] {
        let (e, trans, grid) = lattice(rows, states);
        let id = format!("{rows}x{states}");
        group.bench_with_input(BenchmarkId::new("forward_marginal", &id), &(), |b, _| {
            b.iter(|| forward_marginal(black_box(&e), black_box(&trans)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("expected_latency", &id), &(), |b, _| {
            b.iter(|| expected_latency(black_box(&trans), black_box(&grid)))
        });
        group.bench_with_input(BenchmarkId::new("transition_tensor", &id), &(), |b, _| {
            let c = ConfidenceMatrix::from_probabilities(rows, states, spread(rows * states, 3));
            let conf = LogConfidence::from_confidences(&c);
            b.iter(|| TransitionTensor::new(black_box(&conf), black_box(&grid)))
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let spec = SyntheticTaskSpec {
        kind: TaskKind::Copy,
        vocab_size: 20,
        min_len: 10,
        max_len: 10,
        lag: 0,
        seed: 1,
    };
    let pairs = generate_synthetic(&spec, 8).unwrap();
    let v = synthetic_vocab(20).len();
    let hmt = Hmt::new(HmtConfig::default(), v, v, 1).unwrap();
    let refs: Vec<_> = pairs.iter().collect();
    let batch = ParallelBatch::from_pairs(&refs);
    let examples: Vec<_> = batch.examples().collect();

    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("loss_8x10", |b| {
        b.iter(|| mean_loss(&hmt, black_box(&examples)).unwrap())
    });
    group.bench_function("loss_and_gradients_8x10", |b| {
        b.iter(|| loss_and_gradients(&hmt, black_box(&examples), Some((1, 1))).unwrap())
    });
    let cfg = PolicyConfig::from_model(hmt.config());
    group.bench_function("streaming_translate_10", |b| {
        b.iter(|| {
            let mut scorer = HmtScorer::new(&hmt);
            translate_streaming(&mut scorer, source_from_ids(&pairs[0].source), &cfg).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, dynamic_programs, model);
criterion_main!(benches);
