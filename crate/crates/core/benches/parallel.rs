use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mmrecon::objectives::{untrained_base, Model, ModelConfig, Variant};
use mmrecon::par::Mode;
use mmrecon::syndata::{apply_fixed_mask, generate_dataset_with, SyntheticConfig};

const MODES: [(&str, Mode); 2] = [("sequential", Mode::Sequential), ("parallel", Mode::Parallel)];

fn data_generation(c: &mut Criterion) {
    let cfg = SyntheticConfig::default();
    let mut group = c.benchmark_group("generate_dataset");
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| generate_dataset_with(&cfg, mode).unwrap()));
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let cfg = SyntheticConfig { n_train: 128, n_val: 8, n_test: 64, ..Default::default() };
    let bench = generate_dataset_with(&cfg, Mode::Sequential).unwrap();
    let base = untrained_base(&bench, &ModelConfig::default(), 0).unwrap();
    let model = Model::new(Arc::new(base), Variant::default()).unwrap();
    let masked = apply_fixed_mask(&bench.test, &[1, 2]).unwrap();
    let refs: Vec<_> = masked.samples.iter().collect();
    let mut group = c.benchmark_group("infer_64");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| model.infer(&refs, 7, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, data_generation, inference);
criterion_main!(benches);
