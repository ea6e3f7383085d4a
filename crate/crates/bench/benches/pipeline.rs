use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use headimpact_bench::{random_input, random_labels};
use headimpact_core::experiment::benchmark::{build_benchmark, BenchmarkSpec};
use headimpact_core::metrics::{confusion, report};
use headimpact_core::nnet::{backward, forward, Architecture, Mode, Model};
use headimpact_core::sim::{simulate_event, simulate_impact, ImpactConfig, SurrogateParams};

fn detector(c: &mut Criterion) {
    let arch = Architecture::default();
    let model = Model::init(arch.clone(), 0).unwrap();
    let per_event = arch.in_channels * arch.input_len;

    let one = random_input(per_event, 1);
    c.bench_function("detector/infer_1", |b| {
        b.iter(|| forward(&model, black_box(&one), 1, Mode::Infer).unwrap())
    });

    let batch = 64;
    let x = random_input(batch * per_event, 2);
    let labels: Vec<usize> = (0..batch).map(|i| i % 2).collect();
    let mut g = c.benchmark_group("detector");
    g.sample_size(10);
    g.bench_function("train_step_64", |b| {
        b.iter(|| {
            let trace = forward(&model, black_box(&x), batch, Mode::Train { seed: 3 }).unwrap();
            backward(&model, &trace, &labels, [1.0, 1.0]).unwrap()
        })
    });
    g.finish();
}

fn surrogate(c: &mut Criterion) {
    let params = SurrogateParams::default();
    let config = ImpactConfig {
        alpha_deg: -90.0,
        beta_deg: 10.0,
        z: 0.0,
        v0: 5.0,
        offset: 0.01,
    };
    let mut g = c.benchmark_group("surrogate");
    g.sample_size(10);
    g.bench_function("simulate_impact", |b| b.iter(|| simulate_impact(black_box(&config), &params).unwrap()));
    g.bench_function("simulate_event", |b| b.iter(|| simulate_event(black_box(&config), &params).unwrap()));
    g.bench_function("benchmark_8x10", |b| {
        let spec = BenchmarkSpec {
            n_true: 8,
            imbalance: 10,
            ..Default::default()
        };
        b.iter(|| build_benchmark(black_box(&spec)).unwrap())
    });
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let truth = random_labels(100_000, 10, 4);
    c.bench_function("metrics/confusion_report_100k", |b| {
        b.iter_batched(
            || random_labels(100_000, 10, 5),
            |pred| report(&confusion(&pred, &truth).unwrap()),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, detector, surrogate, metrics);
criterion_main!(benches);
