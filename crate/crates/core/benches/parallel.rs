//! Sequential vs data-parallel throughput of the hot inner loops.
//!
//! Every parallel map in the crate collects results in input order and keeps
//! reductions sequential, so both paths produce bit-identical results; these
//! benches measure what the parallelism buys on the current machine.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use symgrad::dataset::{generate_experiment, ExperimentId};
use symgrad::expr::parse;
use symgrad::gradients::{extract, ExtractionConfig};
use symgrad::nn::MLPModel;
use symgrad::parallel::{map_ordered_serial, set_serial_mode};
use symgrad::search::{evolve, Population, SearchConfig};

#[cfg(feature = "parallel")]
use symgrad::parallel::map_ordered_parallel;

fn bench_input_gradients(c: &mut Criterion) {
    let model = MLPModel::init(2, &[64, 64], 7).unwrap();
    let ds = generate_experiment(ExperimentId::new(1).unwrap(), 400, 3, 0.01).unwrap();
    let rows = ds.x.clone();

    let mut group = c.benchmark_group("input_gradients_400x64x64");
    group.bench_function("serial", |b| {
        b.iter(|| map_ordered_serial(black_box(&rows), |x| model.input_gradient(x).unwrap()))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| map_ordered_parallel(black_box(&rows), |x| model.input_gradient(x).unwrap()))
    });
    group.finish();
}

fn bench_extract(c: &mut Criterion) {
    let model = MLPModel::init(2, &[64, 64], 7).unwrap();
    let ds = generate_experiment(ExperimentId::new(1).unwrap(), 400, 3, 0.01).unwrap();
    let cfg = ExtractionConfig::default();

    let mut group = c.benchmark_group("extract_400x64x64");
    group.bench_function("serial", |b| {
        set_serial_mode(true);
        b.iter(|| extract(black_box(&model), black_box(&ds), &cfg).unwrap());
        set_serial_mode(false);
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        set_serial_mode(false);
        b.iter(|| extract(black_box(&model), black_box(&ds), &cfg).unwrap());
    });
    group.finish();
}

fn bench_evolve(c: &mut Criterion) {
    let ds = generate_experiment(ExperimentId::new(1).unwrap(), 500, 3, 0.0).unwrap();
    let raw: Vec<Vec<f64>> = ds.x.iter().map(|r| vec![2.0 * r[0], 4.0 * r[1]]).collect();
    let gs = symgrad::gradients::GradientSet::from_raw_gradients(ds.x.clone(), raw).unwrap();
    let cfg = SearchConfig {
        population_size: 100,
        ..SearchConfig::default()
    };

    let mut group = c.benchmark_group("evolve_one_generation_100");
    group.bench_function("serial", |b| {
        set_serial_mode(true);
        b.iter_batched(
            || Population::random(2, &cfg, 0),
            |pop| evolve(pop, &gs, &cfg),
            BatchSize::SmallInput,
        );
        set_serial_mode(false);
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        set_serial_mode(false);
        b.iter_batched(
            || Population::random(2, &cfg, 0),
            |pop| evolve(pop, &gs, &cfg),
            BatchSize::SmallInput,
        );
    });
    group.finish();
}

fn bench_expression_gradient(c: &mut Criterion) {
    let tree = parse("x1*exp(0 - 0.5*(x2*x2 + x3*x3)) + sin(x2 + x3)/(1 + x1*x1)").unwrap();
    let points: Vec<Vec<f64>> = (0..1000)
        .map(|i| {
            let t = i as f64 * 0.001;
            vec![t * 2.0 - 1.0, t, 1.0 - t]
        })
        .collect();

    let mut group = c.benchmark_group("expr_grad_1000_points");
    group.bench_function("serial", |b| {
        b.iter(|| map_ordered_serial(black_box(&points), |x| tree.grad(x)))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| map_ordered_parallel(black_box(&points), |x| tree.grad(x)))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_input_gradients,
    bench_extract,
    bench_evolve,
    bench_expression_gradient
);
criterion_main!(benches);
