//! Microbenchmarks for the hot paths: the augmentation samplers, one Gibbs
//! sweep, and one optimizer epoch.

use criterion::{criterion_group, criterion_main, Criterion as Bencher};
use std::hint::black_box;

use pbdn_core::{
    gibbs::gibbs_step, make_two_spirals, map_gradient, run_map, sample_crt, sample_gamma,
    sample_polya_gamma, sample_truncated_poisson, standardize, Dataset, GibbsState,
    IshmHyperparams, MapConfig, MapParams, RngStream,
};

fn spiral_data() -> Dataset {
    let mut rng = RngStream::new(7);
    standardize(&make_two_spirals(200, 0.02, 1.5, &mut rng)).unwrap()
}

fn bench_samplers(c: &mut Bencher) {
    let mut g = c.benchmark_group("samplers");
    let mut rng = RngStream::new(1);
    g.bench_function("gamma(2.5, 0.8)", |b| {
        b.iter(|| sample_gamma(black_box(2.5), black_box(0.8), &mut rng).unwrap())
    });
    g.bench_function("zero_truncated_poisson(1.3)", |b| {
        b.iter(|| sample_truncated_poisson(black_box(1.3), &mut rng).unwrap())
    });
    g.bench_function("crt(25, 1.1)", |b| {
        b.iter(|| sample_crt(black_box(25), black_box(1.1), &mut rng).unwrap())
    });
    g.bench_function("polya_gamma(2.0, 1.5)", |b| {
        b.iter(|| sample_polya_gamma(black_box(2.0), black_box(1.5), &mut rng).unwrap())
    });
    g.finish();
}

fn bench_gibbs_sweep(c: &mut Bencher) {
    let data = spiral_data();
    let hp = IshmHyperparams::gibbs_defaults(20);
    c.bench_function("gibbs_sweep_n400_k20", |b| {
        b.iter_batched(
            || (GibbsState::init(&data, &hp), RngStream::new(3)),
            |(mut state, mut rng)| gibbs_step(&mut state, &data, &hp, &mut rng).unwrap(),
            criterion::BatchSize::SmallInput,
        )
    });
}

fn bench_map(c: &mut Bencher) {
    let data = spiral_data();
    let hp = IshmHyperparams::map_defaults(20);
    let batch: Vec<usize> = (0..100).collect();
    let mut rng = RngStream::new(5);
    let params = MapParams::init_perturbed(3, 20, 1.0, &mut rng);
    c.bench_function("map_gradient_m100_k20", |b| {
        b.iter(|| map_gradient(black_box(&params), &data, &batch, data.len(), &hp, 0.0))
    });
    let cfg = MapConfig { num_batches: 100, ..MapConfig::default() };
    c.bench_function("map_100_batches_k20", |b| {
        b.iter(|| run_map(&data, &hp, &cfg, &mut RngStream::new(9)).unwrap())
    });
}

criterion_group!(benches, bench_samplers, bench_gibbs_sweep, bench_map);
criterion_main!(benches);
