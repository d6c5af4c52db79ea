use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dimred_core::fermion_det::{
    fredholm_series, kernel_determinant, Discretization, FermionKernel,
};
use dimred_core::fields::{apply_fractional_inverse, replica_seed, sample_white_noise, GridSpec};
use dimred_core::girsanov::{det2, lambda_u, ShiftOperator};
use dimred_core::harness::ExperimentConfig;
use dimred_core::kernels::{make_cutoff, CutOffKind};
use dimred_core::solver::solve;
use nalgebra::DMatrix;
use std::hint::black_box;

fn config(l: f64, n_side: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::quartic_default();
    cfg.grid = GridSpec::new(l, n_side, 1, 1.0).unwrap();
    cfg
}

fn smoothing(c: &mut Criterion) {
    let grid = GridSpec::new(16.0, 256, 1, 1.0).unwrap();
    let xi = sample_white_noise(grid, 1);
    c.bench_function("smooth_noise_256", |b| {
        b.iter(|| apply_fractional_inverse(black_box(&xi.field), 1.0))
    });
}

fn solving(c: &mut Criterion) {
    let cfg = config(16.0, 128);
    let r = cfg.validate().unwrap();
    let mut i = 0u64;
    c.bench_function("solve_quartic_128", |b| {
        b.iter_batched(
            || {
                i += 1;
                sample_white_noise(cfg.grid, replica_seed(1, i))
            },
            |xi| solve(&xi, &r.potential, &r.cutoff, &cfg.solver).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn density(c: &mut Criterion) {
    let cfg = config(16.0, 16);
    let r = cfg.validate().unwrap();
    let xi = sample_white_noise(cfg.grid, 4);
    c.bench_function("lambda_u_16", |b| {
        b.iter(|| {
            let mut shift = ShiftOperator::new(&xi, &r.potential, &r.cutoff).unwrap();
            lambda_u(&mut shift, true).unwrap()
        })
    });
    let m = DMatrix::from_fn(64, 64, |i, j| 0.01 / (1.0 + (i + j) as f64));
    c.bench_function("det2_64", |b| b.iter(|| det2(black_box(&m))));
}

fn fermion(c: &mut Criterion) {
    let f = make_cutoff(CutOffKind::ExpSqrt, 1.0, 1.0).unwrap();
    let k = FermionKernel::cutoff_weighted(&f, 0.5, 0.5, Discretization::default()).unwrap();
    c.bench_function("fermion_determinant", |b| {
        b.iter(|| kernel_determinant(black_box(&k)))
    });
    c.bench_function("fermion_series_5", |b| {
        b.iter(|| fredholm_series(black_box(&k), 5).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = smoothing, solving, density, fermion
}
criterion_main!(benches);
