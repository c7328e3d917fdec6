use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};

use hessbar::geometry::{search_direction, ConstraintSystem};
use hessbar::kernels::{metric_at, Kernel};
use hessbar::solver::{hba_solve, kernels_for, SolverConfig};
use hessbar::tap::{enumerate_min_hop_paths, generate_barabasi_albert, generate_tap_instance, tap_problem, TapGenConfig, TapObjectiveMode};
use hessbar::KernelSpec;

fn block_system(blocks: usize, size: usize) -> ConstraintSystem {
    let n = blocks * size;
    let groups = (0..blocks).map(|b| (b * size..(b + 1) * size).collect()).collect();
    ConstraintSystem::block_simplex(n, groups, vec![1.0; blocks]).unwrap()
}

fn search_direction_paths(c: &mut Criterion) {
    let mut group = c.benchmark_group("search_direction");
    for &(blocks, size) in &[(10, 20), (50, 20)] {
        let fast = block_system(blocks, size);
        let dense = ConstraintSystem::new(fast.a().clone(), fast.b().clone()).unwrap();
        let n = blocks * size;
        let x = DVector::from_fn(n, |i, _| (1.0 + (i % 7) as f64) / (4.0 * size as f64));
        let grad = DVector::from_fn(n, |i, _| ((i * 37) % 11) as f64 - 5.0);
        let kernels = vec![Kernel::gibbs(0.0).unwrap(); n];
        let metric = metric_at(&kernels, &x).unwrap();
        group.bench_with_input(BenchmarkId::new("block", n), &n, |b, _| {
            b.iter(|| search_direction(black_box(&fast), &metric, black_box(&grad)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dense", n), &n, |b, _| {
            b.iter(|| search_direction(black_box(&dense), &metric, black_box(&grad)).unwrap())
        });
    }
    group.finish();
}

fn hba_on_tap(c: &mut Criterion) {
    let (instance, x0) = generate_tap_instance(&TapGenConfig::new(30, 40, 10, 1)).unwrap();
    let problem = tap_problem(Arc::new(instance), TapObjectiveMode::TotalEdgeLatency).unwrap();
    let kernels = kernels_for(&problem, &KernelSpec::Gibbs { beta: 0.0 }).unwrap();
    let config = SolverConfig { max_iterations: 100, ..SolverConfig::default() };
    c.bench_function("hba_tap_100_iterations", |b| {
        b.iter(|| hba_solve(&problem, black_box(&x0), &kernels, &config).unwrap())
    });
}

fn yen_paths(c: &mut Criterion) {
    let graph = generate_barabasi_albert(50, 2, 3).unwrap();
    c.bench_function("yen_k20_ba50", |b| b.iter(|| enumerate_min_hop_paths(&graph, black_box(0), black_box(49), 20).unwrap()));
}

fn dense_reference(c: &mut Criterion) {
    // A general (non-simplex) system of the same size for comparison.
    let n = 200;
    let a = DMatrix::from_fn(5, n, |i, j| ((i * 13 + j * 7) % 17) as f64 / 17.0 + if j % 5 == i { 1.0 } else { 0.0 });
    let x = DVector::from_element(n, 0.5);
    let b = &a * &x;
    let cs = ConstraintSystem::new(a, b).unwrap();
    let grad = DVector::from_fn(n, |i, _| (i as f64).sin());
    let metric = metric_at(&vec![Kernel::burg(0.0).unwrap(); n], &x).unwrap();
    c.bench_function("search_direction/general_m5_n200", |bch| {
        bch.iter(|| search_direction(black_box(&cs), &metric, black_box(&grad)).unwrap())
    });
}

criterion_group!(benches, search_direction_paths, hba_on_tap, yen_paths, dense_reference);
criterion_main!(benches);
