//! Path-batch throughput: data-parallel map (rayon under the default
//! `parallel` feature) against the always-sequential fallback, on the two
//! workloads that dominate the Monte-Carlo experiments.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pmldp::exec::{map_indexed, map_indexed_seq};
use pmldp::model::ModelSpec;
use pmldp::noise::{sample_path, NoiseSpec};
use pmldp::solver::{solve_skeleton, solve_spde, Driving};
use pmldp::spaces::{norm_h, Discretization, Field};

fn spde_batch(c: &mut Criterion) {
    let d = Discretization::new(31, 100, 0.25).unwrap();
    let spec = ModelSpec::porous(3.0, 1.0, 0.1).unwrap();
    let ns = NoiseSpec::power_decay(4, 1.0).unwrap();
    let x0 = Field::from_modes(&[(1, 0.3)], &d).unwrap();
    let n_paths = 64usize;

    let run_one = |p: usize| {
        let w = sample_path(&ns, &d, 42, p as u64);
        let traj = solve_spde(&spec, &ns, &x0, 0.2, &w, &d).unwrap();
        norm_h(traj.endpoint(), &d).unwrap()
    };

    let mut group = c.benchmark_group("spde_batch");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("parallel", n_paths), &n_paths, |b, &n| {
        b.iter(|| black_box(map_indexed(n, run_one)))
    });
    group.bench_with_input(
        BenchmarkId::new("sequential", n_paths),
        &n_paths,
        |b, &n| b.iter(|| black_box(map_indexed_seq(n, run_one))),
    );
    group.finish();
}

fn skeleton_batch(c: &mut Criterion) {
    let d = Discretization::new(31, 200, 0.5).unwrap();
    let spec = ModelSpec::porous(3.0, 1.0, 0.0).unwrap();
    let ns = NoiseSpec::power_decay(3, 1.0).unwrap();
    let x0 = Field::from_modes(&[(1, 0.5)], &d).unwrap();
    let n_solves = 32usize;

    let run_one = |i: usize| {
        let a = 0.2 + 0.01 * i as f64;
        let ctrl = pmldp::noise::Control::constant(&[(1, a)], d.n_steps(), 3).unwrap();
        let z = solve_skeleton(&spec, &ns, &x0, &ctrl, Driving::QPhi, &d).unwrap();
        norm_h(z.endpoint(), &d).unwrap()
    };

    let mut group = c.benchmark_group("skeleton_batch");
    group.sample_size(10);
    group.bench_with_input(
        BenchmarkId::new("parallel", n_solves),
        &n_solves,
        |b, &n| b.iter(|| black_box(map_indexed(n, run_one))),
    );
    group.bench_with_input(
        BenchmarkId::new("sequential", n_solves),
        &n_solves,
        |b, &n| b.iter(|| black_box(map_indexed_seq(n, run_one))),
    );
    group.finish();
}

criterion_group!(benches, spde_batch, skeleton_batch);
criterion_main!(benches);
