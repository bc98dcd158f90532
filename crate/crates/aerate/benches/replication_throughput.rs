//! Replication throughput: the same bench cell driven by the
//! sequential trial loop (workers = 1) and by the worker pool
//! (workers = 0, one worker per core). Seeds and outputs are identical
//! by construction, so the comparison is pure scheduling overhead
//! versus parallel speedup.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use aerate::dgp::DatasetConfig;
use aerate::harness::{run_bench, BenchConfig};

fn cfg_with_workers(workers: usize) -> BenchConfig {
    let cells = vec!["aerate:a2ipw:nw".parse().unwrap()];
    let mut cfg = BenchConfig::standard(DatasetConfig::Synthetic(1), cells, 11);
    cfg.reps = 24;
    cfg.t_cap = 150;
    cfg.horizons = vec![150];
    cfg.workers = workers;
    cfg
}

fn replication_throughput(c: &mut Criterion) {
    let mut group = c.benchmark_group("replication_throughput");
    group.sample_size(10);
    for (label, workers) in [("sequential", 1usize), ("parallel", 0)] {
        let cfg = cfg_with_workers(workers);
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| run_bench(&cfg).expect("bench cell runs"));
        });
    }
    group.finish();
}

criterion_group!(benches, replication_throughput);
criterion_main!(benches);
