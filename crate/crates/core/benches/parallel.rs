//! Sequential versus data-parallel pipeline throughput on synthetic scenes.
//! Build with `--no-default-features` to compile the parallel path out; both
//! groups then run sequentially.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use intervene_core::adapters::Backends;
use intervene_core::domain::{Endpoints, OperatorEndpoint, RunConfig};
use intervene_core::engine::{run_images, EngineOptions};
use intervene_core::exec::default_workers;
use intervene_core::synthetic::{SceneParams, SyntheticWorld};

const SEED: u64 = 11;
const N_SCENES: u64 = 48;

fn pipeline(c: &mut Criterion) {
    let world = Arc::new(SyntheticWorld::new(SEED, SceneParams::default()).unwrap());
    let images: Vec<_> = (0..N_SCENES)
        .map(|i| world.generate_record(i, &format!("b{i:03}")).unwrap().1)
        .collect();
    let backends = Backends::synthetic(world);
    let config = RunConfig {
        rng_seed: SEED,
        endpoints: Endpoints::all(OperatorEndpoint::synthetic()),
        ..RunConfig::default()
    };
    let mut group = c.benchmark_group("run_images");
    group.sample_size(10);
    let cores = default_workers();
    for (label, workers) in [("sequential", 1), ("parallel", cores)] {
        let opts = EngineOptions { workers, artifacts: None };
        group.bench_with_input(BenchmarkId::new(label, workers), &opts, |b, opts| {
            b.iter(|| run_images(&images, &config, &backends, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
