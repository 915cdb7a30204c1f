//! Sequential vs rayon execution of the data-parallel hot loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use retf_core::dgv::exhaustive_dgv;
use retf_core::exec::Execution;
use retf_core::objective::Prepared;
use retf_core::scenario::{CapacityMode, Scenario, ScenarioConfig};

const PATHS: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn snapshots(c: &mut Criterion) {
    let mut cfg = ScenarioConfig::scaled_default();
    cfg.capacity_mode = CapacityMode::Csi;
    cfg.capacity.ilf = 5.0;
    let scn = Scenario::build(cfg).unwrap();
    let mut g = c.benchmark_group("snapshot_store");
    g.sample_size(10);
    for (name, exec) in PATHS {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| Prepared::new(scn.clone(), exec).unwrap())
        });
    }
    g.finish();
}

fn exhaustive(c: &mut Criterion) {
    let mut cfg = ScenarioConfig::scaled_default();
    cfg.capacity.ilf = 5.0;
    cfg.rpp.count = 12;
    cfg.sus.count = 3;
    cfg.time_step = 5e-3;
    let prep = Prepared::new(Scenario::build(cfg).unwrap(), Execution::Sequential).unwrap();
    let view = prep.view(CapacityMode::Geometry);
    let mut g = c.benchmark_group("exhaustive_dgv_12");
    g.sample_size(10);
    for (name, exec) in PATHS {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| exhaustive_dgv(&prep.scenario.ctx, &view, 14, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, snapshots, exhaustive);
criterion_main!(benches);
