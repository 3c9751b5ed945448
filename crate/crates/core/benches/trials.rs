use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use crnsim::exec::Execution;
use crnsim::throughput::{run_scenario_with, ReconfigLevel, ScenarioConfig};

fn scenario_trials(c: &mut Criterion) {
    let mut group = c.benchmark_group("scenario_trials");
    group.sample_size(10);
    for level in [ReconfigLevel::NetCentralized, ReconfigLevel::NetDistributed] {
        let cfg = ScenarioConfig { trials: 200, ..ScenarioConfig::reference(level) };
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, level.name()), &cfg, |b, cfg| {
                b.iter(|| run_scenario_with(cfg, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, scenario_trials);
criterion_main!(benches);
