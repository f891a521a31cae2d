use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pdra_core::attack::{AdversaryStrategy, AttackSchedule};
use pdra_core::problems::{gen_ev_instance, EvInstanceParams};
use pdra_core::sim::{run, RunConfig};
use pdra_core::solvers::SolverKind;
use pdra_core::Exec;

fn config(n: usize) -> RunConfig {
    let spec = gen_ev_instance(&EvInstanceParams::standard(n, 4, 1)).unwrap().with_gamma(0.2).unwrap();
    RunConfig::new(spec.clone(), SolverKind::AveragingDynamic { window: 20, alpha2: 0.45 }, 100)
        .with_record_every(100)
        .with_attack(AttackSchedule::BernoulliDynamic { p: 0.1, seed: 1 }, AdversaryStrategy::uniform_over_box(&spec, 2))
}

fn bench(c: &mut Criterion) {
    let mut g = c.benchmark_group("averaging_100_rounds");
    g.sample_size(10);
    for n in [100, 400] {
        let cfg = config(n);
        for (label, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            let cfg = cfg.clone().with_exec(exec);
            g.bench_with_input(BenchmarkId::new(label, n), &cfg, |b, cfg| b.iter(|| run(cfg.clone()).unwrap()));
        }
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
