//! End-to-end dispatch benchmarks on the bundled feeders: lowering to the
//! cone program plus the interior-point solve plus solution recovery, under
//! the risk settings used by the shipped experiments (eta 0.05, xi 0.005).

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dropf_core::io::{bundled, load_case_str, synth_samples};
use dropf_core::{build_cc, build_deterministic, build_drcc, AmbiguityModel, RiskConfig, SolverConfig};

fn feeder_solves(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    for name in ["15bus", "ieee37", "ieee123"] {
        let net = load_case_str(bundled::by_name(name).unwrap()).unwrap();
        let history = synth_samples(&net, 0.2, 100, 7);
        let fit = AmbiguityModel::fit(&history, 0.005).unwrap();

        let mut group = c.benchmark_group(name);
        group.bench_function("det", |b| {
            b.iter_batched(
                || build_deterministic(&net, false),
                |prob| prob.solve(&net, &cfg).unwrap(),
                BatchSize::SmallInput,
            )
        });
        group.bench_function("cc", |b| {
            let risk = RiskConfig::chance_constrained(0.05);
            b.iter_batched(
                || build_cc(&net, &fit.sigma_hat2_p, &fit.sigma_hat2_q, &risk),
                |prob| prob.solve(&net, &cfg).unwrap(),
                BatchSize::SmallInput,
            )
        });
        group.bench_function("drcc", |b| {
            let risk = RiskConfig::dist_robust(0.05, 0.005);
            b.iter_batched(
                || build_drcc(&net, &fit, &risk),
                |prob| prob.solve(&net, &cfg).unwrap(),
                BatchSize::SmallInput,
            )
        });
        group.finish();
    }
}

criterion_group!(benches, feeder_solves);
criterion_main!(benches);
