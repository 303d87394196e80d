use std::hint::black_box;

use coopguide_core::dataset::{
    backward_propagate, generate_trajectory, sample_terminal, stream_rng, TerminalSampleSpec,
};
use coopguide_core::engagement::{feature_vector, nondimensionalize};
use coopguide_core::mlp::MlpModel;
use coopguide_core::pmp::extended_rates_flat;
use coopguide_core::shooting::{residuals, ShootingUnknowns};
use coopguide_core::sim::{run_closed_loop, GuidancePolicy, SimConfig};
use coopguide_core::{CombinedState, EngagementConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn case_one(cfg: &EngagementConfig) -> CombinedState {
    CombinedState::new(vec![
        nondimensionalize(-1800.0, 2800.0, (-97f64).to_radians(), cfg),
        nondimensionalize(-2800.0, -2500.0, 69f64.to_radians(), cfg),
    ])
}

fn network(c: &mut Criterion) {
    let cfg = EngagementConfig::default();
    let model = MlpModel::init(&[cfg.feature_dim(), 20, 20, 20, 2], &mut stream_rng(0, 0)).unwrap();
    let x = feature_vector(&case_one(&cfg), cfg.feature_mode).unwrap();
    c.bench_function("forward_3x20", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
}

fn dynamics(c: &mut Criterion) {
    let cfg = EngagementConfig::default();
    let e = sample_terminal(&TerminalSampleSpec::default(), &cfg, &mut stream_rng(1, 0)).unwrap();
    let y = e.to_flat();
    let mut dy = vec![0.0; y.len()];
    c.bench_function("extended_rates", |b| {
        b.iter(|| extended_rates_flat(black_box(&y), cfg.kappa, &mut dy))
    });
    c.bench_function("backward_propagate_5s", |b| {
        b.iter(|| backward_propagate(black_box(&e), 5.0, cfg.kappa, 1e-10).unwrap())
    });
}

fn oracle(c: &mut Criterion) {
    let cfg = EngagementConfig::default();
    let spec = TerminalSampleSpec::default();
    let traj = generate_trajectory(&spec, &cfg, 0).0.unwrap();
    let s0 = CombinedState::new(traj.initial().states.clone());
    let z = ShootingUnknowns::from_trajectory(&traj);
    c.bench_function("shooting_residuals", |b| {
        b.iter(|| residuals(black_box(&z), &s0, &cfg).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let cfg = EngagementConfig::default();
    let s0 = case_one(&cfg);
    let policy = GuidancePolicy::pn(cfg);
    c.bench_function("closed_loop_pn_case1", |b| {
        b.iter(|| run_closed_loop(black_box(&s0), &policy, &SimConfig::default()).unwrap())
    });
}

criterion_group!(benches, network, dynamics, oracle, simulation);
criterion_main!(benches);
