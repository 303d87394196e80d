use std::f64::consts::PI;

use coopguide_core::dataset::*;
use coopguide_core::engagement::{
    feature_vector, rotate, wrap_angle, CombinedState, EngagementConfig, FeatureMode, PursuerState,
};
use coopguide_core::pmp::{self, Costate, ExtendedState};
use coopguide_core::GuidanceError;
use proptest::prelude::*;

fn cfg() -> EngagementConfig {
    EngagementConfig::default()
}

fn small_spec(seed: u64) -> TerminalSampleSpec {
    TerminalSampleSpec {
        duration_range: (0.5, 6.0),
        rng_seed: seed,
        ..Default::default()
    }
}

#[test]
fn solve_scale_linear_case() {
    let kappa = 0.01;
    assert!((solve_scale(kappa, 0.0, kappa).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn solve_scale_pure_quadratic() {
    assert!((solve_scale(0.0, 1.0, 0.01).unwrap() - 0.1).abs() < 1e-15);
}

#[test]
fn solve_scale_mixed_root_substitutes_back() {
    let s = solve_scale(1.0, 1.0, 0.01).unwrap();
    // Closed-form root of s² + s − 0.01 = 0.
    let expected = (-1.0 + (1.0f64 + 0.04).sqrt()) / 2.0;
    assert!((s - expected).abs() < 1e-15);
    assert!((s - 0.0099015).abs() < 1e-6);
    assert!((s + s * s - 0.01).abs() < 1e-12);
}

#[test]
fn solve_scale_rejects_no_positive_root() {
    assert!(matches!(
        solve_scale(-1.0, 0.0, 0.01),
        Err(GuidanceError::NoPositiveRoot { .. })
    ));
    assert!(matches!(
        solve_scale(0.0, 0.0, 0.01),
        Err(GuidanceError::NoPositiveRoot { .. })
    ));
    assert!(matches!(
        solve_scale(1.0, -1.0, 0.01),
        Err(GuidanceError::NoPositiveRoot { .. })
    ));
}

proptest! {
    #[test]
    fn solve_scale_is_positive_root(a in -10.0f64..10.0, b in 1e-6f64..10.0, kappa in 0.001f64..0.999) {
        let s = solve_scale(a, b, kappa).unwrap();
        prop_assert!(s > 0.0);
        prop_assert!((a * s + b * s * s - kappa).abs() <= 1e-12 * (1.0 + a.abs() * s + b * s * s));
    }

    #[test]
    fn sampled_terminal_lies_on_manifold(seed in any::<u64>()) {
        let c = cfg();
        let spec = TerminalSampleSpec::default();
        let mut rng = stream_rng(seed, 0);
        let e = sample_terminal(&spec, &c, &mut rng).unwrap();
        for s in &e.states {
            prop_assert_eq!((s.x, s.y), (0.0, 0.0));
        }
        prop_assert!((e.states[1].theta - e.states[0].theta - c.delta).abs() < 1e-14);
        prop_assert!(pmp::optimal_hamiltonian(&e, c.kappa).unwrap().abs() < 1e-12);
        prop_assert!(pmp::transversality_residual(&e).abs() < 1e-15);
    }
}

#[test]
fn three_pursuer_terminal_closes_transversality() {
    let c = EngagementConfig { n_pursuers: 3, ..cfg() };
    let mut rng = stream_rng(5, 0);
    for _ in 0..100 {
        let e = sample_terminal(&TerminalSampleSpec::default(), &c, &mut rng).unwrap();
        assert!(pmp::transversality_residual(&e).abs() < 1e-15);
        assert!((e.states[2].theta - e.states[1].theta - c.delta).abs() < 1e-15);
    }
}

#[test]
fn straight_rays_when_costates_align_with_headings() {
    let c = cfg();
    let theta = [0.3, 0.3 + c.delta];
    let states: Vec<_> = theta.iter().map(|&t| PursuerState::new(0.0, 0.0, t)).collect();
    let costates: Vec<_> = theta.iter().map(|&t| Costate::new(t.cos(), t.sin(), 0.0)).collect();
    let mut e = ExtendedState::new(states, costates).unwrap();
    scale_to_zero_hamiltonian(&mut e, c.kappa).unwrap();
    let traj = backward_propagate(&e, 3.0, c.kappa, 1e-12).unwrap();
    let first = traj.initial();
    for (s, &t) in first.states.iter().zip(&theta) {
        assert!((s.x + 3.0 * t.cos()).abs() < 1e-10);
        assert!((s.y + 3.0 * t.sin()).abs() < 1e-10);
        assert!((s.theta - t).abs() < 1e-12);
    }
}

#[test]
fn backward_then_forward_round_trip() {
    let c = cfg();
    let spec = TerminalSampleSpec {
        tol: 1e-12,
        ..small_spec(3)
    };
    for index in 0..20 {
        let (traj, _) = generate_trajectory(&spec, &c, index);
        let traj = traj.unwrap();
        assert!(traj.start_time().abs() < 1e-15);
        assert!(traj.max_abs_hamiltonian() < 1e-9);
        let end = pmp::propagate(traj.initial(), 0.0, traj.duration(), c.kappa, 1e-12).unwrap();
        for s in &end.states {
            assert!(s.x.hypot(s.y) < 1e-6, "index {index}: ({}, {})", s.x, s.y);
        }
        let gap = wrap_angle(end.states[1].theta - end.states[0].theta - c.delta);
        assert!(gap.abs() < 1e-6);
    }
}

#[test]
fn terminal_node_matches_input() {
    let c = cfg();
    let mut rng = stream_rng(11, 0);
    let e = sample_terminal(&TerminalSampleSpec::default(), &c, &mut rng).unwrap();
    let traj = backward_propagate(&e, 2.0, c.kappa, 1e-12).unwrap();
    assert_eq!(traj.terminal(), &e);
    assert!((traj.end_time() - 2.0).abs() < 1e-15);
}

#[test]
fn backward_propagate_rejects_nonpositive_horizon() {
    let c = cfg();
    let mut rng = stream_rng(1, 0);
    let e = sample_terminal(&TerminalSampleSpec::default(), &c, &mut rng).unwrap();
    assert!(backward_propagate(&e, 0.0, c.kappa, 1e-10).is_err());
}

#[test]
fn sample_inside_exclusion_zone_is_dropped() {
    let c = cfg();
    let min_range = 0.2;
    let node = ExtendedState::new(
        vec![PursuerState::new(-0.1, 0.0, 0.0), PursuerState::new(-3.0, 1.0, 0.5)],
        vec![Costate::new(1.0, 0.0, 0.1), Costate::new(0.5, 0.5, -0.1)],
    )
    .unwrap();
    assert!(sample_from_node(&node, &c, min_range, 1.0).is_none());
    let mut far = node.clone();
    far.states[0].x = -0.4;
    assert!(sample_from_node(&far, &c, min_range, 1.0).is_some());
}

#[test]
fn extracted_commands_equal_scaled_ptheta() {
    let c = cfg();
    let (traj, _) = generate_trajectory(&small_spec(9), &c, 0);
    let traj = traj.unwrap();
    let spacing = 0.05;
    let samples = extract_samples(&traj, &c, spacing, 0.0);
    assert!(!samples.is_empty());
    for s in &samples {
        let node = traj.sample_at(traj.end_time() - s.time_to_go);
        for (u, co) in s.commands.iter().zip(&node.costates) {
            assert!((*u - co.ptheta / (1.0 - c.kappa)).abs() < 1e-12);
        }
    }
}

#[test]
fn extracted_samples_respect_min_range() {
    let c = cfg();
    let (traj, _) = generate_trajectory(&small_spec(4), &c, 2);
    let samples = extract_samples(&traj.unwrap(), &c, 0.05, 0.2);
    for s in &samples {
        assert!(s.features[0] >= 0.2 && s.features[3] >= 0.2);
    }
}

#[test]
fn augmented_features_are_rotation_invariant() {
    let mut rng = stream_rng(21, 0);
    use rand::Rng;
    for _ in 0..200 {
        let c = CombinedState::new(
            (0..2)
                .map(|_| {
                    PursuerState::new(
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-PI..PI),
                    )
                })
                .collect(),
        );
        let phi = rng.gen_range(-PI..PI);
        let a = feature_vector(&c, FeatureMode::Augmented).unwrap();
        let b = feature_vector(&rotate(&c, phi), FeatureMode::Augmented).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let d = if (x - y).abs() > PI {
                (x - y).abs() - 2.0 * PI
            } else {
                x - y
            };
            assert!(d.abs() < 1e-10, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn dataset_generation_is_deterministic() {
    let c = cfg();
    let spec = small_spec(42);
    let a = generate_dataset(&spec, &c, 8).unwrap();
    let b = generate_dataset(&spec, &c, 8).unwrap();
    assert_eq!(a, b);
    let mut ba = Vec::new();
    let mut bb = Vec::new();
    a.write(&mut ba).unwrap();
    b.write(&mut bb).unwrap();
    assert_eq!(ba, bb);
}

#[test]
fn dataset_generation_rejects_zero_trajectories() {
    assert!(generate_dataset(&small_spec(0), &cfg(), 0).is_err());
}

#[test]
fn dataset_stats_have_positive_spread() {
    let d = generate_dataset(&small_spec(8), &cfg(), 10).unwrap();
    assert_eq!(d.n_traj, 10);
    assert!(d.feature_stats.std.iter().all(|&s| s > 0.0));
    assert!(d.command_stats.std.iter().all(|&s| s > 0.0));
}

#[test]
fn dataset_round_trip_is_exact() {
    let mut d = generate_dataset(&small_spec(1), &cfg(), 4).unwrap();
    d.provenance.insert("note".into(), "round trip".into());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.cgd");
    write_dataset(&d, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, d);
}

#[test]
fn truncated_dataset_is_a_format_error() {
    let d = generate_dataset(&small_spec(1), &cfg(), 2).unwrap();
    let mut bytes = Vec::new();
    d.write(&mut bytes).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(Dataset::read(bytes.as_slice()), Err(GuidanceError::Format(_))));
    assert!(matches!(Dataset::read(&bytes[..20]), Err(GuidanceError::Format(_))));
}

#[test]
fn count_mismatch_is_a_format_error() {
    let d = generate_dataset(&small_spec(1), &cfg(), 2).unwrap();
    let mut bytes = Vec::new();
    d.write(&mut bytes).unwrap();
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let count_line = format!("count={}", d.len());
    let pos = text.find(&count_line).unwrap();
    let mut patched = bytes[..pos].to_vec();
    patched.extend_from_slice(format!("count={}", d.len() + 1).as_bytes());
    patched.extend_from_slice(&bytes[pos + count_line.len()..]);
    assert!(matches!(
        Dataset::read(patched.as_slice()),
        Err(GuidanceError::Format(_))
    ));
}

#[test]
fn bad_magic_is_a_format_error() {
    assert!(matches!(
        Dataset::read(&b"XXXX\nn=2\n\n"[..]),
        Err(GuidanceError::Format(_))
    ));
}

#[test]
fn csv_export_has_one_row_per_sample() {
    let d = generate_dataset(&small_spec(2), &cfg(), 2).unwrap();
    let mut out = Vec::new();
    d.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "f0,f1,f2,f3,f4,f5,f6,u0,u1,time_to_go");
    assert_eq!(lines.count(), d.len());
}

#[test]
fn invalid_spec_is_rejected() {
    let spec = TerminalSampleSpec {
        duration_range: (2.0, 1.0),
        ..Default::default()
    };
    assert!(spec.validate().is_err());
    let spec = TerminalSampleSpec {
        duration_range: (0.0, 1.0),
        ..Default::default()
    };
    assert!(spec.validate().is_err());
}
