use std::path::Path;
use std::process::{Command, Output};

use coopguide_cli::{initial_state, parse_pursuer, CliError, RunConfig, CASE_1};
use coopguide_core::mlp::MlpModel;

fn coopguide(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopguide"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_dataset(dir: &Path) {
    let o = coopguide(dir, &["gen-dataset", "--n-traj", "20", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_text_round_trips() {
    let mut c = RunConfig::default();
    c.apply_text("# comment\nengagement.kappa = 0.02  # inline\n\nsampling.duration_s = 1,4\ntraining.hidden=8,8\n")
        .unwrap();
    assert_eq!(c.kappa, 0.02);
    assert_eq!(c.duration_s, (1.0, 4.0));
    assert_eq!(c.hidden, vec![8, 8]);
    let mut back = RunConfig::default();
    back.apply_text(&c.render()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn unknown_or_malformed_keys_are_usage_errors() {
    let mut c = RunConfig::default();
    assert!(matches!(c.set("engagement.kapa", "0.1"), Err(CliError::Usage(_))));
    assert!(matches!(c.set("engagement.kappa", "abc"), Err(CliError::Usage(_))));
    assert!(matches!(c.apply_text("no equals sign"), Err(CliError::Usage(_))));
    assert!(matches!(c.set("sampling.duration_s", "1"), Err(CliError::Usage(_))));
}

#[test]
fn resolved_config_validates_paths_and_ranges() {
    let c = RunConfig {
        model: "same".into(),
        dataset: "same".into(),
        ..Default::default()
    };
    assert!(matches!(c.validate(), Err(CliError::Usage(_))));
    let c = RunConfig {
        kappa: 1.5,
        ..Default::default()
    };
    assert!(c.validate().is_err());
    assert!(RunConfig::default().validate().is_ok());
}

#[test]
fn default_network_is_three_by_twenty() {
    assert_eq!(RunConfig::default().layer_dims(), vec![7, 20, 20, 20, 2]);
}

#[test]
fn pursuer_arguments_parse_in_km_and_degrees() {
    assert_eq!(parse_pursuer("-1.8,2.8,-97").unwrap(), (-1.8, 2.8, -97.0));
    assert!(parse_pursuer("1,2").is_err());
    assert!(parse_pursuer("1,x,2").is_err());
    let s = initial_state(&RunConfig::default(), &CASE_1).unwrap();
    assert!((s.pursuers[0].x + 1.8).abs() < 1e-15);
    assert!((s.pursuers[0].theta + 97f64.to_radians()).abs() < 1e-15);
    assert!(initial_state(&RunConfig::default(), &CASE_1[..1]).is_err());
}

#[test]
fn zero_trajectories_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&coopguide(dir.path(), &["gen-dataset", "--n-traj", "0"])), 2);
}

#[test]
fn unknown_policy_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&coopguide(dir.path(), &["simulate", "--case", "1", "--policy", "lqr"])),
        2
    );
}

#[test]
fn bad_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = coopguide(dir.path(), &["gen-dataset", "--set", "nope.key=1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.key"));
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = coopguide(dir.path(), &["train", "--dataset", "absent.cgd"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.cgd"));
}

#[test]
fn nan_initial_state_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = coopguide(dir.path(), &["solve", "--pursuer=nan,1,0", "--pursuer=1,1,0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_needs_cases() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&coopguide(dir.path(), &["eval", "--n-cases", "0"])), 2);
}

#[test]
fn dataset_header_records_settings_and_sidecar_reproduces_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = coopguide(
        dir.path(),
        &[
            "gen-dataset",
            "--n-traj",
            "10",
            "--kappa",
            "0.01",
            "--delta-deg",
            "10",
            "--seed",
            "4",
        ],
    );
    assert_eq!(code(&o), 0);
    let report = String::from_utf8(o.stdout).unwrap();
    assert!(report.contains("rejection rate"));
    let d = coopguide_core::dataset::read_dataset(dir.path().join("dataset.cgd")).unwrap();
    assert_eq!(d.config.kappa, 0.01);
    assert!((d.config.delta - 10f64.to_radians()).abs() < 1e-15);
    assert_eq!(d.seed, 4);
    assert_eq!(d.n_traj, 10);
    let sidecar = RunConfig::load(&dir.path().join("dataset.cgd.config")).unwrap();
    assert_eq!(sidecar.seed, 4);
    assert_eq!(sidecar.n_traj, 10);
}

#[test]
fn train_writes_model_history_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let run = |out: &str| {
        let o = coopguide(dir.path(), &["train", "--epochs", "4", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let a = run("a.cgm");
    let b = run("b.cgm");
    let mse = |s: &str| {
        s.lines()
            .find(|l| l.starts_with("best validation"))
            .unwrap()
            .to_string()
    };
    assert_eq!(mse(&a), mse(&b));
    let m = MlpModel::load(dir.path().join("a.cgm")).unwrap();
    assert_eq!(m.layer_dims, vec![7, 20, 20, 20, 2]);
    let history = std::fs::read_to_string(dir.path().join("a.cgm.history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_mse,val_mse"));
    assert_eq!(history.lines().count(), 5);
    assert_eq!(
        std::fs::read(dir.path().join("a.cgm")).unwrap(),
        std::fs::read(dir.path().join("b.cgm")).unwrap()
    );
}

#[test]
fn pure_pn_misses_the_angle_on_case_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = coopguide(
        dir.path(),
        &["simulate", "--case", "2", "--policy", "pn", "--out-dir", "pn"],
    );
    assert_eq!(code(&o), 0);
    let summary = std::fs::read_to_string(dir.path().join("pn/sim_summary.csv")).unwrap();
    let engagement = summary.lines().find(|l| l.starts_with("engagement")).unwrap();
    let err: f64 = engagement.split(',').nth(5).unwrap().parse().unwrap();
    assert!(err > 5.0, "{engagement}");
    let steps = std::fs::read_to_string(dir.path().join("pn/sim_steps.csv")).unwrap();
    assert!(steps.starts_with("t,i,x,y,theta,u,r,mode"));
    assert!(dir.path().join("pn/run.config").exists());
}

#[test]
fn fnn_simulation_requires_a_model() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&coopguide(
            dir.path(),
            &["simulate", "--case", "1", "--model", "none.cgm"]
        )),
        1
    );
}

#[test]
fn solve_case_one_converges() {
    let dir = tempfile::tempdir().unwrap();
    let o = coopguide(dir.path(), &["solve", "--case", "1", "--out-dir", "sol"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("sol/solve_summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next().unwrap(), "J,effort,tf,residual,converged");
    assert!(lines.next().unwrap().ends_with(",true"));
    let traj = std::fs::read_to_string(dir.path().join("sol/solve_traj.csv")).unwrap();
    assert!(traj.starts_with("t,i,x,y,theta,px,py,ptheta,u,H"));
}

#[test]
fn export_traj_writes_extremal_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = coopguide(dir.path(), &["export-traj", "--index", "3", "--out", "t3.csv"]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(dir.path().join("t3.csv")).unwrap();
    assert!(text.starts_with("t,i,x,y,theta,px,py,ptheta,u,H"));
    let at_target = text
        .lines()
        .skip(1)
        .map(|row| row.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .filter(|f| f[2] == 0.0 && f[3] == 0.0)
        .count();
    assert_eq!(at_target, 2);
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.cfg"),
        "seed = 11\nsampling.n_traj = 5\npaths.dataset = d.cgd\n",
    )
    .unwrap();
    let o = coopguide(dir.path(), &["gen-dataset", "--config", "run.cfg", "--n-traj", "6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d = coopguide_core::dataset::read_dataset(dir.path().join("d.cgd")).unwrap();
    assert_eq!((d.seed, d.n_traj), (11, 6));
}
