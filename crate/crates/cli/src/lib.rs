//! Command implementations behind the `coopguide` binary.

pub mod app;
pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use coopguide_core::dataset::{generate_dataset, generate_trajectory, read_dataset, stream_rng, write_dataset};
use coopguide_core::engagement::{feature_vector, nondimensionalize};
use coopguide_core::mlp::{train, write_history_csv, MlpModel};
use coopguide_core::shooting::{solve_tpbvp, OptimalSolution, ShootingUnknowns};
use coopguide_core::sim::{
    metrics_report, run_closed_loop, write_step_csv, write_summary_csv, GuidancePolicy, PolicyKind, SimResult,
};
use coopguide_core::{CombinedState, GuidanceError};
use rayon::prelude::*;

pub use config::RunConfig;

/// Initial conditions of the two reference engagements: `(x km, y km, heading deg)`.
pub const CASE_1: [(f64, f64, f64); 2] = [(-1.8, 2.8, -97.0), (-2.8, -2.5, 69.0)];
pub const CASE_2: [(f64, f64, f64); 2] = [(-3.1, -2.4, 178.0), (-0.25, -5.0, 100.0)];

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 2.
    Usage(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<GuidanceError> for CliError {
    fn from(e: GuidanceError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_context(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_context(dir))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(io_context(path))?))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

/// Writes the resolved configuration next to an output file.
fn write_sidecar(path: &Path, cfg: &RunConfig) -> CliResult<()> {
    let p = sidecar(path);
    let mut w = create(&p)?;
    w.write_all(cfg.render().as_bytes()).map_err(io_context(&p))?;
    w.flush().map_err(io_context(&p))?;
    Ok(())
}

/// Configuration entries embedded in dataset and model headers (paths excluded
/// so that identical runs in different directories give identical bytes).
fn embedded_config(cfg: &RunConfig) -> impl Iterator<Item = (String, String)> {
    cfg.entries()
        .into_iter()
        .filter(|(k, _)| !k.starts_with("paths."))
        .map(|(k, v)| (format!("cfg.{k}"), v))
}

/// Converts `(x km, y km, heading deg)` triples to a nondimensional state.
pub fn initial_state(cfg: &RunConfig, pursuers: &[(f64, f64, f64)]) -> CliResult<CombinedState> {
    if pursuers.len() != cfg.n_pursuers {
        return Err(CliError::Usage(format!(
            "expected {} pursuers, got {}",
            cfg.n_pursuers,
            pursuers.len()
        )));
    }
    if pursuers
        .iter()
        .any(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite()))
    {
        return Err(CliError::Usage("initial states must be finite".into()));
    }
    let e = cfg.engagement();
    let s = CombinedState::new(
        pursuers
            .iter()
            .map(|&(x, y, h)| nondimensionalize(x * 1000.0, y * 1000.0, h.to_radians(), &e))
            .collect(),
    );
    s.validate(&e).map_err(|err| CliError::Usage(err.to_string()))?;
    Ok(s)
}

/// Parses `x_km,y_km,heading_deg`.
pub fn parse_pursuer(s: &str) -> Result<(f64, f64, f64), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number `{p}`")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [x, y, h] => Ok((*x, *y, *h)),
        _ => Err(format!("expected x_km,y_km,heading_deg, got `{s}`")),
    }
}

pub struct GenReport {
    pub n_samples: usize,
    pub text: String,
}

pub fn cmd_gen_dataset(cfg: &RunConfig) -> CliResult<GenReport> {
    cfg.validate()?;
    if cfg.n_traj == 0 {
        return Err(CliError::Usage("n_traj must be at least 1".into()));
    }
    let mut d = generate_dataset(&cfg.sampling(), &cfg.engagement(), cfg.n_traj)?;
    d.provenance.extend(embedded_config(cfg));
    write_dataset(&d, &cfg.dataset)?;
    write_sidecar(&cfg.dataset, cfg)?;

    let mut text = String::new();
    let _ = writeln!(text, "dataset: {}", cfg.dataset.display());
    let _ = writeln!(
        text,
        "trajectories: {} kept, {} rejected (rejection rate {:.3})",
        d.n_traj,
        d.rejected,
        d.rejection_rate()
    );
    let _ = writeln!(text, "samples: {}", d.len());
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    let _ = writeln!(text, "feature mean: {}", fmt(&d.feature_stats.mean));
    let _ = writeln!(text, "feature std:  {}", fmt(&d.feature_stats.std));
    let _ = writeln!(text, "command std:  {}", fmt(&d.command_stats.std));
    Ok(GenReport {
        n_samples: d.len(),
        text,
    })
}

pub fn history_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

pub struct TrainReport {
    pub best_val_mse: f64,
    pub epochs: usize,
    pub model: MlpModel,
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainReport> {
    cfg.validate()?;
    let data = read_dataset(&cfg.dataset).map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.dataset.display())))?;
    let dims = cfg.layer_dims();
    if data.dim_in() != dims[0] || data.dim_out() != *dims.last().unwrap() {
        return Err(CliError::Runtime(format!(
            "dataset dimensions {}→{} do not match the configured network {:?}",
            data.dim_in(),
            data.dim_out(),
            dims
        )));
    }
    let mut init = MlpModel::init(&dims, &mut stream_rng(cfg.seed, 1))?;
    init.metadata.extend(embedded_config(cfg));
    let (model, history) = train(&init, &data, &cfg.training())?;
    model.save(&cfg.model)?;
    write_sidecar(&cfg.model, cfg)?;
    let hp = history_path(&cfg.model);
    let mut w = create(&hp)?;
    write_history_csv(&history, &mut w).map_err(io_context(&hp))?;
    w.flush().map_err(io_context(&hp))?;
    Ok(TrainReport {
        best_val_mse: history.last().map_or(f64::NAN, |h| h.best_val_mse),
        epochs: history.len(),
        model,
    })
}

fn solution_files(dir: &Path, sol: &OptimalSolution, cfg: &RunConfig) -> CliResult<()> {
    let tp = dir.join("solve_traj.csv");
    let mut w = create(&tp)?;
    sol.trajectory.write_csv(&mut w).map_err(io_context(&tp))?;
    w.flush().map_err(io_context(&tp))?;
    let sp = dir.join("solve_summary.csv");
    let mut w = create(&sp)?;
    writeln!(w, "J,effort,tf,residual,converged").map_err(io_context(&sp))?;
    writeln!(w, "{}", sol.summary_line()).map_err(io_context(&sp))?;
    w.flush().map_err(io_context(&sp))?;
    write_sidecar(&dir.join("run"), cfg)
}

pub fn cmd_solve(cfg: &RunConfig, s0: &CombinedState) -> CliResult<OptimalSolution> {
    cfg.validate()?;
    let sol = solve_tpbvp(s0, &cfg.engagement(), &cfg.shooting(), &[])?;
    solution_files(&cfg.output, &sol, cfg)?;
    Ok(sol)
}

pub fn load_model(cfg: &RunConfig) -> CliResult<MlpModel> {
    MlpModel::load(&cfg.model).map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.model.display())))
}

pub fn cmd_simulate(cfg: &RunConfig, s0: &CombinedState, policy: PolicyKind) -> CliResult<SimResult> {
    cfg.validate()?;
    let e = cfg.engagement();
    let policy = match policy {
        PolicyKind::Pn => GuidancePolicy::pn(e),
        PolicyKind::Fnn => GuidancePolicy::fnn(load_model(cfg)?, e)?,
        PolicyKind::OracleOpenLoop => {
            let sol = solve_tpbvp(s0, &e, &cfg.shooting(), &[])?;
            if !sol.converged {
                return Err(CliError::Runtime(format!(
                    "oracle did not converge (residual {:e})",
                    sol.residual_norm
                )));
            }
            GuidancePolicy::oracle_openloop(sol.trajectory, e)?
        }
    };
    let r = run_closed_loop(s0, &policy, &cfg.sim())?;
    let dir = &cfg.output;
    let p = dir.join("sim_steps.csv");
    let mut w = create(&p)?;
    write_step_csv(&r, &mut w).map_err(io_context(&p))?;
    w.flush().map_err(io_context(&p))?;
    let p = dir.join("sim_summary.csv");
    let mut w = create(&p)?;
    write_summary_csv(&r, &mut w).map_err(io_context(&p))?;
    w.flush().map_err(io_context(&p))?;
    write_sidecar(&dir.join("run"), cfg)?;
    Ok(r)
}

/// One evaluated engagement.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub index: usize,
    pub max_miss_m: f64,
    pub max_angle_err_deg: f64,
    pub fnn_effort: f64,
    pub oracle_effort: f64,
    pub oracle_converged: bool,
    /// FNN effort beats the oracle by more than 1%, so the oracle missed the optimum.
    pub oracle_suspect: bool,
}

impl EvalCase {
    pub fn effort_ratio(&self) -> f64 {
        self.fnn_effort / self.oracle_effort
    }
}

/// Latency percentiles in milliseconds.
#[derive(Debug, Clone, Copy)]
pub struct Latency {
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

/// Times single forward passes over `inputs`, cycling until `calls` are made.
pub fn forward_latency(model: &MlpModel, inputs: &[Vec<f64>], calls: usize) -> CliResult<Latency> {
    if inputs.is_empty() || calls == 0 {
        return Err(CliError::Usage("latency probe needs inputs".into()));
    }
    let mut ms = Vec::with_capacity(calls);
    let mut sink = 0.0;
    for k in 0..calls {
        let x = &inputs[k % inputs.len()];
        let t = Instant::now();
        let u = model.forward(x)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
        sink += u[0];
    }
    std::hint::black_box(sink);
    ms.sort_by(f64::total_cmp);
    let q = |f: f64| ms[((ms.len() - 1) as f64 * f).round() as usize];
    Ok(Latency {
        p50_ms: q(0.5),
        p99_ms: q(0.99),
        max_ms: ms[ms.len() - 1],
    })
}

fn percentile(v: &[f64], f: f64) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    s[((s.len() - 1) as f64 * f).round() as usize]
}

pub struct EvalReport {
    pub cases: Vec<EvalCase>,
    pub latency: Latency,
    pub text: String,
}

/// Closed-loop FNN against the oracle on initial states drawn from the
/// training envelope.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<EvalReport> {
    cfg.validate()?;
    if cfg.n_cases == 0 {
        return Err(CliError::Usage("n_cases must be at least 1".into()));
    }
    let model = load_model(cfg)?;
    let e = cfg.engagement();
    // A separate stream family keeps eval draws apart from training draws.
    let spec = coopguide_core::dataset::TerminalSampleSpec {
        rng_seed: cfg.seed ^ 0x6576_616c,
        ..cfg.sampling()
    };
    let policy = GuidancePolicy::fnn(model.clone(), e.clone())?;
    let sim = cfg.sim();
    let opts = cfg.shooting();

    let results: Vec<CliResult<(EvalCase, Vec<f64>)>> = (0..cfg.n_cases)
        .into_par_iter()
        .map(|index| {
            let traj = generate_trajectory(&spec, &e, index as u64)
                .0
                .ok_or_else(|| CliError::Runtime(format!("case {index}: no admissible trajectory")))?;
            let s0 = CombinedState::new(traj.initial().states.clone());
            let r = run_closed_loop(&s0, &policy, &sim)?;
            let sol = solve_tpbvp(&s0, &e, &opts, &[ShootingUnknowns::from_trajectory(&traj)])?;
            let fnn_effort = r.control_effort;
            let case = EvalCase {
                index,
                max_miss_m: r.miss_distance.iter().copied().fold(0.0, f64::max),
                max_angle_err_deg: r.relative_angle_error.iter().copied().fold(0.0, f64::max).to_degrees(),
                fnn_effort,
                oracle_effort: sol.control_effort,
                oracle_converged: sol.converged,
                oracle_suspect: fnn_effort < 0.99 * sol.control_effort,
            };
            Ok((case, feature_vector(&s0, e.feature_mode)?))
        })
        .collect();
    let mut cases = Vec::with_capacity(results.len());
    let mut inputs = Vec::with_capacity(results.len());
    for r in results {
        let (c, x) = r?;
        cases.push(c);
        inputs.push(x);
    }

    let dir = &cfg.output;
    let p = dir.join("eval_cases.csv");
    let mut w = create(&p)?;
    let wr = |w: &mut BufWriter<fs::File>| -> io::Result<()> {
        writeln!(
            w,
            "case,max_miss_m,max_angle_err_deg,fnn_effort_m2s3,oracle_effort_m2s3,effort_ratio,oracle_converged,oracle_suspect"
        )?;
        for c in &cases {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                c.index,
                c.max_miss_m,
                c.max_angle_err_deg,
                c.fnn_effort,
                c.oracle_effort,
                c.effort_ratio(),
                c.oracle_converged,
                c.oracle_suspect
            )?;
        }
        w.flush()
    };
    wr(&mut w).map_err(io_context(&p))?;
    write_sidecar(&dir.join("run"), cfg)?;

    let latency = forward_latency(&model, &inputs, 20_000)?;
    let miss: Vec<f64> = cases.iter().map(|c| c.max_miss_m).collect();
    let ang: Vec<f64> = cases.iter().map(|c| c.max_angle_err_deg).collect();
    let ratio: Vec<f64> = cases
        .iter()
        .filter(|c| c.oracle_converged)
        .map(EvalCase::effort_ratio)
        .collect();
    let mut text = String::new();
    let _ = writeln!(text, "cases: {}", cases.len());
    for (name, v) in [
        ("miss distance [m]", &miss),
        ("angle error [deg]", &ang),
        ("effort ratio fnn/oracle", &ratio),
    ] {
        let _ = writeln!(
            text,
            "{name}: p50 {:.4} p90 {:.4} max {:.4}",
            percentile(v, 0.5),
            percentile(v, 0.9),
            percentile(v, 1.0)
        );
    }
    let suspect: Vec<String> = cases
        .iter()
        .filter(|c| c.oracle_suspect)
        .map(|c| c.index.to_string())
        .collect();
    if !suspect.is_empty() {
        let _ = writeln!(
            text,
            "oracle non-convergence suspected (fnn beats oracle by >1%): cases {}",
            suspect.join(",")
        );
    }
    let _ = writeln!(
        text,
        "forward latency [ms]: p50 {:.5} p99 {:.5} max {:.5}",
        latency.p50_ms, latency.p99_ms, latency.max_ms
    );
    let p = dir.join("eval_latency.txt");
    let mut w = create(&p)?;
    w.write_all(text.as_bytes()).map_err(io_context(&p))?;
    w.flush().map_err(io_context(&p))?;
    Ok(EvalReport { cases, latency, text })
}

/// Writes one backward-generated extremal as trajectory CSV.
pub fn cmd_export_traj(cfg: &RunConfig, index: u64, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    let traj = generate_trajectory(&cfg.sampling(), &cfg.engagement(), index)
        .0
        .ok_or_else(|| CliError::Runtime(format!("trajectory {index}: every draw was rejected")))?;
    let mut w = create(out)?;
    traj.write_csv(&mut w).map_err(io_context(out))?;
    w.flush().map_err(io_context(out))?;
    write_sidecar(out, cfg)
}

/// Summary text for a solved problem.
pub fn solve_report(sol: &OptimalSolution) -> String {
    format!(
        "J {:.6}, t_f {:.4} s, effort {:.6e} m^2/s^3, residual {:.2e}, converged {} (start {}, {} iterations)\n",
        sol.cost_j,
        sol.tf(),
        sol.control_effort,
        sol.residual_norm,
        sol.converged,
        sol.start_index,
        sol.iterations
    )
}

pub fn simulate_report(r: &SimResult) -> String {
    metrics_report(r)
}
