//! Command-line parsing and dispatch shared by the binary and the test suites.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coopguide_core::sim::PolicyKind;

use crate::*;

#[derive(Parser)]
#[command(
    name = "coopguide",
    version,
    about = "Optimal cooperative guidance with relative intercept angles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config entry (repeatable), e.g. `--set training.max_epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Initial {
    /// Reference engagement 1 or 2.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2), conflicts_with = "pursuer")]
    case: Option<u8>,
    /// Pursuer initial state `x_km,y_km,heading_deg`, once per pursuer.
    #[arg(long, value_parser = parse_pursuer, allow_hyphen_values = true)]
    pursuer: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Fnn,
    Pn,
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training dataset by backward propagation of extremals.
    GenDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n_traj: Option<u64>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        delta_deg: Option<f64>,
        /// Dataset file to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the guidance network on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Model file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        epochs: Option<u64>,
    },
    /// Solve the intercept problem with the shooting oracle.
    Solve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        initial: Initial,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a closed-loop engagement.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        initial: Initial,
        #[arg(long, value_enum, default_value = "fnn")]
        policy: Policy,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare the trained network with the oracle over sampled engagements.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n_cases: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write one generated extremal as trajectory CSV.
    ExportTraj {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &common.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn initial(cfg: &RunConfig, init: &Initial) -> CliResult<coopguide_core::CombinedState> {
    match (init.case, init.pursuer.is_empty()) {
        (Some(1), _) => initial_state(cfg, &CASE_1),
        (Some(_), _) => initial_state(cfg, &CASE_2),
        (None, false) => initial_state(cfg, &init.pursuer),
        (None, true) => Err(CliError::Usage("give --case or one --pursuer per pursuer".into())),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenDataset {
            common,
            n_traj,
            kappa,
            delta_deg,
            out,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(n) = n_traj {
                cfg.n_traj = n as usize;
            }
            if let Some(k) = kappa {
                cfg.kappa = k;
            }
            if let Some(d) = delta_deg {
                cfg.delta_deg = d;
            }
            if let Some(o) = out {
                cfg.dataset = o;
            }
            print!("{}", cmd_gen_dataset(&cfg)?.text);
        }
        Command::Train {
            common,
            dataset,
            out,
            epochs,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(d) = dataset {
                cfg.dataset = d;
            }
            if let Some(o) = out {
                cfg.model = o;
            }
            if let Some(e) = epochs {
                cfg.max_epochs = e as usize;
            }
            let r = cmd_train(&cfg)?;
            println!("model: {}", cfg.model.display());
            println!("epochs run: {}", r.epochs);
            println!("best validation mse (normalized): {:.6e}", r.best_val_mse);
        }
        Command::Solve {
            common,
            initial: init,
            out_dir,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(o) = out_dir {
                cfg.output = o;
            }
            let s0 = initial(&cfg, &init)?;
            let sol = cmd_solve(&cfg, &s0)?;
            print!("{}", solve_report(&sol));
            if !sol.converged {
                return Err(CliError::Runtime("oracle did not converge".into()));
            }
        }
        Command::Simulate {
            common,
            initial: init,
            policy,
            model,
            out_dir,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = model {
                cfg.model = m;
            }
            if let Some(o) = out_dir {
                cfg.output = o;
            }
            let s0 = initial(&cfg, &init)?;
            let kind = match policy {
                Policy::Fnn => PolicyKind::Fnn,
                Policy::Pn => PolicyKind::Pn,
                Policy::Oracle => PolicyKind::OracleOpenLoop,
            };
            print!("{}", simulate_report(&cmd_simulate(&cfg, &s0, kind)?));
        }
        Command::Eval {
            common,
            model,
            n_cases,
            out_dir,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = model {
                cfg.model = m;
            }
            if let Some(n) = n_cases {
                cfg.n_cases = n as usize;
            }
            if let Some(o) = out_dir {
                cfg.output = o;
            }
            print!("{}", cmd_eval(&cfg)?.text);
        }
        Command::ExportTraj { common, index, out } => {
            let cfg = resolve(&common)?;
            cmd_export_traj(&cfg, index, &out)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to stdout and stderr as for the binary.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
