//! Run configuration: line-oriented `section.key = value` text.
//!
//! Values are held in CLI units (degrees, metres, seconds) and converted to
//! the library's nondimensional configs on demand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use coopguide_core::dataset::TerminalSampleSpec;
use coopguide_core::mlp::TrainConfig;
use coopguide_core::shooting::ShootingOptions;
use coopguide_core::sim::SimConfig;
use coopguide_core::{EngagementConfig, FeatureMode};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    pub n_pursuers: usize,
    pub kappa: f64,
    pub delta_deg: f64,
    pub speed_mps: f64,
    pub switch_radius_m: f64,
    pub pn_gain: f64,
    pub feature_mode: FeatureMode,

    pub n_traj: usize,
    pub theta1_deg: (f64, f64),
    pub ptheta: (f64, f64),
    pub pxy_magnitude: (f64, f64),
    pub duration_s: (f64, f64),
    pub spacing_s: f64,
    pub min_range_m: f64,
    pub max_turn_rate: f64,
    pub max_range_m: f64,
    pub max_heading_change_deg: f64,
    pub max_attempts: usize,
    pub focal_screen: bool,
    pub benign_keep: f64,
    pub max_costate: f64,
    pub ode_tol: f64,

    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub lr_decay: f64,
    pub decay_patience: usize,

    pub dt_s: f64,
    pub time_cap_s: f64,
    pub command_limit: f64,

    pub multistart: usize,
    pub fallback_starts: usize,
    pub max_iterations: usize,
    pub fd_step: f64,
    pub shooting_tol: f64,

    pub n_cases: usize,

    pub dataset: PathBuf,
    pub model: PathBuf,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = EngagementConfig::default();
        let s = TerminalSampleSpec::default();
        let t = TrainConfig::default();
        let sim = SimConfig::default();
        let sh = ShootingOptions::default();
        Self {
            seed: 0,
            n_pursuers: e.n_pursuers,
            kappa: e.kappa,
            delta_deg: 10.0,
            speed_mps: e.speed,
            switch_radius_m: e.switch_radius,
            pn_gain: e.pn_gain,
            feature_mode: e.feature_mode,
            n_traj: 20_000,
            theta1_deg: (-180.0, 180.0),
            ptheta: s.ptheta_range,
            pxy_magnitude: s.pxy_magnitude_range,
            duration_s: s.duration_range,
            spacing_s: s.spacing,
            min_range_m: s.min_range * e.speed,
            max_turn_rate: s.max_command,
            max_range_m: s.max_range * e.speed,
            max_heading_change_deg: 200.0,
            max_attempts: s.max_attempts,
            focal_screen: s.focal_screen,
            benign_keep: s.benign_keep,
            max_costate: s.max_costate,
            ode_tol: s.tol,
            hidden: vec![20, 20, 20],
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            validation_fraction: t.validation_fraction,
            patience: t.patience,
            lr_decay: t.lr_decay,
            decay_patience: t.decay_patience,
            dt_s: sim.dt,
            time_cap_s: sim.time_cap,
            command_limit: sim.command_limit,
            multistart: sh.multistart,
            fallback_starts: sh.fallback_starts,
            max_iterations: sh.max_iterations,
            fd_step: sh.fd_step,
            shooting_tol: sh.tol,
            n_cases: 20,
            dataset: "dataset.cgd".into(),
            model: "model.cgm".into(),
            output: "out".into(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("cannot parse `{v}` for {key}")))
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok((parse(key, a)?, parse(key, b)?)),
        _ => Err(CliError::Usage(format!("{key} expects `lo,hi`, got `{v}`"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, CliError> {
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

fn pair(p: (f64, f64)) -> String {
    format!("{},{}", p.0, p.1)
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let v = v.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "engagement.n_pursuers" => self.n_pursuers = parse(key, v)?,
            "engagement.kappa" => self.kappa = parse(key, v)?,
            "engagement.delta_deg" => self.delta_deg = parse(key, v)?,
            "engagement.speed_mps" => self.speed_mps = parse(key, v)?,
            "engagement.switch_radius_m" => self.switch_radius_m = parse(key, v)?,
            "engagement.pn_gain" => self.pn_gain = parse(key, v)?,
            "engagement.feature_mode" => self.feature_mode = parse(key, v)?,
            "sampling.n_traj" => self.n_traj = parse(key, v)?,
            "sampling.theta1_deg" => self.theta1_deg = parse_pair(key, v)?,
            "sampling.ptheta" => self.ptheta = parse_pair(key, v)?,
            "sampling.pxy_magnitude" => self.pxy_magnitude = parse_pair(key, v)?,
            "sampling.duration_s" => self.duration_s = parse_pair(key, v)?,
            "sampling.spacing_s" => self.spacing_s = parse(key, v)?,
            "sampling.min_range_m" => self.min_range_m = parse(key, v)?,
            "sampling.max_turn_rate" => self.max_turn_rate = parse(key, v)?,
            "sampling.max_range_m" => self.max_range_m = parse(key, v)?,
            "sampling.max_heading_change_deg" => self.max_heading_change_deg = parse(key, v)?,
            "sampling.max_attempts" => self.max_attempts = parse(key, v)?,
            "sampling.focal_screen" => self.focal_screen = parse(key, v)?,
            "sampling.benign_keep" => self.benign_keep = parse(key, v)?,
            "sampling.max_costate" => self.max_costate = parse(key, v)?,
            "sampling.ode_tol" => self.ode_tol = parse(key, v)?,
            "training.hidden" => self.hidden = parse_list(key, v)?,
            "training.learning_rate" => self.learning_rate = parse(key, v)?,
            "training.batch_size" => self.batch_size = parse(key, v)?,
            "training.max_epochs" => self.max_epochs = parse(key, v)?,
            "training.validation_fraction" => self.validation_fraction = parse(key, v)?,
            "training.patience" => self.patience = parse(key, v)?,
            "training.lr_decay" => self.lr_decay = parse(key, v)?,
            "training.decay_patience" => self.decay_patience = parse(key, v)?,
            "sim.dt_s" => self.dt_s = parse(key, v)?,
            "sim.time_cap_s" => self.time_cap_s = parse(key, v)?,
            "sim.command_limit" => self.command_limit = parse(key, v)?,
            "shooting.multistart" => self.multistart = parse(key, v)?,
            "shooting.fallback_starts" => self.fallback_starts = parse(key, v)?,
            "shooting.max_iterations" => self.max_iterations = parse(key, v)?,
            "shooting.fd_step" => self.fd_step = parse(key, v)?,
            "shooting.tol" => self.shooting_tol = parse(key, v)?,
            "eval.n_cases" => self.n_cases = parse(key, v)?,
            "paths.dataset" => self.dataset = v.into(),
            "paths.model" => self.model = v.into(),
            "paths.output" => self.output = v.into(),
            other => return Err(CliError::Usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let hidden = self.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("seed", self.seed.to_string()),
            ("engagement.n_pursuers", self.n_pursuers.to_string()),
            ("engagement.kappa", self.kappa.to_string()),
            ("engagement.delta_deg", self.delta_deg.to_string()),
            ("engagement.speed_mps", self.speed_mps.to_string()),
            ("engagement.switch_radius_m", self.switch_radius_m.to_string()),
            ("engagement.pn_gain", self.pn_gain.to_string()),
            ("engagement.feature_mode", self.feature_mode.to_string()),
            ("sampling.n_traj", self.n_traj.to_string()),
            ("sampling.theta1_deg", pair(self.theta1_deg)),
            ("sampling.ptheta", pair(self.ptheta)),
            ("sampling.pxy_magnitude", pair(self.pxy_magnitude)),
            ("sampling.duration_s", pair(self.duration_s)),
            ("sampling.spacing_s", self.spacing_s.to_string()),
            ("sampling.min_range_m", self.min_range_m.to_string()),
            ("sampling.max_turn_rate", self.max_turn_rate.to_string()),
            ("sampling.max_range_m", self.max_range_m.to_string()),
            (
                "sampling.max_heading_change_deg",
                self.max_heading_change_deg.to_string(),
            ),
            ("sampling.max_attempts", self.max_attempts.to_string()),
            ("sampling.focal_screen", self.focal_screen.to_string()),
            ("sampling.benign_keep", self.benign_keep.to_string()),
            ("sampling.max_costate", self.max_costate.to_string()),
            ("sampling.ode_tol", self.ode_tol.to_string()),
            ("training.hidden", hidden),
            ("training.learning_rate", self.learning_rate.to_string()),
            ("training.batch_size", self.batch_size.to_string()),
            ("training.max_epochs", self.max_epochs.to_string()),
            ("training.validation_fraction", self.validation_fraction.to_string()),
            ("training.patience", self.patience.to_string()),
            ("training.lr_decay", self.lr_decay.to_string()),
            ("training.decay_patience", self.decay_patience.to_string()),
            ("sim.dt_s", self.dt_s.to_string()),
            ("sim.time_cap_s", self.time_cap_s.to_string()),
            ("sim.command_limit", self.command_limit.to_string()),
            ("shooting.multistart", self.multistart.to_string()),
            ("shooting.fallback_starts", self.fallback_starts.to_string()),
            ("shooting.max_iterations", self.max_iterations.to_string()),
            ("shooting.fd_step", self.fd_step.to_string()),
            ("shooting.tol", self.shooting_tol.to_string()),
            ("eval.n_cases", self.n_cases.to_string()),
            ("paths.dataset", self.dataset.display().to_string()),
            ("paths.model", self.model.display().to_string()),
            ("paths.output", self.output.display().to_string()),
        ]
    }

    /// The resolved configuration as config-file text.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn engagement(&self) -> EngagementConfig {
        EngagementConfig {
            n_pursuers: self.n_pursuers,
            kappa: self.kappa,
            delta: self.delta_deg.to_radians(),
            speed: self.speed_mps,
            switch_radius: self.switch_radius_m,
            pn_gain: self.pn_gain,
            feature_mode: self.feature_mode,
        }
    }

    pub fn sampling(&self) -> TerminalSampleSpec {
        let v = self.speed_mps;
        TerminalSampleSpec {
            theta1_range: (self.theta1_deg.0.to_radians(), self.theta1_deg.1.to_radians()),
            ptheta_range: self.ptheta,
            pxy_magnitude_range: self.pxy_magnitude,
            duration_range: self.duration_s,
            rng_seed: self.seed,
            spacing: self.spacing_s,
            min_range: self.min_range_m / v,
            max_command: self.max_turn_rate,
            max_range: self.max_range_m / v,
            max_heading_change: self.max_heading_change_deg.to_radians(),
            max_attempts: self.max_attempts,
            focal_screen: self.focal_screen,
            benign_keep: self.benign_keep,
            max_costate: self.max_costate,
            tol: self.ode_tol,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            validation_fraction: self.validation_fraction,
            patience: self.patience,
            lr_decay: self.lr_decay,
            decay_patience: self.decay_patience,
            rng_seed: self.seed,
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            dt: self.dt_s,
            time_cap: self.time_cap_s,
            command_limit: self.command_limit,
        }
    }

    pub fn shooting(&self) -> ShootingOptions {
        ShootingOptions {
            multistart: self.multistart,
            fallback_starts: self.fallback_starts,
            max_iterations: self.max_iterations,
            fd_step: self.fd_step,
            tol: self.shooting_tol,
            seed: self.seed,
            ..Default::default()
        }
    }

    /// Layer widths from input to output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let e = self.engagement();
        let mut dims = vec![e.feature_dim()];
        dims.extend(&self.hidden);
        dims.push(e.n_pursuers);
        dims
    }

    /// Checks every nested configuration and that the paths are distinct.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: coopguide_core::GuidanceError| CliError::Usage(e.to_string());
        self.engagement().validate().map_err(usage)?;
        self.sampling().validate().map_err(usage)?;
        self.training().validate().map_err(usage)?;
        self.sim().validate().map_err(usage)?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(CliError::Usage("training.hidden needs positive widths".into()));
        }
        if self.dataset == self.model || self.dataset == self.output || self.model == self.output {
            return Err(CliError::Usage(
                "paths.dataset, paths.model and paths.output must differ".into(),
            ));
        }
        Ok(())
    }
}
