//! Training data from backward-propagated extremals.
//!
//! Terminal states satisfying every boundary and transversality condition are
//! drawn at random, the extremal vector field is integrated backward from
//! them, and each trajectory is sliced into `(features → optimal command)`
//! pairs. No boundary value problem is ever solved.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engagement::{
    all_polar_features, assemble_features, wrap_angle, CombinedState, EngagementConfig, PursuerState,
};
use crate::error::{GuidanceError, Result};
use crate::ode;
use crate::pmp::{self, Costate, ExtendedState, Trajectory};

const MAGIC: &[u8; 4] = b"CGD1";

/// Fraction of the time-to-go of a focal point kept when truncating.
const FOCAL_MARGIN: f64 = 0.95;

/// Per-stream RNG derived from a seed and a stream index.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// How terminal conditions and horizons are drawn, and which trajectories are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSampleSpec {
    /// Interval for the first pursuer's final heading.
    pub theta1_range: (f64, f64),
    /// Interval for each free final `p_θ` before scaling.
    pub ptheta_range: (f64, f64),
    /// Log-uniform interval for each `|(p_x, p_y)|` before scaling.
    pub pxy_magnitude_range: (f64, f64),
    /// Log-uniform interval for the backward horizon.
    pub duration_range: (f64, f64),
    pub rng_seed: u64,
    /// Time between extracted samples.
    pub spacing: f64,
    /// Samples with any pursuer closer than this are dropped.
    pub min_range: f64,
    /// Trajectories commanding more than this anywhere are rejected.
    pub max_command: f64,
    /// Trajectories flying farther than this from the target are rejected.
    pub max_range: f64,
    /// Trajectories where a pursuer turns by more than this in total are rejected.
    pub max_heading_change: f64,
    /// Draws tried per trajectory slot before it counts as failed.
    pub max_attempts: usize,
    /// Cut each backward horizon short of the first focal point.
    pub focal_screen: bool,
    /// Probability of keeping a trajectory whose initial geometry is benign
    /// (every off-boresight angle and the LOS separation below 30°).
    pub benign_keep: f64,
    /// Terminal draws whose scaled `|(p_x, p_y)|` exceeds this are redrawn.
    pub max_costate: f64,
    pub tol: f64,
}

impl Default for TerminalSampleSpec {
    fn default() -> Self {
        Self {
            theta1_range: (-PI, PI),
            ptheta_range: (-1.0, 1.0),
            pxy_magnitude_range: (0.1, 10.0),
            duration_range: (0.5, 10.0),
            rng_seed: 0,
            spacing: 0.1,
            min_range: 0.2,
            max_command: 2.0,
            max_range: 20.0,
            max_heading_change: 200f64.to_radians(),
            max_attempts: 50,
            focal_screen: true,
            benign_keep: 0.05,
            max_costate: 100.0,
            tol: pmp::DEFAULT_TOL,
        }
    }
}

impl TerminalSampleSpec {
    pub fn validate(&self) -> Result<()> {
        let interval = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(GuidanceError::InvalidConfig(format!("{name} [{lo}, {hi}] is empty")))
            }
        };
        interval("theta1_range", self.theta1_range)?;
        interval("ptheta_range", self.ptheta_range)?;
        interval("pxy_magnitude_range", self.pxy_magnitude_range)?;
        interval("duration_range", self.duration_range)?;
        if !(self.pxy_magnitude_range.0 > 0.0) {
            return Err(GuidanceError::InvalidConfig(
                "pxy_magnitude_range must be positive".into(),
            ));
        }
        if !(self.duration_range.0 > 0.0) {
            return Err(GuidanceError::InvalidConfig("duration_range must be positive".into()));
        }
        for (name, v) in [
            ("spacing", self.spacing),
            ("max_command", self.max_command),
            ("max_range", self.max_range),
            ("max_heading_change", self.max_heading_change),
            ("tol", self.tol),
            ("benign_keep", self.benign_keep),
            ("max_costate", self.max_costate),
        ] {
            if !(v > 0.0) {
                return Err(GuidanceError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.benign_keep > 1.0 {
            return Err(GuidanceError::InvalidConfig("benign_keep must lie in (0, 1]".into()));
        }
        if self.min_range < 0.0 || self.max_attempts == 0 {
            return Err(GuidanceError::InvalidConfig(
                "min_range must be >= 0 and max_attempts >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    uniform(rng, (lo.ln(), hi.ln())).exp()
}

/// Positive root of `A s + B s² = κ`.
pub fn solve_scale(a: f64, b: f64, kappa: f64) -> Result<f64> {
    if !(b >= 0.0) || !a.is_finite() {
        return Err(GuidanceError::NoPositiveRoot { a, b });
    }
    if b > 0.0 {
        // Stable form of (-A + √(A² + 4Bκ)) / 2B.
        let disc = (a * a + 4.0 * b * kappa).sqrt();
        let s = if a <= 0.0 {
            (disc - a) / (2.0 * b)
        } else {
            2.0 * kappa / (a + disc)
        };
        Ok(s)
    } else if a > 0.0 {
        Ok(kappa / a)
    } else {
        Err(GuidanceError::NoPositiveRoot { a, b })
    }
}

/// Rescales all costates so the optimal Hamiltonian vanishes.
pub fn scale_to_zero_hamiltonian(e: &mut ExtendedState, kappa: f64) -> Result<f64> {
    let mut a = 0.0;
    let mut b = 0.0;
    for (s, c) in e.states.iter().zip(&e.costates) {
        let (sin, cos) = s.theta.sin_cos();
        a += c.px * cos + c.py * sin;
        b += c.ptheta * c.ptheta / (2.0 * (1.0 - kappa));
    }
    let scale = solve_scale(a, b, kappa)?;
    for c in &mut e.costates {
        *c = c.scaled(scale);
    }
    Ok(scale)
}

/// Draws a point on the terminal manifold: all pursuers at the target, headings
/// spaced by `δ`, `Σ p_θ = 0` and `H = 0`.
///
/// Draws whose scaled costates exceed `spec.max_costate` are redrawn, up to
/// `spec.max_attempts` times.
pub fn sample_terminal(spec: &TerminalSampleSpec, cfg: &EngagementConfig, rng: &mut impl Rng) -> Result<ExtendedState> {
    let mut last = None;
    for _ in 0..spec.max_attempts.max(1) {
        match draw_terminal(spec, cfg, rng) {
            Ok(e) if e.costates.iter().all(|c| c.px.hypot(c.py) <= spec.max_costate) => return Ok(e),
            Ok(_) => {}
            Err(err) => last = Some(err),
        }
    }
    Err(last.unwrap_or_else(|| {
        GuidanceError::InvalidConfig(format!(
            "no terminal draw within max_costate = {} after {} attempts",
            spec.max_costate, spec.max_attempts
        ))
    }))
}

fn draw_terminal(spec: &TerminalSampleSpec, cfg: &EngagementConfig, rng: &mut impl Rng) -> Result<ExtendedState> {
    let n = cfg.n_pursuers;
    let theta1 = uniform(rng, spec.theta1_range);
    let states: Vec<_> = (0..n)
        .map(|i| PursuerState::new(0.0, 0.0, theta1 + i as f64 * cfg.delta))
        .collect();

    let mut costates = Vec::with_capacity(n);
    let mut ptheta_sum = 0.0;
    for i in 0..n {
        let dir = rng.gen_range(-PI..PI);
        let mag = log_uniform(rng, spec.pxy_magnitude_range);
        let ptheta = if i + 1 < n {
            let p = uniform(rng, spec.ptheta_range);
            ptheta_sum += p;
            p
        } else {
            -ptheta_sum
        };
        costates.push(Costate::new(mag * dir.cos(), mag * dir.sin(), ptheta));
    }
    let mut e = ExtendedState::new(states, costates)?;
    scale_to_zero_hamiltonian(&mut e, cfg.kappa)?;
    let head: f64 = e.costates[..n - 1].iter().map(|c| c.ptheta).sum();
    e.costates[n - 1].ptheta = -head;
    Ok(e)
}

/// Integrates backward from a terminal state over horizon `tau`.
///
/// The result runs over `[0, tau]` with the terminal state at `tau`.
pub fn backward_propagate(terminal: &ExtendedState, tau: f64, kappa: f64, tol: f64) -> Result<Trajectory> {
    if !(tau > 0.0) {
        return Err(GuidanceError::InvalidConfig(format!(
            "horizon must be positive, got {tau}"
        )));
    }
    pmp::integrate(terminal, tau, 0.0, kappa, tol)
}

/// Tangent vectors of the terminal manifold at `e`, in the flat layout.
///
/// The first is the joint rotation of headings and costates; the rest span
/// the costate directions that keep `Σ p_θ = 0` and `H = 0`.
fn terminal_tangents(e: &ExtendedState, kappa: f64) -> Vec<Vec<f64>> {
    let n = e.n_pursuers();
    let dim = pmp::STRIDE * n;
    let mut out = Vec::with_capacity(3 * n - 1);
    let mut rot = vec![0.0; dim];
    for (i, c) in e.costates.iter().enumerate() {
        rot[pmp::STRIDE * i + 2] = 1.0;
        rot[pmp::STRIDE * i + 3] = -c.py;
        rot[pmp::STRIDE * i + 4] = c.px;
    }
    out.push(rot);

    // Free costate coordinates q = (p_θ1..p_θ(N-1), p_x1, p_y1, .., p_xN, p_yN).
    let m = 3 * n - 1;
    let gain = 1.0 / (1.0 - kappa);
    let u_last = e.costates[n - 1].ptheta * gain;
    let mut grad = Vec::with_capacity(m);
    for c in &e.costates[..n - 1] {
        grad.push(c.ptheta * gain - u_last);
    }
    for s in &e.states {
        let (sin, cos) = s.theta.sin_cos();
        grad.push(cos);
        grad.push(sin);
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut basis: Vec<Vec<f64>> = vec![grad.iter().map(|g| g / dot(&grad, &grad).sqrt()).collect()];
    for k in 0..m {
        let mut v = vec![0.0; m];
        v[k] = 1.0;
        for b in &basis {
            let d = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let len = dot(&v, &v).sqrt();
        if len > 1e-6 {
            v.iter_mut().for_each(|x| *x /= len);
            basis.push(v);
        }
        if basis.len() == m {
            break;
        }
    }
    for q in &basis[1..] {
        let mut t = vec![0.0; dim];
        for j in 0..n - 1 {
            t[pmp::STRIDE * j + 5] += q[j];
            t[pmp::STRIDE * (n - 1) + 5] -= q[j];
        }
        for i in 0..n {
            t[pmp::STRIDE * i + 3] = q[n - 1 + 2 * i];
            t[pmp::STRIDE * i + 4] = q[n + 2 * i];
        }
        out.push(t);
    }
    out
}

/// Linearized extremal field applied to `dy_in`, written to `dy_out`.
fn variational_rates(y: &[f64], gain: f64, d: &[f64], out: &mut [f64]) {
    for ((yi, di), oi) in y
        .chunks_exact(pmp::STRIDE)
        .zip(d.chunks_exact(pmp::STRIDE))
        .zip(out.chunks_exact_mut(pmp::STRIDE))
    {
        let (sin, cos) = yi[2].sin_cos();
        oi[0] = -sin * di[2];
        oi[1] = cos * di[2];
        oi[2] = gain * di[5];
        oi[3] = 0.0;
        oi[4] = 0.0;
        oi[5] = (yi[3] * cos + yi[4] * sin) * di[2] + sin * di[3] - cos * di[4];
    }
}

/// Time-to-go of the first focal point of the terminal manifold along the
/// backward extremal from `terminal`, if one occurs within `tau`.
///
/// The extremal field is regular while the Jacobian of the map from
/// (terminal manifold point, time-to-go) to the state keeps its sign; a sign
/// change means the extremal has stopped being locally optimal.
pub fn first_focal_point(terminal: &ExtendedState, tau: f64, kappa: f64, tol: f64) -> Result<Option<f64>> {
    if !(tau > 0.0) {
        return Err(GuidanceError::InvalidConfig(format!(
            "horizon must be positive, got {tau}"
        )));
    }
    let n = terminal.n_pursuers();
    let dim = pmp::STRIDE * n;
    let tangents = terminal_tangents(terminal, kappa);
    let cols = tangents.len();
    let mut y0 = terminal.to_flat();
    for t in &tangents {
        y0.extend_from_slice(t);
    }
    let gain = 1.0 / (1.0 - kappa);
    let rates = |_: f64, y: &[f64], dy: &mut [f64]| {
        let (base, tan) = y.split_at(dim);
        let (dbase, dtan) = dy.split_at_mut(dim);
        pmp::extended_rates_flat(base, kappa, dbase);
        for (d, o) in tan.chunks_exact(dim).zip(dtan.chunks_exact_mut(dim)) {
            variational_rates(base, gain, d, o);
        }
    };
    let mut reference: Option<f64> = None;
    let mut focal: Option<f64> = None;
    let mut jac = nalgebra::DMatrix::<f64>::zeros(3 * n, 3 * n);
    let mut f = vec![0.0; dim];
    ode::Dopri5::with_tol(tol).solve(rates, tau, &y0, 0.0, |t, y, _| {
        let ttg = tau - t;
        if focal.is_some() || ttg <= 0.0 {
            return;
        }
        let (base, tan) = y.split_at(dim);
        pmp::extended_rates_flat(base, kappa, &mut f);
        for i in 0..n {
            for k in 0..3 {
                let row = 3 * i + k;
                for (c, d) in tan.chunks_exact(dim).enumerate().take(cols) {
                    jac[(row, c)] = d[pmp::STRIDE * i + k];
                }
                jac[(row, cols)] = f[pmp::STRIDE * i + k];
            }
        }
        let det = jac.clone().lu().determinant();
        let sign = det.signum();
        match reference {
            None if det != 0.0 => reference = Some(sign),
            Some(r) if sign != r => focal = Some(ttg),
            _ => {}
        }
    })?;
    Ok(focal)
}

/// One `(features → optimal commands)` training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub features: Vec<f64>,
    pub commands: Vec<f64>,
    pub time_to_go: f64,
}

/// Slices a trajectory into samples every `spacing` back from its final time.
pub fn extract_samples(
    traj: &Trajectory,
    cfg: &EngagementConfig,
    spacing: f64,
    min_range: f64,
) -> Vec<TrajectorySample> {
    assert!(spacing > 0.0, "sample spacing must be positive");
    let t_end = traj.end_time();
    let count = (traj.duration() / spacing).floor() as usize;
    let mut out = Vec::with_capacity(count + 1);
    for k in (0..=count).rev() {
        let t = t_end - k as f64 * spacing;
        let node = traj.sample_at(t);
        if let Some(sample) = sample_from_node(&node, cfg, min_range, t_end - t) {
            out.push(sample);
        }
    }
    out
}

/// Builds a sample from a single extended state, or `None` inside the exclusion zone.
pub fn sample_from_node(
    node: &ExtendedState,
    cfg: &EngagementConfig,
    min_range: f64,
    time_to_go: f64,
) -> Option<TrajectorySample> {
    let combined = CombinedState::new(node.states.clone());
    let polar = all_polar_features(&combined).ok()?;
    if polar.iter().any(|f| f.r < min_range) {
        return None;
    }
    let gain = 1.0 / (1.0 - cfg.kappa);
    Some(TrajectorySample {
        features: assemble_features(&polar, cfg.feature_mode),
        commands: node.costates.iter().map(|c| c.ptheta * gain).collect(),
        time_to_go,
    })
}

/// Why a backward trajectory was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    CommandLimit,
    RangeLimit,
    HeadingChange,
    FocalPoint,
    Benign,
    NoSamples,
}

/// Applies the envelope filters to a backward trajectory.
pub fn screen_trajectory(traj: &Trajectory, spec: &TerminalSampleSpec) -> Option<Rejection> {
    let gain = 1.0 / (1.0 - traj.kappa());
    let terminal = traj.terminal();
    for e in traj.nodes() {
        for (i, (s, c)) in e.states.iter().zip(&e.costates).enumerate() {
            if (c.ptheta * gain).abs() > spec.max_command {
                return Some(Rejection::CommandLimit);
            }
            if s.x.hypot(s.y) > spec.max_range {
                return Some(Rejection::RangeLimit);
            }
            if (s.theta - terminal.states[i].theta).abs() > spec.max_heading_change {
                return Some(Rejection::HeadingChange);
            }
        }
    }
    None
}

/// True when every pursuer points within 30° of its line of sight and all
/// lines of sight lie within 30° of the first.
pub fn is_benign(e: &ExtendedState) -> bool {
    let limit = PI / 6.0;
    let Ok(polar) = all_polar_features(&CombinedState::new(e.states.clone())) else {
        return false;
    };
    polar.iter().zip(&e.states).all(|(f, s)| {
        wrap_angle(s.theta - f.lambda).abs() < limit && wrap_angle(f.lambda - polar[0].lambda).abs() < limit
    })
}

/// Generates one accepted trajectory for slot `index`, retrying rejected draws.
///
/// Returns the trajectory (if any) and the number of rejected draws.
pub fn generate_trajectory(
    spec: &TerminalSampleSpec,
    cfg: &EngagementConfig,
    index: u64,
) -> (Option<Trajectory>, usize) {
    let mut rng = stream_rng(spec.rng_seed, index);
    let mut rejected = 0;
    for _ in 0..spec.max_attempts {
        let Ok(terminal) = sample_terminal(spec, cfg, &mut rng) else {
            rejected += 1;
            continue;
        };
        let mut tau = log_uniform(&mut rng, spec.duration_range);
        if spec.focal_screen {
            match first_focal_point(&terminal, tau, cfg.kappa, spec.tol) {
                Ok(None) => {}
                Ok(Some(ttg)) if FOCAL_MARGIN * ttg >= spec.duration_range.0 => tau = FOCAL_MARGIN * ttg,
                _ => {
                    rejected += 1;
                    continue;
                }
            }
        }
        let keep_draw: f64 = rng.gen();
        match backward_propagate(&terminal, tau, cfg.kappa, spec.tol) {
            Ok(traj) if screen_trajectory(&traj, spec).is_none() => {
                if spec.benign_keep < 1.0 && is_benign(traj.initial()) && keep_draw >= spec.benign_keep {
                    rejected += 1;
                } else {
                    return (Some(traj), rejected);
                }
            }
            _ => rejected += 1,
        }
    }
    (None, rejected)
}

/// Per-component mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Stats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population statistics over rows; zero spreads are replaced by 1.
    pub fn from_rows<'a, I>(dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut count = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            count += 1;
            for j in 0..dim {
                let delta = row[j] - mean[j];
                mean[j] += delta / count as f64;
                m2[j] += delta * (row[j] - mean[j]);
            }
        }
        let std = m2
            .iter()
            .map(|&v| {
                let s = if count > 0 { (v / count as f64).sqrt() } else { 0.0 };
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// A set of training pairs with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TrajectorySample>,
    pub config: EngagementConfig,
    pub seed: u64,
    pub n_traj: usize,
    pub rejected: usize,
    pub feature_stats: Stats,
    pub command_stats: Stats,
    /// Extra `key=value` header lines carried through files unchanged.
    pub provenance: BTreeMap<String, String>,
}

impl Dataset {
    /// Builds a dataset and computes its normalization statistics.
    pub fn new(samples: Vec<TrajectorySample>, config: EngagementConfig, seed: u64) -> Result<Self> {
        let dim_in = config.feature_dim();
        let dim_out = config.n_pursuers;
        for s in &samples {
            if s.features.len() != dim_in {
                return Err(GuidanceError::DimensionMismatch {
                    expected: dim_in,
                    actual: s.features.len(),
                });
            }
            if s.commands.len() != dim_out {
                return Err(GuidanceError::DimensionMismatch {
                    expected: dim_out,
                    actual: s.commands.len(),
                });
            }
        }
        let feature_stats = Stats::from_rows(dim_in, samples.iter().map(|s| s.features.as_slice()));
        let command_stats = Stats::from_rows(dim_out, samples.iter().map(|s| s.commands.as_slice()));
        Ok(Self {
            samples,
            config,
            seed,
            n_traj: 0,
            rejected: 0,
            feature_stats,
            command_stats,
            provenance: BTreeMap::new(),
        })
    }

    pub fn dim_in(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn dim_out(&self) -> usize {
        self.config.n_pursuers
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fraction of draws that were rejected.
    pub fn rejection_rate(&self) -> f64 {
        let total = self.n_traj + self.rejected;
        if total == 0 {
            0.0
        } else {
            self.rejected as f64 / total as f64
        }
    }

    fn header(&self) -> Vec<(String, String)> {
        let cfg = &self.config;
        let mut h = vec![
            ("n".to_string(), cfg.n_pursuers.to_string()),
            ("kappa".into(), cfg.kappa.to_string()),
            ("delta".into(), cfg.delta.to_string()),
            ("feature_mode".into(), cfg.feature_mode.to_string()),
            ("dim_in".into(), self.dim_in().to_string()),
            ("dim_out".into(), self.dim_out().to_string()),
            ("count".into(), self.samples.len().to_string()),
            ("seed".into(), self.seed.to_string()),
            ("speed".into(), cfg.speed.to_string()),
            ("switch_radius".into(), cfg.switch_radius.to_string()),
            ("pn_gain".into(), cfg.pn_gain.to_string()),
            ("n_traj".into(), self.n_traj.to_string()),
            ("rejected".into(), self.rejected.to_string()),
        ];
        h.extend(self.provenance.iter().map(|(k, v)| (k.clone(), v.clone())));
        h
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(b"\n")?;
        for (k, v) in self.header() {
            writeln!(w, "{k}={v}")?;
        }
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(8 * (self.dim_in() + self.dim_out() + 1));
        for s in &self.samples {
            buf.clear();
            for v in s
                .features
                .iter()
                .chain(&s.commands)
                .chain(std::iter::once(&s.time_to_go))
            {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let header = read_header(&mut r, MAGIC)?;
        let take = |key: &str| -> Result<String> {
            header
                .get(key)
                .cloned()
                .ok_or_else(|| GuidanceError::Format(format!("missing header key `{key}`")))
        };
        let config = EngagementConfig {
            n_pursuers: parse_field(&take("n")?, "n")?,
            kappa: parse_field(&take("kappa")?, "kappa")?,
            delta: parse_field(&take("delta")?, "delta")?,
            speed: parse_field(&take("speed")?, "speed")?,
            switch_radius: parse_field(&take("switch_radius")?, "switch_radius")?,
            pn_gain: parse_field(&take("pn_gain")?, "pn_gain")?,
            feature_mode: take("feature_mode")?
                .parse()
                .map_err(|_| GuidanceError::Format("bad feature_mode".into()))?,
        };
        let dim_in: usize = parse_field(&take("dim_in")?, "dim_in")?;
        let dim_out: usize = parse_field(&take("dim_out")?, "dim_out")?;
        let count: usize = parse_field(&take("count")?, "count")?;
        let seed: u64 = parse_field(&take("seed")?, "seed")?;
        let n_traj: usize = parse_field(&take("n_traj")?, "n_traj")?;
        let rejected: usize = parse_field(&take("rejected")?, "rejected")?;
        if dim_in != config.feature_dim() || dim_out != config.n_pursuers {
            return Err(GuidanceError::Format(format!(
                "dims {dim_in}->{dim_out} do not match n={} mode={}",
                config.n_pursuers, config.feature_mode
            )));
        }

        let record = dim_in + dim_out + 1;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let expected = count
            .checked_mul(record * 8)
            .ok_or_else(|| GuidanceError::Format("count overflows".into()))?;
        if payload.len() != expected {
            return Err(GuidanceError::Format(format!(
                "payload has {} bytes, header promises {expected}",
                payload.len()
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let samples = values
            .chunks_exact(record)
            .map(|rec| TrajectorySample {
                features: rec[..dim_in].to_vec(),
                commands: rec[dim_in..dim_in + dim_out].to_vec(),
                time_to_go: rec[record - 1],
            })
            .collect();

        let mut d = Dataset::new(samples, config, seed)?;
        d.n_traj = n_traj;
        d.rejected = rejected;
        const KNOWN: [&str; 13] = [
            "n",
            "kappa",
            "delta",
            "feature_mode",
            "dim_in",
            "dim_out",
            "count",
            "seed",
            "speed",
            "switch_radius",
            "pn_gain",
            "n_traj",
            "rejected",
        ];
        d.provenance = header
            .into_iter()
            .filter(|(k, _)| !KNOWN.contains(&k.as_str()))
            .collect();
        Ok(d)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut cols: Vec<String> = (0..self.dim_in()).map(|j| format!("f{j}")).collect();
        cols.extend((0..self.dim_out()).map(|j| format!("u{j}")));
        cols.push("time_to_go".into());
        writeln!(w, "{}", cols.join(","))?;
        for s in &self.samples {
            let row: Vec<String> = s
                .features
                .iter()
                .chain(&s.commands)
                .chain(std::iter::once(&s.time_to_go))
                .map(|v| v.to_string())
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn parse_field<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| GuidanceError::Format(format!("bad value `{v}` for `{key}`")))
}

/// Reads `MAGIC\n` followed by `key=value` lines up to a blank line.
pub(crate) fn read_header<R: io::BufRead>(r: &mut R, magic: &[u8; 4]) -> Result<BTreeMap<String, String>> {
    let mut m = [0u8; 5];
    r.read_exact(&mut m)
        .map_err(|_| GuidanceError::Format("file too short for magic".into()))?;
    if &m[..4] != magic || m[4] != b'\n' {
        return Err(GuidanceError::Format(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut header = BTreeMap::new();
    loop {
        let mut line = Vec::new();
        let n = r.read_until(b'\n', &mut line)?;
        if n == 0 || line.last() != Some(&b'\n') {
            return Err(GuidanceError::Format("truncated header".into()));
        }
        line.pop();
        if line.is_empty() {
            break;
        }
        let text = String::from_utf8(line).map_err(|_| GuidanceError::Format("non-UTF-8 header".into()))?;
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| GuidanceError::Format(format!("header line `{text}` lacks `=`")))?;
        header.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(header)
}

/// Writes a dataset file.
pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    d.write(BufWriter::new(File::create(path)?))
}

/// Reads a dataset file.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::read(File::open(path)?)
}

/// Generates `n_traj` trajectories and their samples.
///
/// Each slot draws from its own RNG stream, so the result does not depend on
/// how work is spread over threads.
pub fn generate_dataset(spec: &TerminalSampleSpec, cfg: &EngagementConfig, n_traj: usize) -> Result<Dataset> {
    cfg.validate()?;
    spec.validate()?;
    if n_traj == 0 {
        return Err(GuidanceError::InvalidConfig("n_traj must be at least 1".into()));
    }
    let per_slot: Vec<(Vec<TrajectorySample>, bool, usize)> = (0..n_traj as u64)
        .into_par_iter()
        .map(|index| match generate_trajectory(spec, cfg, index) {
            (Some(traj), rejected) => {
                let samples = extract_samples(&traj, cfg, spec.spacing, spec.min_range);
                (samples, true, rejected)
            }
            (None, rejected) => (Vec::new(), false, rejected),
        })
        .collect();

    let failed = per_slot.iter().filter(|(_, ok, _)| !ok).count();
    if 2 * failed > n_traj {
        return Err(GuidanceError::InvalidConfig(format!(
            "{failed} of {n_traj} trajectory slots exhausted their draws"
        )));
    }
    let rejected = per_slot.iter().map(|(_, _, r)| r).sum();
    let accepted = n_traj - failed;
    let samples = per_slot.into_iter().flat_map(|(s, _, _)| s).collect();
    let mut d = Dataset::new(samples, cfg.clone(), spec.rng_seed)?;
    d.n_traj = accepted;
    d.rejected = rejected;
    Ok(d)
}
