//! Single-shooting solver for the cooperative intercept boundary value problem.
//!
//! The unknowns are the initial costates of every pursuer plus the final time.
//! A Levenberg–Marquardt iteration with a forward-difference Jacobian drives
//! the terminal residuals to zero from several randomized starts, and the
//! converged extremal with the lowest cost wins.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{scale_to_zero_hamiltonian, stream_rng};
use crate::engagement::{wrap_angle, CombinedState, EngagementConfig};
use crate::error::{GuidanceError, Result};
use crate::pmp::{self, Costate, ExtendedState, Trajectory};

/// Residual norm below which a solution counts as converged.
pub const CONVERGED_RESIDUAL: f64 = 1e-8;

/// Packed unknowns `[p_x1, p_y1, p_θ1, …, p_xN, p_yN, p_θN, t_f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingUnknowns(pub Vec<f64>);

impl ShootingUnknowns {
    pub fn new(costates: &[Costate], tf: f64) -> Self {
        let mut v = Vec::with_capacity(3 * costates.len() + 1);
        for c in costates {
            v.extend_from_slice(&[c.px, c.py, c.ptheta]);
        }
        v.push(tf);
        Self(v)
    }

    /// Unknowns that reproduce a trajectory from its first node.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self::new(&traj.initial().costates, traj.duration())
    }

    pub fn n_pursuers(&self) -> usize {
        (self.0.len() - 1) / 3
    }

    pub fn tf(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn costates(&self) -> Vec<Costate> {
        self.0[..self.0.len() - 1]
            .chunks_exact(3)
            .map(|c| Costate::new(c[0], c[1], c[2]))
            .collect()
    }

    fn initial_state(&self, s0: &CombinedState) -> ExtendedState {
        ExtendedState {
            states: s0.pursuers.clone(),
            costates: self.costates(),
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingOptions {
    pub multistart: usize,
    pub max_iterations: usize,
    /// Forward-difference step on the unknowns.
    pub fd_step: f64,
    pub tol: f64,
    pub seed: u64,
    /// Interval of multipliers on `max_i r_i` for the initial `t_f` guess.
    pub tf_factor_range: (f64, f64),
    /// A start is abandoned when its residual has not halved over this many iterations.
    pub stall_window: usize,
    /// A start is abandoned when `t_f` exceeds this multiple of `max_i r_i`.
    pub tf_cap_factor: f64,
    /// Extra random starts tried only when none of the first batch converges.
    pub fallback_starts: usize,
    /// Bound on `|p_θ| / |(p_x, p_y)|` in random starts.
    pub ptheta_ratio: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            multistart: 32,
            max_iterations: 200,
            fd_step: 1e-7,
            tol: 1e-12,
            seed: 0,
            tf_factor_range: (1.0, 2.0),
            stall_window: 15,
            tf_cap_factor: 4.0,
            fallback_starts: 32,
            ptheta_ratio: 6.0,
        }
    }
}

/// A solved (or best-effort) boundary value problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub trajectory: Trajectory,
    pub unknowns: ShootingUnknowns,
    pub cost_j: f64,
    /// `½ ∫ Σ a_i² dt` in m²/s³.
    pub control_effort: f64,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub start_index: usize,
}

impl OptimalSolution {
    pub fn tf(&self) -> f64 {
        self.unknowns.tf()
    }

    /// Summary line `J,effort,tf,residual,converged`.
    pub fn summary_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.cost_j,
            self.control_effort,
            self.tf(),
            self.residual_norm,
            self.converged
        )
    }
}

fn residual_len(n: usize) -> usize {
    3 * n + 1
}

/// Terminal residuals: positions (2N), heading gaps minus `δ` (N−1), `Σ p_θ`, `H`.
pub fn residuals(z: &ShootingUnknowns, s0: &CombinedState, cfg: &EngagementConfig) -> Result<Vec<f64>> {
    residuals_with_tol(z, s0, cfg, ShootingOptions::default().tol)
}

pub fn residuals_with_tol(
    z: &ShootingUnknowns,
    s0: &CombinedState,
    cfg: &EngagementConfig,
    tol: f64,
) -> Result<Vec<f64>> {
    let n = s0.len();
    if z.0.len() != residual_len(n) {
        return Err(GuidanceError::DimensionMismatch {
            expected: residual_len(n),
            actual: z.0.len(),
        });
    }
    let tf = z.tf();
    if !(tf > 0.0) || !z.0.iter().all(|v| v.is_finite()) {
        return Err(GuidanceError::InvalidConfig(format!(
            "final time must be positive, got {tf}"
        )));
    }
    let end = pmp::propagate(&z.initial_state(s0), 0.0, tf, cfg.kappa, tol)?;
    Ok(terminal_residuals(&end, cfg))
}

/// Terminal residuals of an extended state already at the final time.
pub fn terminal_residuals(end: &ExtendedState, cfg: &EngagementConfig) -> Vec<f64> {
    let n = end.n_pursuers();
    let mut r = Vec::with_capacity(residual_len(n));
    for s in &end.states {
        r.push(s.x);
        r.push(s.y);
    }
    for w in end.states.windows(2) {
        r.push(wrap_angle(w[1].theta - w[0].theta - cfg.delta));
    }
    r.push(pmp::transversality_residual(end));
    r.push(pmp::optimal_hamiltonian(end, cfg.kappa).unwrap_or(f64::NAN));
    r
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Outcome of one Levenberg–Marquardt run.
#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub unknowns: ShootingUnknowns,
    pub residual_norm: f64,
    pub iterations: usize,
}

fn jacobian(
    z: &ShootingUnknowns,
    r0: &[f64],
    s0: &CombinedState,
    cfg: &EngagementConfig,
    opts: &ShootingOptions,
) -> Result<DMatrix<f64>> {
    let m = r0.len();
    let k = z.0.len();
    let mut jac = DMatrix::zeros(m, k);
    for j in 0..k {
        let mut zp = z.clone();
        zp.0[j] += opts.fd_step;
        let rp = residuals_with_tol(&zp, s0, cfg, opts.tol)?;
        for i in 0..m {
            jac[(i, j)] = (rp[i] - r0[i]) / opts.fd_step;
        }
    }
    Ok(jac)
}

/// Levenberg–Marquardt on the shooting residuals from a single start.
pub fn levenberg_marquardt(
    z0: &ShootingUnknowns,
    s0: &CombinedState,
    cfg: &EngagementConfig,
    opts: &ShootingOptions,
) -> Result<LmOutcome> {
    let mut z = z0.clone();
    let mut r = residuals_with_tol(&z, s0, cfg, opts.tol)?;
    let mut rn = norm(&r);
    let mut mu = 1e-3;
    let mut iterations = 0;
    let tf_cap = opts.tf_cap_factor * s0.pursuers.iter().map(|p| p.x.hypot(p.y)).fold(0.0, f64::max);
    let mut history = vec![rn];

    while iterations < opts.max_iterations && rn >= 1e-11 {
        if z.tf() > tf_cap {
            break;
        }
        if history.len() > opts.stall_window && rn > 0.5 * history[history.len() - 1 - opts.stall_window] {
            break;
        }
        iterations += 1;
        let jac = jacobian(&z, &r, s0, cfg, opts)?;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);

        let mut improved = false;
        while mu < 1e12 {
            let mut a = jtj.clone();
            for d in 0..a.nrows() {
                a[(d, d)] += mu * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                mu *= 10.0;
                continue;
            };
            let mut trial = z.clone();
            for (v, dv) in trial.0.iter_mut().zip(step.iter()) {
                *v += dv;
            }
            let tf_old = z.tf();
            let last = trial.0.len() - 1;
            if trial.0[last] < 0.1 * tf_old {
                trial.0[last] = 0.1 * tf_old;
            }
            match residuals_with_tol(&trial, s0, cfg, opts.tol) {
                Ok(rt) if norm(&rt) < rn => {
                    z = trial;
                    r = rt;
                    rn = norm(&r);
                    history.push(rn);
                    mu = (mu / 5.0).max(1e-12);
                    improved = true;
                    break;
                }
                _ => mu *= 4.0,
            }
        }
        if !improved {
            break;
        }
    }
    Ok(LmOutcome {
        unknowns: z,
        residual_norm: rn,
        iterations,
    })
}

/// A randomized start whose costates already satisfy `H(0) = 0`.
pub fn random_start(
    s0: &CombinedState,
    cfg: &EngagementConfig,
    opts: &ShootingOptions,
    rng: &mut impl Rng,
) -> ShootingUnknowns {
    let max_range = s0.pursuers.iter().map(|p| p.x.hypot(p.y)).fold(0.0, f64::max);
    let (lo, hi) = opts.tf_factor_range;
    let tf = max_range * if lo < hi { rng.gen_range(lo..hi) } else { lo };
    loop {
        let costates: Vec<Costate> = s0
            .pursuers
            .iter()
            .map(|_| {
                let dir = rng.gen_range(-PI..PI);
                let mag = rng.gen_range(-2.0f64..1.0).exp2();
                Costate::new(
                    mag * dir.cos(),
                    mag * dir.sin(),
                    rng.gen_range(-1.0..1.0) * opts.ptheta_ratio * mag,
                )
            })
            .collect();
        let mut e = ExtendedState {
            states: s0.pursuers.clone(),
            costates,
        };
        if scale_to_zero_hamiltonian(&mut e, cfg.kappa).is_ok() {
            return ShootingUnknowns::new(&e.costates, tf);
        }
    }
}

/// Turns a converged (or best) set of unknowns into a full solution.
pub fn build_solution(
    z: &ShootingUnknowns,
    s0: &CombinedState,
    cfg: &EngagementConfig,
    tol: f64,
    residual_norm: f64,
    iterations: usize,
    start_index: usize,
) -> Result<OptimalSolution> {
    let trajectory = pmp::integrate(&z.initial_state(s0), 0.0, z.tf(), cfg.kappa, tol)?;
    let effort = trajectory.effort_nd();
    Ok(OptimalSolution {
        cost_j: trajectory.cost(),
        control_effort: effort * cfg.speed * cfg.speed,
        trajectory,
        unknowns: z.clone(),
        residual_norm,
        converged: residual_norm < CONVERGED_RESIDUAL,
        iterations,
        start_index,
    })
}

/// Solves the intercept problem from `s0` by multistart shooting.
///
/// `extra_starts` are tried first (e.g. guesses seeded by a trained network);
/// the random starts follow, and `fallback_starts` more if nothing converged. Among converged runs the lowest `J`, then the
/// lowest `t_f`, then the lowest start index wins; if none converge, the run
/// with the smallest residual is returned with `converged = false`.
pub fn solve_tpbvp(
    s0: &CombinedState,
    cfg: &EngagementConfig,
    opts: &ShootingOptions,
    extra_starts: &[ShootingUnknowns],
) -> Result<OptimalSolution> {
    cfg.validate()?;
    s0.validate(cfg)?;
    if opts.multistart == 0 && extra_starts.is_empty() {
        return Err(GuidanceError::InvalidConfig("multistart must be at least 1".into()));
    }
    let mut starts: Vec<ShootingUnknowns> = extra_starts.to_vec();
    for k in 0..opts.multistart {
        let mut rng = stream_rng(opts.seed, k as u64);
        starts.push(random_start(s0, cfg, opts, &mut rng));
    }
    let mut candidates = run_starts(&starts, 0, s0, cfg, opts);
    if !candidates.iter().any(|s| s.converged) && opts.fallback_starts > 0 {
        let more: Vec<ShootingUnknowns> = (opts.multistart..opts.multistart + opts.fallback_starts)
            .map(|k| random_start(s0, cfg, opts, &mut stream_rng(opts.seed, k as u64)))
            .collect();
        candidates.extend(run_starts(&more, starts.len(), s0, cfg, opts));
    }

    let best_converged = candidates.iter().filter(|s| s.converged).min_by(|a, b| {
        a.cost_j
            .total_cmp(&b.cost_j)
            .then(a.tf().total_cmp(&b.tf()))
            .then(a.start_index.cmp(&b.start_index))
    });
    let best = best_converged.or_else(|| {
        candidates.iter().min_by(|a, b| {
            a.residual_norm
                .total_cmp(&b.residual_norm)
                .then(a.start_index.cmp(&b.start_index))
        })
    });
    best.cloned()
        .ok_or_else(|| GuidanceError::InvalidConfig("every shooting start failed to integrate".into()))
}

fn run_starts(
    starts: &[ShootingUnknowns],
    first_index: usize,
    s0: &CombinedState,
    cfg: &EngagementConfig,
    opts: &ShootingOptions,
) -> Vec<OptimalSolution> {
    starts
        .par_iter()
        .enumerate()
        .filter_map(|(k, z0)| {
            let lm = levenberg_marquardt(z0, s0, cfg, opts).ok()?;
            build_solution(
                &lm.unknowns,
                s0,
                cfg,
                opts.tol,
                lm.residual_norm,
                lm.iterations,
                first_index + k,
            )
            .ok()
        })
        .collect()
}

/// `½ ∫ Σ u_i² dt` scaled to m²/s³.
pub fn control_effort(traj: &Trajectory, cfg: &EngagementConfig) -> f64 {
    traj.effort_nd() * cfg.speed * cfg.speed
}
