//! Closed-loop engagement simulation.
//!
//! At every guidance step the policy maps the combined state to turn-rate
//! commands, which are held constant while each pursuer is advanced by one
//! RK4 step. Pursuers inside the switch radius fly PN; a pursuer stops at its
//! point of closest approach once the range starts opening inside that radius.

use std::fmt::{self, Write as _};
use std::io::{self, Write};
use std::str::FromStr;

use crate::engagement::{
    all_polar_features, assemble_features, pn_command, polar_features, wrap_angle, CombinedState, EngagementConfig,
    PursuerState, TargetState,
};
use crate::error::{GuidanceError, Result};
use crate::mlp::MlpModel;
use crate::pmp::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Fnn,
    Pn,
    OracleOpenLoop,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Fnn => "fnn",
            PolicyKind::Pn => "pn",
            PolicyKind::OracleOpenLoop => "oracle",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = GuidanceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fnn" => Ok(PolicyKind::Fnn),
            "pn" => Ok(PolicyKind::Pn),
            "oracle" => Ok(PolicyKind::OracleOpenLoop),
            other => Err(GuidanceError::InvalidConfig(format!("unknown policy `{other}`"))),
        }
    }
}

/// Which law produced a pursuer's command at a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMode {
    Fnn,
    Pn,
    OpenLoop,
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuidanceMode::Fnn => "FNN",
            GuidanceMode::Pn => "PN",
            GuidanceMode::OpenLoop => "OL",
        })
    }
}

/// Simulation settings (nondimensional time).
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub time_cap: f64,
    /// Bound on |u| applied to every command.
    pub command_limit: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            time_cap: 60.0,
            command_limit: 25.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.time_cap > 0.0 && self.command_limit > 0.0) {
            return Err(GuidanceError::InvalidConfig(
                "dt, time_cap and command_limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Maps combined states to commands.
#[derive(Debug, Clone)]
pub struct GuidancePolicy {
    pub kind: PolicyKind,
    pub model: Option<MlpModel>,
    pub openloop: Option<Trajectory>,
    pub cfg: EngagementConfig,
}

impl GuidancePolicy {
    pub fn pn(cfg: EngagementConfig) -> Self {
        Self {
            kind: PolicyKind::Pn,
            model: None,
            openloop: None,
            cfg,
        }
    }

    pub fn fnn(model: MlpModel, cfg: EngagementConfig) -> Result<Self> {
        if model.dim_in() != cfg.feature_dim() || model.dim_out() != cfg.n_pursuers {
            return Err(GuidanceError::DimensionMismatch {
                expected: cfg.feature_dim(),
                actual: model.dim_in(),
            });
        }
        Ok(Self {
            kind: PolicyKind::Fnn,
            model: Some(model),
            openloop: None,
            cfg,
        })
    }

    /// Replays the commands of an integrated extremal starting at time 0.
    pub fn oracle_openloop(traj: Trajectory, cfg: EngagementConfig) -> Result<Self> {
        if traj.initial().n_pursuers() != cfg.n_pursuers {
            return Err(GuidanceError::DimensionMismatch {
                expected: cfg.n_pursuers,
                actual: traj.initial().n_pursuers(),
            });
        }
        Ok(Self {
            kind: PolicyKind::OracleOpenLoop,
            model: None,
            openloop: Some(traj),
            cfg,
        })
    }

    /// Commands and modes for every pursuer at time `t`, before clamping.
    pub fn guidance_command(&self, c: &CombinedState, t: f64) -> Result<(Vec<f64>, Vec<GuidanceMode>)> {
        let n = c.len();
        match self.kind {
            PolicyKind::OracleOpenLoop => {
                let traj = self.openloop.as_ref().expect("open-loop policy carries a trajectory");
                let node = traj.sample_at(traj.start_time() + t);
                let u = node.optimal_commands(self.cfg.kappa)?;
                Ok((u, vec![GuidanceMode::OpenLoop; n]))
            }
            PolicyKind::Pn => {
                let polar = all_polar_features(c)?;
                let u = polar.iter().map(|f| pn_command(f, &self.cfg)).collect::<Result<_>>()?;
                Ok((u, vec![GuidanceMode::Pn; n]))
            }
            PolicyKind::Fnn => {
                let polar = all_polar_features(c)?;
                let switch = self.cfg.switch_radius_nd();
                let modes: Vec<GuidanceMode> = polar
                    .iter()
                    .map(|f| {
                        if f.r < switch {
                            GuidanceMode::Pn
                        } else {
                            GuidanceMode::Fnn
                        }
                    })
                    .collect();
                let mut u = vec![0.0; n];
                if modes.contains(&GuidanceMode::Fnn) {
                    let model = self.model.as_ref().expect("fnn policy carries a model");
                    let net = model.forward(&assemble_features(&polar, self.cfg.feature_mode))?;
                    for i in 0..n {
                        if modes[i] == GuidanceMode::Fnn {
                            u[i] = net[i];
                        }
                    }
                }
                for i in 0..n {
                    if modes[i] == GuidanceMode::Pn {
                        u[i] = pn_command(&polar[i], &self.cfg)?;
                    }
                }
                Ok((u, modes))
            }
        }
    }
}

/// One RK4 step of a unit-speed pursuer under a constant turn rate.
pub fn step_pursuer(p: &PursuerState, u: f64, dt: f64) -> PursuerState {
    let th = p.theta;
    let half = th + 0.5 * u * dt;
    let end = th + u * dt;
    let (s1, c1) = th.sin_cos();
    let (s2, c2) = half.sin_cos();
    let (s4, c4) = end.sin_cos();
    PursuerState {
        x: p.x + dt / 6.0 * (c1 + 4.0 * c2 + c4),
        y: p.y + dt / 6.0 * (s1 + 4.0 * s2 + s4),
        theta: end,
    }
}

/// Advances every pursuer by one RK4 step with its own constant command.
pub fn step(c: &CombinedState, u: &[f64], dt: f64) -> CombinedState {
    assert!(dt > 0.0, "step size must be positive");
    CombinedState {
        pursuers: c
            .pursuers
            .iter()
            .zip(u)
            .map(|(p, &ui)| step_pursuer(p, ui, dt))
            .collect(),
    }
}

/// One recorded pursuer sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub index: usize,
    pub state: PursuerState,
    pub u: f64,
    pub r: f64,
    pub mode: GuidanceMode,
}

/// Outcome of a closed-loop engagement. Lengths and times are physical.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub records: Vec<StepRecord>,
    /// Miss distance per pursuer (m).
    pub miss_distance: Vec<f64>,
    /// Time of closest approach per pursuer (s); NaN if the time cap hit first.
    pub intercept_time: Vec<f64>,
    /// Heading at closest approach (rad).
    pub intercept_heading: Vec<f64>,
    /// `|wrap((θ_{i+1} - θ_i) - δ)|` per consecutive pair (rad).
    pub relative_angle_error: Vec<f64>,
    /// `½ ∫ Σ a_i² dt` in m²/s³.
    pub control_effort: f64,
    /// Time each pursuer first flew PN (s).
    pub switch_times: Vec<Option<f64>>,
    pub time_cap_exceeded: bool,
    pub speed: f64,
}

impl SimResult {
    /// Path length per pursuer in meters, from the recorded samples.
    pub fn path_lengths(&self) -> Vec<f64> {
        let n = self.miss_distance.len();
        let mut out = vec![0.0; n];
        let mut last: Vec<Option<PursuerState>> = vec![None; n];
        for rec in &self.records {
            if let Some(prev) = last[rec.index] {
                out[rec.index] += (rec.state.x - prev.x).hypot(rec.state.y - prev.y);
            }
            last[rec.index] = Some(rec.state);
        }
        out.iter().map(|l| l * self.speed).collect()
    }
}

/// Closest point to the origin on the segment `a → b`, as `(distance, fraction)`.
fn closest_on_segment(a: &PursuerState, b: &PursuerState) -> (f64, f64) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let f = if len2 > 0.0 {
        (-(a.x * dx + a.y * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((a.x + f * dx).hypot(a.y + f * dy), f)
}

/// Nondimensional range treated as a direct hit.
const CAPTURE_RANGE: f64 = 1e-9;

/// Runs the guidance loop from `s0` until every pursuer has passed its
/// closest approach or the time cap is reached.
pub fn run_closed_loop(s0: &CombinedState, policy: &GuidancePolicy, sim: &SimConfig) -> Result<SimResult> {
    let cfg = &policy.cfg;
    cfg.validate()?;
    sim.validate()?;
    s0.validate(cfg)?;
    let n = s0.len();
    let target = TargetState::origin();
    let switch = cfg.switch_radius_nd();
    let dt = sim.dt;
    // Open-loop replays sample the reference at mid-step.
    let sample_offset = if policy.kind == PolicyKind::OracleOpenLoop {
        0.5 * dt
    } else {
        0.0
    };

    let mut state = s0.clone();
    let mut prev: Vec<Option<PursuerState>> = vec![None; n];
    let mut active = vec![true; n];
    let mut miss = vec![f64::NAN; n];
    let mut t_hit = vec![f64::NAN; n];
    let mut heading_hit = vec![f64::NAN; n];
    let mut switch_times = vec![None; n];
    let mut last_g: Vec<Option<f64>> = vec![None; n];
    let mut effort = 0.0;
    let mut records = Vec::new();
    let mut t = 0.0;
    let mut steps = 0usize;
    let max_steps = (sim.time_cap / dt).ceil() as usize;
    let mut time_cap_exceeded = false;

    while active.iter().any(|&a| a) {
        if steps >= max_steps {
            time_cap_exceeded = true;
            for i in (0..n).filter(|&i| active[i]) {
                miss[i] = state.pursuers[i].range_to(&target) * cfg.speed;
                heading_hit[i] = state.pursuers[i].theta;
            }
            break;
        }

        let (mut u, modes) = policy.guidance_command(&state, t + sample_offset)?;
        for i in 0..n {
            if !active[i] {
                u[i] = 0.0;
                continue;
            }
            u[i] = u[i].clamp(-sim.command_limit, sim.command_limit);
            let r = polar_features(&state.pursuers[i], &target)?.r;
            if modes[i] == GuidanceMode::Pn && switch_times[i].is_none() {
                switch_times[i] = Some(t);
            }
            let g = 0.5 * u[i] * u[i];
            if let Some(g_prev) = last_g[i] {
                effort += 0.5 * dt * (g_prev + g);
            }
            last_g[i] = Some(g);
            records.push(StepRecord {
                t,
                index: i,
                state: state.pursuers[i],
                u: u[i],
                r,
                mode: modes[i],
            });
        }

        let next = step(&state, &u, dt);
        steps += 1;
        let t_next = steps as f64 * dt;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let cur = state.pursuers[i];
            let r_cur = cur.x.hypot(cur.y);
            let r_next = next.pursuers[i].x.hypot(next.pursuers[i].y);
            if r_next < CAPTURE_RANGE {
                miss[i] = r_next * cfg.speed;
                t_hit[i] = t_next;
                heading_hit[i] = next.pursuers[i].theta;
                active[i] = false;
            } else if r_next > r_cur && r_cur < switch {
                // Closest approach lies on one of the two segments around `cur`.
                let (d_after, f_after) = closest_on_segment(&cur, &next.pursuers[i]);
                let (mut d, mut tc, mut frac_from) = (d_after, t + f_after * dt, (cur, next.pursuers[i], f_after));
                if let Some(p) = prev[i] {
                    let (d_before, f_before) = closest_on_segment(&p, &cur);
                    if d_before < d {
                        d = d_before;
                        tc = t - dt + f_before * dt;
                        frac_from = (p, cur, f_before);
                    }
                }
                let (a, b, f) = frac_from;
                miss[i] = d * cfg.speed;
                t_hit[i] = tc;
                heading_hit[i] = a.theta + f * (b.theta - a.theta);
                active[i] = false;
            } else {
                prev[i] = Some(cur);
                state.pursuers[i] = next.pursuers[i];
            }
        }
        t = t_next;
    }

    let relative_angle_error = heading_hit
        .windows(2)
        .map(|w| wrap_angle(w[1] - w[0] - cfg.delta).abs())
        .collect();
    Ok(SimResult {
        records,
        miss_distance: miss,
        intercept_time: t_hit,
        intercept_heading: heading_hit,
        relative_angle_error,
        control_effort: effort * cfg.speed * cfg.speed,
        switch_times,
        time_cap_exceeded,
        speed: cfg.speed,
    })
}

/// Per-step CSV `t,i,x,y,theta,u,r,mode` in physical units (s, m, rad, rad/s).
pub fn write_step_csv<W: Write>(r: &SimResult, mut w: W) -> io::Result<()> {
    writeln!(w, "t,i,x,y,theta,u,r,mode")?;
    for rec in &r.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            rec.t,
            rec.index,
            rec.state.x * r.speed,
            rec.state.y * r.speed,
            rec.state.theta,
            rec.u,
            rec.r * r.speed,
            rec.mode
        )?;
    }
    Ok(())
}

/// Summary CSV: one row per pursuer followed by an engagement row.
pub fn write_summary_csv<W: Write>(r: &SimResult, mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "row,miss_m,intercept_time_s,intercept_heading_deg,switch_time_s,rel_angle_err_deg,effort_m2s3,time_cap_exceeded"
    )?;
    for i in 0..r.miss_distance.len() {
        let switch = r.switch_times[i].map(|t| t.to_string()).unwrap_or_default();
        writeln!(
            w,
            "pursuer{i},{},{},{},{switch},,,",
            r.miss_distance[i],
            r.intercept_time[i],
            r.intercept_heading[i].to_degrees()
        )?;
    }
    let max_err = r.relative_angle_error.iter().cloned().fold(0.0, f64::max);
    writeln!(
        w,
        "engagement,,,,,{},{},{}",
        max_err.to_degrees(),
        r.control_effort,
        r.time_cap_exceeded
    )?;
    Ok(())
}

/// Human-readable summary of a run.
pub fn metrics_report(r: &SimResult) -> String {
    let mut s = String::new();
    for i in 0..r.miss_distance.len() {
        let switch = r.switch_times[i]
            .map(|t| format!("{t:.3} s"))
            .unwrap_or_else(|| "never".into());
        let _ = writeln!(
            s,
            "pursuer {i}: miss {:.3} m, intercept {:.3} s, heading {:.3} deg, PN from {switch}",
            r.miss_distance[i],
            r.intercept_time[i],
            r.intercept_heading[i].to_degrees()
        );
    }
    for (k, e) in r.relative_angle_error.iter().enumerate() {
        let _ = writeln!(s, "relative angle error {k}-{}: {:.4} deg", k + 1, e.to_degrees());
    }
    let _ = writeln!(s, "control effort: {:.6e} m^2/s^3", r.control_effort);
    if r.time_cap_exceeded {
        let _ = writeln!(s, "time cap exceeded");
    }
    s
}
