//! Planar engagement kinematics against a stationary target.
//!
//! Internally every length is divided by the pursuer speed, so pursuers fly at
//! unit speed and nondimensional time coincides with seconds.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{GuidanceError, Result};

/// Ranges below this (nondimensional) are treated as coincident with the target.
pub const COINCIDENCE_EPS: f64 = 1e-9;

/// Wraps an angle to `[-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Wraps an angle to the half-open interval `(-π, π]`.
pub fn wrap_angle_half_open(angle: f64) -> f64 {
    let wrapped = wrap_angle(angle);
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

/// Position and heading of one pursuer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PursuerState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PursuerState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    /// Returns a copy with the heading wrapped to `[-π, π]`.
    pub fn normalized(self) -> Self {
        Self {
            theta: wrap_angle(self.theta),
            ..self
        }
    }

    pub fn range_to(&self, target: &TargetState) -> f64 {
        (target.x - self.x).hypot(target.y - self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// State rates `(ẋ, ẏ, θ̇)` of a unit-speed pursuer commanded with turn rate `u`.
pub fn pursuer_rates(s: &PursuerState, u: f64) -> [f64; 3] {
    let (sin, cos) = s.theta.sin_cos();
    [cos, sin, u]
}

/// The ordered group of pursuers. Index `i` identifies a pursuer for the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedState {
    pub pursuers: Vec<PursuerState>,
}

impl CombinedState {
    pub fn new(pursuers: Vec<PursuerState>) -> Self {
        Self { pursuers }
    }

    pub fn len(&self) -> usize {
        self.pursuers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pursuers.is_empty()
    }

    /// Checks the group against the configured pursuer count.
    pub fn validate(&self, cfg: &EngagementConfig) -> Result<()> {
        if self.len() != cfg.n_pursuers {
            return Err(GuidanceError::DimensionMismatch {
                expected: cfg.n_pursuers,
                actual: self.len(),
            });
        }
        if let Some(i) = self.pursuers.iter().position(|p| !p.is_finite()) {
            return Err(GuidanceError::InvalidConfig(format!(
                "pursuer {i} has a non-finite state"
            )));
        }
        Ok(())
    }
}

/// Target kinematic state. Only a stationary target is supported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState {
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub heading: f64,
    pub accel: f64,
}

impl TargetState {
    pub fn stationary(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            speed: 0.0,
            heading: 0.0,
            accel: 0.0,
        }
    }

    pub fn origin() -> Self {
        Self::stationary(0.0, 0.0)
    }
}

impl Default for TargetState {
    fn default() -> Self {
        Self::origin()
    }
}

/// Range, range rate and line-of-sight quantities of one pursuer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarFeatures {
    pub r: f64,
    pub r_dot: f64,
    pub lambda_dot: f64,
    pub lambda: f64,
}

/// Polar description of a unit-speed pursuer relative to a stationary target.
///
/// The line-of-sight angle is `atan2(y_T - y, x_T - x)` in the inertial frame.
pub fn polar_features(s: &PursuerState, target: &TargetState) -> Result<PolarFeatures> {
    polar_features_indexed(s, target, 0)
}

fn polar_features_indexed(s: &PursuerState, target: &TargetState, index: usize) -> Result<PolarFeatures> {
    let dx = target.x - s.x;
    let dy = target.y - s.y;
    let r = dx.hypot(dy);
    if !(r >= COINCIDENCE_EPS) {
        return Err(GuidanceError::CoincidentTarget { index, range: r });
    }
    let lambda = dy.atan2(dx);
    let (sin, cos) = (s.theta - lambda).sin_cos();
    Ok(PolarFeatures {
        r,
        r_dot: -cos,
        lambda_dot: -sin / r,
        lambda,
    })
}

/// Network input layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// `(r, ṙ, λ̇)` per pursuer.
    Paper,
    /// Per-pursuer triples followed by `λ_2 - λ_1` wrapped to `(-π, π]`.
    #[default]
    Augmented,
}

impl FeatureMode {
    pub fn feature_dim(self, n_pursuers: usize) -> usize {
        match self {
            FeatureMode::Paper => 3 * n_pursuers,
            FeatureMode::Augmented => 3 * n_pursuers + 1,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Paper => "paper",
            FeatureMode::Augmented => "augmented",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = GuidanceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(FeatureMode::Paper),
            "augmented" => Ok(FeatureMode::Augmented),
            other => Err(GuidanceError::InvalidConfig(format!("unknown feature mode `{other}`"))),
        }
    }
}

/// Polar features of every pursuer against the stationary target at the origin.
pub fn all_polar_features(c: &CombinedState) -> Result<Vec<PolarFeatures>> {
    let target = TargetState::origin();
    c.pursuers
        .iter()
        .enumerate()
        .map(|(i, p)| polar_features_indexed(p, &target, i))
        .collect()
}

/// Assembles the network input vector from per-pursuer polar features.
pub fn assemble_features(polar: &[PolarFeatures], mode: FeatureMode) -> Vec<f64> {
    let mut out = Vec::with_capacity(mode.feature_dim(polar.len()));
    for f in polar {
        out.extend_from_slice(&[f.r, f.r_dot, f.lambda_dot]);
    }
    if mode == FeatureMode::Augmented && polar.len() >= 2 {
        out.push(wrap_angle_half_open(polar[1].lambda - polar[0].lambda));
    }
    out
}

/// Network input vector for a combined state (target at the origin).
pub fn feature_vector(c: &CombinedState, mode: FeatureMode) -> Result<Vec<f64>> {
    Ok(assemble_features(&all_polar_features(c)?, mode))
}

/// Engagement parameters shared by every module.
#[derive(Debug, Clone, PartialEq)]
pub struct EngagementConfig {
    pub n_pursuers: usize,
    /// Weight between flight time and control effort in the running cost.
    pub kappa: f64,
    /// Prescribed heading gap between consecutive pursuers at intercept (rad).
    pub delta: f64,
    /// Physical pursuer speed (m/s).
    pub speed: f64,
    /// Physical range at which a pursuer hands over to PN (m).
    pub switch_radius: f64,
    pub pn_gain: f64,
    pub feature_mode: FeatureMode,
}

impl Default for EngagementConfig {
    fn default() -> Self {
        Self {
            n_pursuers: 2,
            kappa: 0.01,
            delta: 10f64.to_radians(),
            speed: 1000.0,
            switch_radius: 200.0,
            pn_gain: 2.0,
            feature_mode: FeatureMode::Augmented,
        }
    }
}

impl EngagementConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GuidanceError::InvalidConfig(msg));
        if self.n_pursuers < 2 {
            return bad(format!("need at least 2 pursuers, got {}", self.n_pursuers));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(GuidanceError::InvalidKappa(self.kappa));
        }
        if !self.delta.is_finite() {
            return bad("delta must be finite".into());
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return bad(format!("speed must be positive, got {}", self.speed));
        }
        if !(self.switch_radius > 0.0) {
            return bad(format!("switch radius must be positive, got {}", self.switch_radius));
        }
        if !self.pn_gain.is_finite() {
            return bad("pn gain must be finite".into());
        }
        Ok(())
    }

    /// PN hand-over range in nondimensional units.
    pub fn switch_radius_nd(&self) -> f64 {
        self.switch_radius / self.speed
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_mode.feature_dim(self.n_pursuers)
    }
}

/// Proportional navigation turn rate `u = N λ̇` for a unit-speed pursuer.
pub fn pn_command(f: &PolarFeatures, cfg: &EngagementConfig) -> Result<f64> {
    if !(f.r >= COINCIDENCE_EPS) {
        return Err(GuidanceError::CoincidentTarget { index: 0, range: f.r });
    }
    Ok(cfg.pn_gain * f.lambda_dot)
}

/// Rotates every pursuer about the origin by `phi`.
pub fn rotate(c: &CombinedState, phi: f64) -> CombinedState {
    let (sin, cos) = phi.sin_cos();
    CombinedState {
        pursuers: c
            .pursuers
            .iter()
            .map(|p| PursuerState {
                x: cos * p.x - sin * p.y,
                y: sin * p.x + cos * p.y,
                theta: wrap_angle(p.theta + phi),
            })
            .collect(),
    }
}

/// Converts a physical position (m) and heading (rad) to internal units.
pub fn nondimensionalize(x_m: f64, y_m: f64, heading: f64, cfg: &EngagementConfig) -> PursuerState {
    PursuerState {
        x: x_m / cfg.speed,
        y: y_m / cfg.speed,
        theta: heading,
    }
}

/// Inverse of [`nondimensionalize`]: returns `(x_m, y_m, heading)`.
pub fn dimensionalize(s: &PursuerState, cfg: &EngagementConfig) -> (f64, f64, f64) {
    (s.x * cfg.speed, s.y * cfg.speed, s.theta)
}

/// Lateral acceleration (m/s²) corresponding to a nondimensional turn rate.
pub fn lateral_acceleration(u: f64, cfg: &EngagementConfig) -> f64 {
    cfg.speed * u
}
