//! Necessary conditions of the cooperative intercept problem.
//!
//! With the cost multiplier normalized to `p⁰ = -1`, maximizing the
//! Hamiltonian gives the turn-rate law `u_i = p_θi / (1 - κ)`. Substituting it
//! into the state and costate equations yields a closed `6N`-dimensional
//! vector field whose solutions are the candidate optimal trajectories.

use std::io::{self, Write};

use crate::engagement::{pursuer_rates, PursuerState};
use crate::error::{GuidanceError, Result};
use crate::ode::{hermite, Dopri5};

/// Number of scalars stored per pursuer in the flat layout `[x, y, θ, p_x, p_y, p_θ]`.
pub const STRIDE: usize = 6;

/// Default integrator tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Costate {
    pub px: f64,
    pub py: f64,
    pub ptheta: f64,
}

impl Costate {
    pub fn new(px: f64, py: f64, ptheta: f64) -> Self {
        Self { px, py, ptheta }
    }

    pub fn scaled(self, s: f64) -> Self {
        Self::new(self.px * s, self.py * s, self.ptheta * s)
    }
}

/// States and costates of every pursuer: the integration vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub states: Vec<PursuerState>,
    pub costates: Vec<Costate>,
}

impl ExtendedState {
    pub fn new(states: Vec<PursuerState>, costates: Vec<Costate>) -> Result<Self> {
        if states.len() != costates.len() {
            return Err(GuidanceError::DimensionMismatch {
                expected: states.len(),
                actual: costates.len(),
            });
        }
        Ok(Self { states, costates })
    }

    pub fn n_pursuers(&self) -> usize {
        self.states.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(STRIDE * self.states.len());
        for (s, c) in self.states.iter().zip(&self.costates) {
            out.extend_from_slice(&[s.x, s.y, s.theta, c.px, c.py, c.ptheta]);
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.is_empty() || !v.len().is_multiple_of(STRIDE) {
            return Err(GuidanceError::DimensionMismatch {
                expected: STRIDE * (v.len() / STRIDE).max(1),
                actual: v.len(),
            });
        }
        let (states, costates) = v
            .chunks_exact(STRIDE)
            .map(|c| (PursuerState::new(c[0], c[1], c[2]), Costate::new(c[3], c[4], c[5])))
            .unzip();
        Ok(Self { states, costates })
    }

    /// Optimal commands implied by the costates.
    pub fn optimal_commands(&self, kappa: f64) -> Result<Vec<f64>> {
        self.costates.iter().map(|c| optimal_control(c.ptheta, kappa)).collect()
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(())
    } else {
        Err(GuidanceError::InvalidKappa(kappa))
    }
}

/// Turn rate maximizing the Hamiltonian: `p_θ / (1 - κ)`.
pub fn optimal_control(p_theta: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(p_theta / (1.0 - kappa))
}

/// Hamiltonian with `p⁰ = -1`.
pub fn hamiltonian(e: &ExtendedState, u: &[f64], kappa: f64) -> Result<f64> {
    if u.len() != e.n_pursuers() {
        return Err(GuidanceError::DimensionMismatch {
            expected: e.n_pursuers(),
            actual: u.len(),
        });
    }
    let mut h = -kappa;
    for ((s, c), &ui) in e.states.iter().zip(&e.costates).zip(u) {
        let (sin, cos) = s.theta.sin_cos();
        h += c.px * cos + c.py * sin + c.ptheta * ui - 0.5 * (1.0 - kappa) * ui * ui;
    }
    Ok(h)
}

/// Hamiltonian evaluated at the optimal commands.
pub fn optimal_hamiltonian(e: &ExtendedState, kappa: f64) -> Result<f64> {
    let u = e.optimal_commands(kappa)?;
    hamiltonian(e, &u, kappa)
}

/// Costate rates `(0, 0, p_x sin θ - p_y cos θ)`.
pub fn costate_rates(s: &PursuerState, c: &Costate) -> [f64; 3] {
    let (sin, cos) = s.theta.sin_cos();
    [0.0, 0.0, c.px * sin - c.py * cos]
}

/// Writes the closed-loop extremal vector field into `dy` (flat layout).
///
/// `kappa` is assumed valid; use [`extended_rates`] for a checked version.
pub fn extended_rates_flat(y: &[f64], kappa: f64, dy: &mut [f64]) {
    let gain = 1.0 / (1.0 - kappa);
    for (yi, di) in y.chunks_exact(STRIDE).zip(dy.chunks_exact_mut(STRIDE)) {
        let (sin, cos) = yi[2].sin_cos();
        di[0] = cos;
        di[1] = sin;
        di[2] = yi[5] * gain;
        di[3] = 0.0;
        di[4] = 0.0;
        di[5] = yi[3] * sin - yi[4] * cos;
    }
}

/// Time derivative of the extended state with the optimal control substituted.
pub fn extended_rates(e: &ExtendedState, kappa: f64) -> Result<Vec<f64>> {
    check_kappa(kappa)?;
    let mut out = Vec::with_capacity(STRIDE * e.n_pursuers());
    for (s, c) in e.states.iter().zip(&e.costates) {
        let u = optimal_control(c.ptheta, kappa)?;
        out.extend_from_slice(&pursuer_rates(s, u));
        out.extend_from_slice(&costate_rates(s, c));
    }
    Ok(out)
}

/// `Σ p_θi`; zero when the terminal transversality condition holds.
pub fn transversality_residual(e: &ExtendedState) -> f64 {
    e.costates.iter().map(|c| c.ptheta).sum()
}

/// Running cost `κ + (1 - κ)/2 Σ u_i²`.
pub fn running_cost(u: &[f64], kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(kappa + 0.5 * (1.0 - kappa) * u.iter().map(|v| v * v).sum::<f64>())
}

/// An integrated extremal, stored in ascending time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    nodes: Vec<ExtendedState>,
    kappa: f64,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, nodes: Vec<ExtendedState>, kappa: f64) -> Result<Self> {
        if times.len() != nodes.len() || times.len() < 2 {
            return Err(GuidanceError::InvalidConfig(format!(
                "trajectory needs >= 2 matching nodes, got {} times and {} nodes",
                times.len(),
                nodes.len()
            )));
        }
        if !times.windows(2).all(|w| w[1] > w[0]) {
            return Err(GuidanceError::InvalidConfig(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        check_kappa(kappa)?;
        Ok(Self { times, nodes, kappa })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes(&self) -> &[ExtendedState] {
        &self.nodes
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &ExtendedState {
        &self.nodes[0]
    }

    pub fn terminal(&self) -> &ExtendedState {
        &self.nodes[self.nodes.len() - 1]
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Cubic Hermite interpolation of the extended state at time `t`.
    ///
    /// Times outside the stored span are clamped to the nearest end.
    pub fn sample_at(&self, t: f64) -> ExtendedState {
        if t <= self.start_time() {
            return self.initial().clone();
        }
        if t >= self.end_time() {
            return self.terminal().clone();
        }
        let k = self.times.partition_point(|&ti| ti <= t).min(self.len() - 1);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        if t == t0 {
            return self.nodes[k - 1].clone();
        }
        let y0 = self.nodes[k - 1].to_flat();
        let y1 = self.nodes[k].to_flat();
        let mut f0 = vec![0.0; y0.len()];
        let mut f1 = vec![0.0; y1.len()];
        extended_rates_flat(&y0, self.kappa, &mut f0);
        extended_rates_flat(&y1, self.kappa, &mut f1);
        ExtendedState::from_flat(&hermite(t0, &y0, &f0, t1, &y1, &f1, t)).expect("interpolated state keeps its layout")
    }

    /// Optimal commands at node `k`.
    pub fn commands_at(&self, k: usize) -> Vec<f64> {
        let gain = 1.0 / (1.0 - self.kappa);
        self.nodes[k].costates.iter().map(|c| c.ptheta * gain).collect()
    }

    /// `½ ∫ Σ u_i² dt` in nondimensional units.
    ///
    /// Trapezoidal rule with the Hermite end correction; the rate of the
    /// integrand is exact at every node.
    pub fn effort_nd(&self) -> f64 {
        let gain = 1.0 / (1.0 - self.kappa);
        let point = |e: &ExtendedState| {
            let mut g = 0.0;
            let mut dg = 0.0;
            for (s, c) in e.states.iter().zip(&e.costates) {
                let u = c.ptheta * gain;
                g += 0.5 * u * u;
                dg += u * costate_rates(s, c)[2] * gain;
            }
            (g, dg)
        };
        let mut total = 0.0;
        let mut prev = point(&self.nodes[0]);
        for k in 1..self.len() {
            let h = self.times[k] - self.times[k - 1];
            let cur = point(&self.nodes[k]);
            total += 0.5 * h * (prev.0 + cur.0) + h * h / 12.0 * (prev.1 - cur.1);
            prev = cur;
        }
        total
    }

    /// Cost `J = κ t_f + (1 - κ) · effort` over the stored span.
    pub fn cost(&self) -> f64 {
        self.kappa * self.duration() + (1.0 - self.kappa) * self.effort_nd()
    }

    /// Total path length flown by pursuer `i`.
    pub fn path_length(&self, i: usize) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| {
                let (a, b) = (&w[0].states[i], &w[1].states[i]);
                (b.x - a.x).hypot(b.y - a.y)
            })
            .sum()
    }

    /// Max |H| over all nodes.
    pub fn max_abs_hamiltonian(&self) -> f64 {
        self.nodes
            .iter()
            .map(|e| optimal_hamiltonian(e, self.kappa).map(f64::abs).unwrap_or(f64::NAN))
            .fold(0.0, f64::max)
    }

    /// Returns the same trajectory with time shifted by `offset`.
    pub fn shifted(mut self, offset: f64) -> Self {
        for t in &mut self.times {
            *t += offset;
        }
        self
    }

    /// Writes the CSV export `t,i,x,y,theta,px,py,ptheta,u,H`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,i,x,y,theta,px,py,ptheta,u,H")?;
        for (t, e) in self.times.iter().zip(&self.nodes) {
            let h = optimal_hamiltonian(e, self.kappa).unwrap_or(f64::NAN);
            for (i, (s, c)) in e.states.iter().zip(&e.costates).enumerate() {
                let u = c.ptheta / (1.0 - self.kappa);
                writeln!(
                    w,
                    "{t},{i},{},{},{},{},{},{},{u},{h}",
                    s.x, s.y, s.theta, c.px, c.py, c.ptheta
                )?;
            }
        }
        Ok(())
    }
}

/// Integrates the extremal vector field from `t0` to `t1` (either direction).
///
/// Every accepted step becomes a node; the result is in ascending time order.
pub fn integrate(e0: &ExtendedState, t0: f64, t1: f64, kappa: f64, tol: f64) -> Result<Trajectory> {
    check_kappa(kappa)?;
    check_span(t0, t1, tol)?;
    let mut times = Vec::new();
    let mut nodes = Vec::new();
    Dopri5::with_tol(tol).solve(
        |_, y, dy| extended_rates_flat(y, kappa, dy),
        t0,
        &e0.to_flat(),
        t1,
        |t, y, _| {
            times.push(t);
            nodes.push(ExtendedState::from_flat(y).expect("layout preserved"));
        },
    )?;
    if t1 < t0 {
        times.reverse();
        nodes.reverse();
    }
    Trajectory::new(times, nodes, kappa)
}

/// Like [`integrate`] but only returns the final extended state.
pub fn propagate(e0: &ExtendedState, t0: f64, t1: f64, kappa: f64, tol: f64) -> Result<ExtendedState> {
    check_kappa(kappa)?;
    check_span(t0, t1, tol)?;
    let y = Dopri5::with_tol(tol).solve(
        |_, y, dy| extended_rates_flat(y, kappa, dy),
        t0,
        &e0.to_flat(),
        t1,
        |_, _, _| {},
    )?;
    ExtendedState::from_flat(&y)
}

fn check_span(t0: f64, t1: f64, tol: f64) -> Result<()> {
    if !(t0.is_finite() && t1.is_finite()) || t0 == t1 {
        return Err(GuidanceError::InvalidConfig(format!(
            "integration span [{t0}, {t1}] is empty or not finite"
        )));
    }
    if !(tol > 0.0) {
        return Err(GuidanceError::InvalidConfig(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn single(theta: f64, c: Costate) -> ExtendedState {
        ExtendedState::new(vec![PursuerState::new(0.0, 0.0, theta)], vec![c]).unwrap()
    }

    fn pair(a: (f64, f64, f64, f64, f64, f64), b: (f64, f64, f64, f64, f64, f64)) -> ExtendedState {
        ExtendedState::from_flat(&[a.0, a.1, a.2, a.3, a.4, a.5, b.0, b.1, b.2, b.3, b.4, b.5]).unwrap()
    }

    #[test]
    fn optimal_control_examples() {
        assert_eq!(optimal_control(0.0, 0.01).unwrap(), 0.0);
        assert!((optimal_control(0.99, 0.01).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(optimal_control(1.0, 0.5).unwrap(), 2.0);
        assert!(matches!(optimal_control(1.0, 0.0), Err(GuidanceError::InvalidKappa(_))));
        assert!(optimal_control(1.0, 1.0).is_err());
    }

    #[test]
    fn hamiltonian_examples() {
        let e = pair((1.0, 2.0, 0.3, 0.0, 0.0, 0.0), (-1.0, 0.5, 2.0, 0.0, 0.0, 0.0));
        assert!((hamiltonian(&e, &[0.0, 0.0], 0.01).unwrap() + 0.01).abs() < 1e-15);

        let e = single(0.0, Costate::new(0.01, 0.0, 0.0));
        assert!(hamiltonian(&e, &[0.0], 0.01).unwrap().abs() < 1e-15);

        let e = single(0.7, Costate::new(0.0, 0.0, 1.0));
        let u = optimal_control(1.0, 0.5).unwrap();
        assert!((hamiltonian(&e, &[u], 0.5).unwrap() - 0.5).abs() < 1e-15);

        assert!(matches!(
            hamiltonian(&e, &[1.0, 2.0], 0.5),
            Err(GuidanceError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn costate_rate_examples() {
        assert_eq!(
            costate_rates(&PursuerState::new(3.0, 1.0, 0.4), &Costate::default()),
            [0.0; 3]
        );
        let r = costate_rates(&PursuerState::new(0.0, 0.0, 0.0), &Costate::new(1.0, 0.0, 0.2));
        assert_eq!(r[2], 0.0);
        let r = costate_rates(&PursuerState::new(0.0, 0.0, FRAC_PI_2), &Costate::new(1.0, 0.0, 0.2));
        assert!((r[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn extended_rate_examples() {
        let e = pair((0.0, 0.0, 0.4, 0.0, 0.0, 0.0), (1.0, 1.0, -1.2, 0.0, 0.0, 0.0));
        let d = extended_rates(&e, 0.01).unwrap();
        assert_eq!(&d[0..6], &[0.4f64.cos(), 0.4f64.sin(), 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&d[6..12], &[(-1.2f64).cos(), (-1.2f64).sin(), 0.0, 0.0, 0.0, 0.0]);

        let d = extended_rates(&single(0.0, Costate::new(0.0, 0.0, 0.5)), 0.5).unwrap();
        assert_eq!(d[2], 1.0);
        assert!(extended_rates(&e, 1.5).is_err());

        let mut flat = vec![0.0; 12];
        extended_rates_flat(&e.to_flat(), 0.01, &mut flat);
        assert_eq!(flat, extended_rates(&e, 0.01).unwrap());
    }

    #[test]
    fn transversality_examples() {
        let mk = |p: &[f64]| ExtendedState {
            states: vec![PursuerState::new(0.0, 0.0, 0.0); p.len()],
            costates: p.iter().map(|&v| Costate::new(0.0, 0.0, v)).collect(),
        };
        assert_eq!(transversality_residual(&mk(&[0.3, -0.3])), 0.0);
        assert!(transversality_residual(&mk(&[0.1, 0.2, -0.3])).abs() < 1e-16);
        assert!((transversality_residual(&mk(&[0.3, 0.3])) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn running_cost_examples() {
        assert_eq!(running_cost(&[0.0, 0.0], 0.01).unwrap(), 0.01);
        assert!((running_cost(&[1.0, 1.0], 0.01).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(running_cost(&[2.0, 0.0], 0.5).unwrap(), 1.5);
        assert!(running_cost(&[1.0], -0.1).is_err());
    }

    #[test]
    fn straight_line_motion() {
        let e = single(0.0, Costate::default());
        let traj = integrate(&e, 0.0, 1.0, 0.01, 1e-12).unwrap();
        let end = traj.terminal().states[0];
        assert!((end.x - 1.0).abs() < 1e-14 && end.y.abs() < 1e-14 && end.theta == 0.0);
        assert_eq!(traj.start_time(), 0.0);
        assert_eq!(traj.end_time(), 1.0);
    }

    #[test]
    fn backward_then_forward_round_trip() {
        let e0 = pair((0.3, -0.2, 0.5, 0.2, -0.1, 0.05), (1.0, 0.4, -2.0, -0.05, 0.3, -0.02));
        let back = propagate(&e0, 0.0, -3.0, 0.01, 1e-12).unwrap();
        let again = propagate(&back, -3.0, 0.0, 0.01, 1e-12).unwrap();
        for (a, b) in e0.to_flat().iter().zip(again.to_flat()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let traj = integrate(&e0, 0.0, -3.0, 0.01, 1e-12).unwrap();
        assert_eq!(traj.start_time(), -3.0);
        assert_eq!(traj.terminal(), &e0);
    }

    #[test]
    fn costate_rate_matches_hamiltonian_gradient() {
        // -∂H/∂θ by central differences near θ = π/2
        let c = Costate::new(-1.0, 0.0, 0.0);
        for theta in [FRAC_PI_2 - 1e-3, FRAC_PI_2, FRAC_PI_2 + 2e-3, 0.4, -2.0] {
            let h = |th: f64| hamiltonian(&single(th, c), &[0.0], 0.01).unwrap();
            let step = 1e-6;
            let fd = -(h(theta + step) - h(theta - step)) / (2.0 * step);
            let exact = costate_rates(&PursuerState::new(0.0, 0.0, theta), &c)[2];
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-3), "{fd} vs {exact}");
        }
    }

    #[test]
    fn hamiltonian_is_conserved() {
        let e0 = pair((0.0, 0.0, 0.2, 0.3, -0.4, 0.15), (0.0, 0.0, 0.37, -0.2, 0.1, -0.15));
        let traj = integrate(&e0, 0.0, -6.0, 0.01, 1e-12).unwrap();
        let h0 = optimal_hamiltonian(traj.terminal(), 0.01).unwrap();
        for e in traj.nodes() {
            let h = optimal_hamiltonian(e, 0.01).unwrap();
            assert!((h - h0).abs() < 1e-9);
            for (c, c0) in e.costates.iter().zip(&e0.costates) {
                assert_eq!((c.px, c.py), (c0.px, c0.py));
            }
        }
    }

    #[test]
    fn hermite_sampling_hits_nodes_and_interpolates() {
        let e0 = pair((0.0, 0.0, 0.2, 0.3, -0.4, 0.15), (0.0, 0.0, 0.37, -0.2, 0.1, -0.15));
        let traj = integrate(&e0, 0.0, 2.0, 0.01, 1e-12).unwrap();
        assert_eq!(&traj.sample_at(traj.times()[3]), &traj.nodes()[3]);
        let mid = 0.5 * (traj.times()[2] + traj.times()[3]);
        let direct = propagate(&e0, 0.0, mid, 0.01, 1e-13).unwrap();
        for (a, b) in traj.sample_at(mid).to_flat().iter().zip(direct.to_flat()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn effort_of_constant_turn() {
        // p_x = p_y = 0 keeps p_θ constant, so u is constant
        let e0 = single(0.0, Costate::new(0.0, 0.0, 0.99));
        let traj = integrate(&e0, 0.0, 2.0, 0.01, 1e-12).unwrap();
        assert!((traj.effort_nd() - 1.0).abs() < 1e-12);
        assert!((traj.cost() - (0.02 + 0.99)).abs() < 1e-12);
        assert!((traj.path_length(0) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn csv_export_layout() {
        let traj = integrate(&single(0.0, Costate::default()), 0.0, 1.0, 0.01, 1e-8).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,i,x,y,theta,px,py,ptheta,u,H"));
        assert_eq!(lines.count(), traj.len());
    }

    #[test]
    fn rejects_degenerate_spans() {
        let e = single(0.0, Costate::default());
        assert!(integrate(&e, 1.0, 1.0, 0.01, 1e-10).is_err());
        assert!(integrate(&e, 0.0, 1.0, 0.01, 0.0).is_err());
        assert!(Trajectory::new(vec![0.0], vec![e.clone()], 0.01).is_err());
        assert!(Trajectory::new(vec![1.0, 0.0], vec![e.clone(), e], 0.01).is_err());
    }

    fn arb_extended() -> impl Strategy<Value = ExtendedState> {
        prop::collection::vec(-2.0..2.0f64, 12).prop_map(|v| ExtendedState::from_flat(&v).unwrap())
    }

    fn rotate_extended(e: &ExtendedState, phi: f64) -> ExtendedState {
        let (sin, cos) = phi.sin_cos();
        ExtendedState {
            states: e
                .states
                .iter()
                .map(|s| PursuerState::new(cos * s.x - sin * s.y, sin * s.x + cos * s.y, s.theta + phi))
                .collect(),
            costates: e
                .costates
                .iter()
                .map(|c| Costate::new(cos * c.px - sin * c.py, sin * c.px + cos * c.py, c.ptheta))
                .collect(),
        }
    }

    proptest! {
        #[test]
        fn optimal_command_maximizes_hamiltonian(e in arb_extended(), kappa in 0.01..0.99f64) {
            let u = e.optimal_commands(kappa).unwrap();
            let h_opt = hamiltonian(&e, &u, kappa).unwrap();
            for i in 0..u.len() {
                for d in [-0.1, 0.1] {
                    let mut v = u.clone();
                    v[i] += d;
                    prop_assert!(hamiltonian(&e, &v, kappa).unwrap() < h_opt);
                }
            }
        }

        #[test]
        fn rotation_leaves_pmp_quantities_unchanged(e in arb_extended(), phi in -PI..PI) {
            let r = rotate_extended(&e, phi);
            let kappa = 0.01;
            let d0 = extended_rates(&e, kappa).unwrap();
            let d1 = extended_rates(&r, kappa).unwrap();
            for i in 0..2 {
                prop_assert!((d0[6 * i + 2] - d1[6 * i + 2]).abs() < 1e-12);
                prop_assert!((d0[6 * i + 5] - d1[6 * i + 5]).abs() < 1e-12);
            }
            let h0 = optimal_hamiltonian(&e, kappa).unwrap();
            let h1 = optimal_hamiltonian(&r, kappa).unwrap();
            prop_assert!((h0 - h1).abs() < 1e-12);
        }

        #[test]
        fn flat_layout_round_trip(e in arb_extended()) {
            prop_assert_eq!(ExtendedState::from_flat(&e.to_flat()).unwrap(), e);
        }
    }
}
