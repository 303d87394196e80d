//! Dormand–Prince 5(4) integrator with adaptive step control.
//!
//! Works on flat `f64` state vectors and integrates forward or backward in
//! time. Accepted steps are reported to an observer so callers decide what to
//! store.

use crate::error::{GuidanceError, Result};

// Butcher tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Step-size controller settings.
#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    pub safety: f64,
    /// Upper bound on |h|; `f64::INFINITY` disables it.
    pub h_max: f64,
}

impl Dopri5 {
    /// Absolute and relative tolerance both set to `tol`.
    pub fn with_tol(tol: f64) -> Self {
        Self {
            atol: tol,
            rtol: tol,
            max_steps: 1_000_000,
            safety: 0.9,
            h_max: f64::INFINITY,
        }
    }

    /// Integrates `f` from `(t0, y0)` to `t1` and returns the final state.
    ///
    /// `observer(t, y, dydt)` sees the initial point and every accepted step.
    pub fn solve<F, O>(&self, mut f: F, t0: f64, y0: &[f64], t1: f64, mut observer: O) -> Result<Vec<f64>>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
        O: FnMut(f64, &[f64], &[f64]),
    {
        let n = y0.len();
        let mut y = y0.to_vec();
        let mut t = t0;
        let dir = if t1 >= t0 { 1.0 } else { -1.0 };
        let span = (t1 - t0).abs();

        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut stage = vec![0.0; n];
        let mut y_new = vec![0.0; n];

        f(t, &y, &mut k1);
        observer(t, &y, &k1);
        if span == 0.0 {
            return Ok(y);
        }

        let mut h = self.initial_step(&mut f, t, &y, &k1, dir, span, &mut stage, &mut k2);
        let mut steps = 0usize;

        while (t1 - t) * dir > 0.0 {
            if steps >= self.max_steps {
                return Err(GuidanceError::StepFailure { t, h });
            }
            steps += 1;

            let remaining = (t1 - t).abs();
            let mut last = false;
            if h.abs() >= remaining {
                h = dir * remaining;
                last = true;
            }
            let h_min = 16.0 * f64::EPSILON * t.abs().max(1.0);
            if h.abs() < h_min {
                return Err(GuidanceError::StepFailure { t, h });
            }

            for i in 0..n {
                stage[i] = y[i] + h * A21 * k1[i];
            }
            f(t + C2 * h, &stage, &mut k2);
            for i in 0..n {
                stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * h, &stage, &mut k3);
            for i in 0..n {
                stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * h, &stage, &mut k4);
            for i in 0..n {
                stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * h, &stage, &mut k5);
            for i in 0..n {
                stage[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let t_new = if last { t1 } else { t + h };
            f(t_new, &stage, &mut k6);
            for i in 0..n {
                y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            f(t_new, &y_new, &mut k7);

            let mut err_sq = 0.0;
            for i in 0..n {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let scale = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                err_sq += (e / scale).powi(2);
            }
            let err = (err_sq / n as f64).sqrt();
            if !err.is_finite() {
                h *= 0.2;
                continue;
            }

            let factor = if err == 0.0 {
                5.0
            } else {
                (self.safety * err.powf(-0.2)).clamp(0.2, 5.0)
            };

            if err <= 1.0 {
                t = t_new;
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut k1, &mut k7);
                observer(t, &y, &k1);
                h = dir * (h.abs() * factor).min(self.h_max);
            } else {
                h *= factor.min(1.0);
            }
        }
        Ok(y)
    }

    #[allow(clippy::too_many_arguments)]
    fn initial_step<F>(
        &self,
        f: &mut F,
        t: f64,
        y: &[f64],
        f0: &[f64],
        dir: f64,
        span: f64,
        probe: &mut [f64],
        f1: &mut [f64],
    ) -> f64
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len() as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..y.len() {
            let sc = self.atol + self.rtol * y[i].abs();
            d0 += (y[i] / sc).powi(2);
            d1 += (f0[i] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(span).min(self.h_max);

        for i in 0..y.len() {
            probe[i] = y[i] + dir * h0 * f0[i];
        }
        f(t + dir * h0, probe, f1);
        let mut d2 = 0.0;
        for i in 0..y.len() {
            let sc = self.atol + self.rtol * y[i].abs();
            d2 += ((f1[i] - f0[i]) / sc).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        dir * (100.0 * h0).min(h1).min(span).min(self.h_max)
    }
}

/// Cubic Hermite interpolation between two points with known derivatives.
pub fn hermite(t0: f64, y0: &[f64], f0: &[f64], t1: f64, y1: &[f64], f1: &[f64], t: f64) -> Vec<f64> {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    (0..y0.len())
        .map(|i| h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i])
        .collect()
}
