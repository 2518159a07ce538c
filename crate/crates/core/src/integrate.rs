//! Dormand–Prince 5(4) with PI step-size control for the Volterra flow.
//!
//! The stepper works in u_j = ln a_j, where the flow reads
//! u̇_j = a_{j+1} − a_{j−1}. The right-hand side telescopes, so Σ_j u_j (the
//! log of Π a_j) is conserved to roundoff by any Runge–Kutta scheme, a_j stays
//! positive, and an absolute tolerance on u is a relative one on every a_j,
//! including the many tiny sites drawn from Gamma(β/2) with β/2 < 1.

use crate::error::{Error, Result};
use crate::lattice::LatticeState;

// The flow is autonomous, so the nodes c_i never enter.
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

// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
/// ln of the smallest normal and largest finite a_j
const MIN_LOG_A: f64 = -708.0;
const MAX_LOG_A: f64 = 709.0;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Reusable integrator workspace; keeps the step size across snapshot calls.
pub struct Dopri5 {
    tol: f64,
    h: Option<f64>,
    fac_old: f64,
    k: [Vec<f64>; 7],
    y1: Vec<f64>,
    /// exp(u) for the stage being evaluated
    scratch: Vec<f64>,
    fsal_valid: bool,
    pub stats: StepStats,
}

impl Dopri5 {
    pub fn new(tol: f64, sites: usize) -> Self {
        assert!(tol > 0.0, "tolerance must be positive");
        Self {
            tol,
            h: None,
            fac_old: 1e-4,
            k: std::array::from_fn(|_| vec![0.0; sites]),
            y1: vec![0.0; sites],
            scratch: vec![0.0; sites],
            fsal_valid: false,
            stats: StepStats::default(),
        }
    }

    fn initial_step(&mut self, y: &[f64]) -> f64 {
        // Hairer's starting-step heuristic with the pure absolute scale tol
        let n = y.len() as f64;
        let tol = self.tol;
        log_rhs(y, &mut self.k[0], &mut self.scratch);
        let d0 = (y.iter().map(|&v| (v / tol).powi(2)).sum::<f64>() / n).sqrt();
        let d1 = (self.k[0].iter().map(|&f| (f / tol).powi(2)).sum::<f64>() / n).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        for i in 0..y.len() {
            self.y1[i] = y[i] + h0 * self.k[0][i];
        }
        log_rhs(&self.y1, &mut self.k[1], &mut self.scratch);
        let d2 =
            (self.k[1].iter().zip(&self.k[0]).map(|(&f1, &f0)| ((f1 - f0) / tol).powi(2)).sum::<f64>() / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
        self.fsal_valid = true;
        (100.0 * h0).min(h1)
    }

    /// Advance `state` to exactly `t_final`.
    pub fn advance(&mut self, state: &mut LatticeState, t_final: f64) -> Result<()> {
        if t_final < state.time {
            return Err(Error::InvalidInput(format!("t_final {t_final} precedes state time {}", state.time)));
        }
        if t_final == state.time {
            return Ok(());
        }
        let mut u: Vec<f64> = state.a.iter().map(|a| a.ln()).collect();
        let mut h = match self.h {
            Some(h) => h,
            None => self.initial_step(&u),
        };
        if !self.fsal_valid {
            log_rhs(&u, &mut self.k[0], &mut self.scratch);
            self.fsal_valid = true;
        }
        let mut last_rejected = false;
        let mut t = state.time;
        loop {
            let remaining = t_final - t;
            let clipped = h >= remaining;
            let step = if clipped { remaining } else { h };
            if step < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepUnderflow { time: t });
            }
            let err = self.try_step(&u, step);
            let fac11 = err.powf(0.2 - PI_BETA * 0.75);
            if err <= 1.0 {
                let fac = (fac11 / self.fac_old.powf(PI_BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = step / fac;
                if last_rejected {
                    h_new = h_new.min(step);
                }
                self.fac_old = err.max(1e-4);
                self.stats.accepted += 1;
                last_rejected = false;
                // a_j = e^{u_j} must stay a normal positive float
                if let Some(index) = self.y1.iter().position(|&v| !(v > MIN_LOG_A && v < MAX_LOG_A)) {
                    return Err(Error::PositivityLoss { time: t + step, index });
                }
                std::mem::swap(&mut u, &mut self.y1);
                self.k.swap(0, 6);
                if clipped {
                    for (a, u) in state.a.iter_mut().zip(&u) {
                        *a = u.exp();
                    }
                    state.time = t_final;
                    // a clipped final step says nothing about the natural step size
                    self.h = Some(if step < h { h } else { h_new });
                    return Ok(());
                }
                t += step;
                h = h_new;
            } else {
                self.stats.rejected += 1;
                last_rejected = true;
                h = step / (fac11 / SAFETY).min(1.0 / FAC_MIN);
            }
        }
    }

    /// One trial step from y with size h; the result lands in y1 and k[6].
    fn try_step(&mut self, y: &[f64], h: f64) -> f64 {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let y1 = &mut self.y1;
        let a = &mut self.scratch;
        for i in 0..n {
            y1[i] = y[i] + h * A21 * k1[i];
        }
        log_rhs(y1, k2, a);
        for i in 0..n {
            y1[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        log_rhs(y1, k3, a);
        for i in 0..n {
            y1[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        log_rhs(y1, k4, a);
        for i in 0..n {
            y1[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        log_rhs(y1, k5, a);
        for i in 0..n {
            y1[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        log_rhs(y1, k6, a);
        for i in 0..n {
            y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        log_rhs(y1, k7, a);
        let mut acc = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            acc += (e / self.tol) * (e / self.tol);
        }
        let err = (acc / n as f64).sqrt();
        if err.is_finite() {
            err
        } else {
            f64::INFINITY
        }
    }
}

/// u̇_j = e^{u_{j+1}} − e^{u_{j−1}} with periodic wrap; `a` receives e^u.
fn log_rhs(u: &[f64], out: &mut [f64], a: &mut [f64]) {
    let n = u.len();
    for (a, u) in a.iter_mut().zip(u) {
        *a = u.exp();
    }
    out[0] = a[1] - a[n - 1];
    for j in 1..n - 1 {
        out[j] = a[j + 1] - a[j - 1];
    }
    out[n - 1] = a[0] - a[n - 2];
}

/// Integrate a copy of `state` to `t_final` with relative tolerance `tol`.
pub fn integrate(state: &LatticeState, t_final: f64, tol: f64) -> Result<LatticeState> {
    let mut out = state.clone();
    let mut stepper = Dopri5::new(tol, state.sites());
    stepper.advance(&mut out, t_final)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{log_product, total_field};

    #[test]
    fn zero_length_is_identity() {
        let s = LatticeState::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(integrate(&s, 0.0, 1e-9).unwrap(), s);
    }

    #[test]
    fn uniform_state_is_fixed() {
        let s = LatticeState::uniform(5, 0.7).unwrap();
        let out = integrate(&s, 13.0, 1e-10).unwrap();
        assert!(out.a.iter().all(|&v| v == 0.7));
        assert_eq!(out.time, 13.0);
    }

    #[test]
    fn conserves_invariants_on_small_ring() {
        let s = LatticeState::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = integrate(&s, 1.0, 1e-10).unwrap();
        let h0 = total_field(&s, 1);
        assert!((total_field(&out, 1) - h0).abs() <= 1e-8 * h0);
        let p0: f64 = s.a.iter().product();
        let p1: f64 = out.a.iter().product();
        assert!((p1 - p0).abs() <= 1e-8 * p0);
        assert!((log_product(&out) - log_product(&s)).abs() < 1e-8);
    }

    #[test]
    fn snapshots_match_single_run_closely() {
        let a: Vec<f64> = (0..16).map(|j| 0.5 + ((j * 7) % 5) as f64 * 0.3).collect();
        let s = LatticeState::new(a).unwrap();
        let direct = integrate(&s, 5.0, 1e-11).unwrap();
        let mut staged = s.clone();
        let mut stepper = Dopri5::new(1e-11, 16);
        for t in [1.0, 2.5, 5.0] {
            stepper.advance(&mut staged, t).unwrap();
        }
        for (x, y) in direct.a.iter().zip(&staged.a) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}
