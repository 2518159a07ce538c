//! Closed-form density of the antisymmetric Gaussian ensemble for V = x²/2.
//!
//! ρ(w) = 2w / (Γ(β/2+1)Γ(β/2)|W_{(1−β)/2,0}(−w²)|²), normalized to one on the
//! positive half-line. On the negative axis
//!
//!   |W_{κ,0}(−y²)| = e^{y²/2}·y·|U(β/2, 1, −y²)|,
//!
//! and the Tricomi integral for U is evaluated along the ray t = τe^{−3iπ/4},
//! where e^{y²t} decays and the integrand has no singularity besides τ^{a−1}.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quad::adaptive;
use crate::special::ln_gamma;

/// |U(a, 1, −y²)| via the rotated contour.
fn abs_tricomi_negative(a: f64, y: f64) -> Result<f64> {
    let rot = Complex64::from_polar(1.0, -0.75 * std::f64::consts::PI);
    let y2 = y * y;
    // e^{y²t}(t)^{a−1}(1+t)^{−a} with the τ^{a−1} factor split off
    let smooth = move |tau: f64| -> Complex64 {
        let t = rot * tau;
        (y2 * t).exp() * rot.powf(a - 1.0) * (1.0 + t).powf(-a) * rot
    };
    // τ ∈ [0, 1] with τ = v^{1/a}: τ^{a−1}dτ = dv/a
    let head = adaptive(
        |v: f64| {
            let tau = v.powf(1.0 / a);
            let f = smooth(tau) / a;
            [f.re, f.im]
        },
        0.0,
        1.0,
        1e-15,
        1e-13,
        4000,
    )?;
    // τ ∈ [1, ∞) with τ = e^s
    let decay = (y2 / std::f64::consts::SQRT_2).max(1e-300);
    let s_max = (60.0 / decay).ln().clamp(1.0, 700.0);
    let tail = adaptive(
        |s: f64| {
            let tau = s.exp();
            let f = smooth(tau) * tau.powf(a - 1.0) * tau;
            [f.re, f.im]
        },
        0.0,
        s_max,
        1e-15,
        1e-13,
        4000,
    )?;
    let total = Complex64::new(head[0] + tail[0], head[1] + tail[1]);
    Ok(total.norm() / ln_gamma(a).exp())
}

/// |W_{(1−β)/2, 0}(−w²)|.
pub fn abs_whittaker_w(beta: f64, w: f64) -> Result<f64> {
    check(beta, w)?;
    let u = abs_tricomi_negative(0.5 * beta, w)?;
    Ok((0.5 * w * w).exp() * w * u)
}

/// Density ρ_{β}(w) of the positive frequencies, integral one on [0, ∞).
pub fn rho_whittaker(beta: f64, w: f64) -> Result<f64> {
    check(beta, w)?;
    let a = 0.5 * beta;
    let u = abs_tricomi_negative(a, w)?;
    let ln = std::f64::consts::LN_2 - w.ln() - w * w - ln_gamma(a + 1.0) - ln_gamma(a) - 2.0 * u.ln();
    Ok(ln.exp())
}

fn check(beta: f64, w: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::InvalidInput(format!("w must be positive, got {w}")));
    }
    Ok(())
}
