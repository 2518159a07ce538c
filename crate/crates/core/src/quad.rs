//! Gauss–Legendre rules and an adaptive Gauss–Kronrod integrator.

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on [−1, 1] (Newton on P_n).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// A fixed rule mapped onto an arbitrary interval.
#[derive(Clone, Debug)]
pub struct FixedRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FixedRule {
    pub fn gauss(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self { nodes, weights }
    }

    /// Σ over mapped nodes of f(x) on [a, b], vector-valued in two components.
    #[inline]
    pub fn integrate2(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> (f64, f64)) -> (f64, f64) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = (0.0, 0.0);
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            let (u, v) = f(mid + half * t);
            acc.0 += w * u;
            acc.1 += w * v;
        }
        (acc.0 * half, acc.1 * half)
    }
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<const D: usize>(f: &mut impl FnMut(f64) -> [f64; D], a: f64, b: f64) -> ([f64; D], f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = [0.0; D];
    let mut g = [0.0; D];
    for d in 0..D {
        k[d] = WGK[7] * fc[d];
        g[d] = WG[3] * fc[d];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for d in 0..D {
            k[d] += WGK[j] * (f1[d] + f2[d]);
            if j % 2 == 1 {
                g[d] += WG[j / 2] * (f1[d] + f2[d]);
            }
        }
    }
    let mut err = 0.0f64;
    for d in 0..D {
        k[d] *= h;
        g[d] *= h;
        err = err.max((k[d] - g[d]).abs());
    }
    (k, err)
}

/// Globally adaptive Gauss–Kronrod (7/15) for vector-valued integrands.
///
/// Stops when the summed error estimate is below `abs_tol + rel_tol·|I|`
/// for every component.
pub fn adaptive<const D: usize>(
    mut f: impl FnMut(f64) -> [f64; D],
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<[f64; D]> {
    let (v0, e0) = gk15(&mut f, a, b);
    let mut parts: Vec<(f64, f64, [f64; D], f64)> = vec![(a, b, v0, e0)];
    loop {
        let mut total = [0.0; D];
        let mut err = 0.0;
        for p in &parts {
            for d in 0..D {
                total[d] += p.2[d];
            }
            err += p.3;
        }
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err <= abs_tol + rel_tol * scale {
            return Ok(total);
        }
        if parts.len() >= max_intervals {
            return Err(Error::Quadrature(format!(
                "error estimate {err:e} after {} subintervals on [{a}, {b}]",
                parts.len()
            )));
        }
        let (idx, _) = parts.iter().enumerate().max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap()).unwrap();
        let (lo, hi, _, _) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            return Err(Error::Quadrature(format!("interval collapsed near {mid}")));
        }
        let (vl, el) = gk15(&mut f, lo, mid);
        let (vr, er) = gk15(&mut f, mid, hi);
        parts.push((lo, mid, vl, el));
        parts.push((mid, hi, vr, er));
    }
}

/// Scalar convenience wrapper around [`adaptive`].
pub fn adaptive1(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    adaptive(|x| [f(x)], a, b, abs_tol, rel_tol, 4000).map(|v| v[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_polynomials_exactly() {
        for n in [1usize, 4, 8, 13] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((got - want).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn adaptive_handles_log_endpoint() {
        // ∫_0^1 ln x dx = −1
        let v = adaptive1(|x| x.ln(), 0.0, 1.0, 1e-13, 1e-13).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
    }
}
