//! Discretization of Tψ(w) = ∫₀^∞ ln|w² − z²| ψ(z) dz on a [`RadialGrid`].
//!
//! With ψ(z)dz written as a mass density in the computational coordinate x and
//! expanded in hat functions φ_j (constant on the two end cells),
//!
//!   K_ij = (1/dx) ∫ ln|w_i² − w(x)²| φ_j(x) dx,
//!
//! so that (Tψ)(w_i) ≈ Σ_j K_ij W_j ψ_j. In log variables the kernel splits as
//!
//!   ln|w_i² − w²| = 2·max(s_i, s) + ℓ(s − s_i),   ℓ(u) = ln(1 − e^{−2|u|}),
//!
//! where the max part has closed-form cell integrals and ℓ is integrable with
//! a logarithmic singularity at x = x_i, which is subtracted analytically on
//! the two cells adjacent to the node.

use faer::Mat;
use rayon::prelude::*;

use crate::grid::RadialGrid;
use crate::quad::{adaptive, FixedRule};

const GAUSS_POINTS: usize = 10;
/// beyond this |u| the ℓ term is below 1e−16 and the cell is skipped
const FAR_FIELD: f64 = 18.5;
/// cells whose u-range is wider than this go to adaptive quadrature
const SMOOTH_WIDTH: f64 = 0.5;

#[inline]
fn ell(u: f64) -> f64 {
    let v = 2.0 * u.abs();
    if v < 0.7 {
        (-(-v).exp_m1()).ln()
    } else {
        (-(-v).exp()).ln_1p()
    }
}

struct Cell {
    a: f64,
    b: f64,
    s_a: f64,
    s_b: f64,
    /// 2∫s dx and 2∫s·t dx with t = (x − a)/dx
    max_right: (f64, f64),
    /// ∫1 dx and ∫t dx
    len_moments: (f64, f64),
    gauss_x: Vec<f64>,
    gauss_s: Vec<f64>,
}

fn f0(x: f64, c: f64) -> f64 {
    x * x.ln() - x - c * x.ln()
}

fn f1(x: f64, c: f64) -> f64 {
    0.5 * x * x * x.ln() - 0.25 * x * x - c * x
}

fn build_cells(g: &RadialGrid, rule: &FixedRule) -> Vec<Cell> {
    let m = g.m;
    let c = g.core_scale;
    (0..=m)
        .map(|k| {
            let a = if k == 0 { 0.0 } else { g.x[k - 1] };
            let b = if k == m { g.x_max } else { g.x[k] };
            let s_a = if k == 0 { f64::NEG_INFINITY } else { g.log_nodes[k - 1] };
            let s_b = if k == m { g.w_max.ln() } else { g.log_nodes[k] };
            let len = b - a;
            let max_right = if k == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let i0 = f0(b, c) - f0(a, c);
                let i1 = (f1(b, c) - f1(a, c) - a * i0) / g.dx;
                (2.0 * i0, 2.0 * i1)
            };
            let half = 0.5 * len;
            let mid = 0.5 * (a + b);
            let gauss_x: Vec<f64> = rule.nodes.iter().map(|t| mid + half * t).collect();
            let gauss_s = gauss_x.iter().map(|&x| g.log_w(x)).collect();
            Cell { a, b, s_a, s_b, max_right, len_moments: (len, 0.5 * len * len / g.dx), gauss_x, gauss_s }
        })
        .collect()
}

/// Assemble the dense m×m matrix K.
pub fn assemble_t(g: &RadialGrid) -> Mat<f64> {
    let rule = FixedRule::gauss(GAUSS_POINTS);
    let cells = build_cells(g, &rule);
    let rows: Vec<Vec<f64>> = (0..g.m).into_par_iter().map(|i| assemble_row(g, &cells, &rule, i)).collect();
    Mat::from_fn(g.m, g.m, |i, j| rows[i][j])
}

fn assemble_row(g: &RadialGrid, cells: &[Cell], rule: &FixedRule, i: usize) -> Vec<f64> {
    let m = g.m;
    let dx = g.dx;
    let c = g.core_scale;
    let xi = g.x[i];
    let si = g.log_nodes[i];
    let mut row = vec![0.0; m];
    let abs_tol = 1e-15 * dx;
    for (k, cell) in cells.iter().enumerate() {
        // max(s_i, s) part
        let (mut m0, mut m1) =
            if cell.b <= xi { (2.0 * si * cell.len_moments.0, 2.0 * si * cell.len_moments.1) } else { cell.max_right };
        // ℓ(s − s_i) part
        let u_a = cell.s_a - si;
        let u_b = cell.s_b - si;
        let width = u_b - u_a;
        let left_adjacent = k == i; // x_i is the right end of this cell
        let right_adjacent = k == i + 1; // x_i is the left end
        if left_adjacent || right_adjacent {
            let len = cell.b - cell.a;
            let (l0, l1) = log_moments(len);
            // τ = |x − x_i|; t as a function of τ depends on the side
            let (a0, a1) = if right_adjacent { (l0, l1 / dx) } else { (l0, (len * l0 - l1) / dx) };
            let remainder = |tau: f64| -> [f64; 2] {
                let d = if right_adjacent { tau } else { -tau };
                let x = xi + d;
                let u = (d / xi).ln_1p() + if c == 0.0 { 0.0 } else { c * d / (x * xi) };
                let r = ell(u) - tau.ln();
                let t = if right_adjacent { tau / dx } else { (len - tau) / dx };
                [r, r * t]
            };
            let (r0, r1) = if width.is_finite() && width <= SMOOTH_WIDTH {
                rule.integrate2(0.0, len, |tau| {
                    let [p, q] = remainder(tau);
                    (p, q)
                })
            } else {
                let v = adaptive(remainder, 0.0, len, abs_tol, 1e-14, 20_000).expect("kernel quadrature");
                (v[0], v[1])
            };
            m0 += a0 + r0;
            m1 += a1 + r1;
        } else {
            let dist = if u_a > 0.0 { u_a } else { -u_b };
            if dist <= FAR_FIELD {
                if width.is_finite() && width <= SMOOTH_WIDTH {
                    let half = 0.5 * (cell.b - cell.a);
                    for q in 0..rule.nodes.len() {
                        let l = ell(cell.gauss_s[q] - si);
                        let t = (cell.gauss_x[q] - cell.a) / dx;
                        m0 += half * rule.weights[q] * l;
                        m1 += half * rule.weights[q] * l * t;
                    }
                } else {
                    let a = cell.a;
                    let v = adaptive(
                        |x: f64| {
                            let l = ell(g.log_w(x) - si);
                            [l, l * (x - a) / dx]
                        },
                        cell.a,
                        cell.b,
                        abs_tol,
                        1e-14,
                        20_000,
                    )
                    .expect("kernel quadrature");
                    m0 += v[0];
                    m1 += v[1];
                }
            }
        }
        if k == 0 {
            row[0] += m0 / dx;
        } else if k == m {
            row[m - 1] += m0 / dx;
        } else {
            row[k - 1] += (m0 - m1) / dx;
            row[k] += m1 / dx;
        }
    }
    row
}

/// ∫₀^L ln τ dτ and ∫₀^L τ ln τ dτ.
fn log_moments(len: f64) -> (f64, f64) {
    let ll = len.ln();
    (len * (ll - 1.0), len * len * (0.5 * ll - 0.25))
}

/// y = K·diag(weights)·v.
pub fn apply(k: &Mat<f64>, weighted: &[f64]) -> Vec<f64> {
    let v = faer::ColRef::from_slice(weighted);
    let y = k * v;
    (0..k.nrows()).map(|i| y[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_are_finite() {
        for g in [RadialGrid::new(6.0, 40).unwrap(), RadialGrid::uniform(6.0, 40).unwrap()] {
            let k = assemble_t(&g);
            for i in 0..g.m {
                for j in 0..g.m {
                    assert!(k[(i, j)].is_finite(), "K[{i},{j}]");
                }
            }
        }
    }

    #[test]
    fn ell_is_continuous_across_branch_switch() {
        let lo = ell(0.35 - 1e-12);
        let hi = ell(0.35 + 1e-12);
        assert!((lo - hi).abs() < 1e-11);
    }
}
