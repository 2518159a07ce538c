//! Linearized generalized hydrodynamics around the GGE.
//!
//! The dressing ψ ↦ [ψ]^dr solves [ψ]^dr − T(ϱ[ψ]^dr) = ψ, i.e. with node
//! masses p and the kernel matrix K, A·dr = ψ for A = I − K·diag(p). All
//! quantities below are formed from p = W∘ϱ and never from raw ϱ values.

use std::io::Write;
use std::path::Path;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::dos::DosSolution;
use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// Decreases of v_eff below this relative size are linear-solve roundoff.
const MONOTONE_TOL: f64 = 1e-11;

/// LU-factored dressing operator for one DOS solution.
pub struct DressingOperator {
    mass: Vec<f64>,
    log_weights: Vec<f64>,
    k: Mat<f64>,
    lu: PartialPivLu<f64>,
}

impl DressingOperator {
    pub fn new(sol: &DosSolution, k: &Mat<f64>) -> Result<Self> {
        let m = sol.grid.m;
        if k.nrows() != m || k.ncols() != m {
            return Err(Error::InvalidInput(format!("kernel is {}x{}, grid has {m} nodes", k.nrows(), k.ncols())));
        }
        let p = &sol.mass;
        let a = Mat::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.0 } - k[(i, j)] * p[j]);
        let lu = a.partial_piv_lu();
        let op = Self { mass: p.clone(), log_weights: sol.grid.log_weights.clone(), k: k.clone(), lu };
        let probe = op.dress(&vec![1.0; m]);
        if probe.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("dressing operator I - T rho is singular".into()));
        }
        Ok(op)
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    fn solve_with(&self, f: &[f64], transpose: bool) -> Vec<f64> {
        let b = Mat::from_fn(f.len(), 1, |i, _| f[i]);
        let x = if transpose { self.lu.solve_transpose(&b) } else { self.lu.solve(&b) };
        (0..f.len()).map(|i| x[(i, 0)]).collect()
    }

    /// [ψ]^dr at the nodes.
    pub fn dress(&self, psi: &[f64]) -> Vec<f64> {
        self.solve_with(psi, false)
    }

    /// (1 − Tϱ)χ, the inverse of [`Self::dress`].
    pub fn undress(&self, chi: &[f64]) -> Vec<f64> {
        let y = crate::kernel::apply(&self.k, &self.weighted(chi));
        chi.iter().zip(&y).map(|(c, y)| c - y).collect()
    }

    fn weighted(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mass).map(|(f, p)| f * p).collect()
    }

    /// (1 − ϱT)⁻¹f as the adjoint of the dressing in the quadrature inner
    /// product: W⁻¹A⁻ᵀ(W∘f).
    pub fn rho_t_inverse_adjoint(&self, f: &[f64]) -> Vec<f64> {
        let wf: Vec<f64> = f.iter().zip(&self.log_weights).map(|(f, lw)| f * lw.exp()).collect();
        let y = self.solve_with(&wf, true);
        y.iter().zip(&self.log_weights).map(|(y, lw)| y * (-lw).exp()).collect()
    }

    /// (1 − ϱT)⁻¹f discretized directly. With D = diag(ϱ) the matrix
    /// I − D·K·diag(W) equals D·A·D⁻¹, which is solved through the LU of A.
    pub fn rho_t_inverse(&self, f: &[f64]) -> Vec<f64> {
        let ln_rho: Vec<f64> = self.mass.iter().zip(&self.log_weights).map(|(p, lw)| p.ln() - lw).collect();
        let scaled: Vec<f64> = f.iter().zip(&ln_rho).map(|(f, l)| f * (-l).exp()).collect();
        let y = self.solve_with(&scaled, false);
        y.iter().zip(&ln_rho).map(|(y, l)| y * l.exp()).collect()
    }

    /// T applied to ψ·(weights folded in), i.e. Σ_j K_ij m_j for node masses m.
    pub fn apply_t_mass(&self, mass: &[f64]) -> Vec<f64> {
        crate::kernel::apply(&self.k, mass)
    }

    /// Quadrature inner product Σ W_j f_j g_j.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(&self.log_weights).map(|((f, g), lw)| f * g * lw.exp()).sum()
    }
}

/// Dressed charges and effective velocity for one GGE.
#[derive(Clone, Debug)]
pub struct DressedCharges {
    pub kappa: f64,
    /// [1]^dr
    pub dr1: Vec<f64>,
    /// W_j σ(w_j), σ = ϱ[1]^dr
    pub sigma_mass: Vec<f64>,
    /// q_n = ⟨σ_{β,V} w^{2n}⟩ for n = 0..=n_max
    pub q: Vec<f64>,
    /// Ξ_n at the nodes; Ξ_0 = κ[1]^dr/2 and Ξ_n = [w^{2n}]^dr − q_n[1]^dr
    pub xi: Vec<Vec<f64>>,
    /// v_eff = [w²]^dr/[1]^dr
    pub veff: Vec<f64>,
    /// v_eff extrapolated to w = 0
    pub v0: f64,
    /// nodes where v_eff decreases by more than roundoff
    pub non_monotone: Vec<usize>,
}

impl DressedCharges {
    pub fn compute(sol: &DosSolution, op: &DressingOperator, n_max: usize) -> Result<Self> {
        let g = &sol.grid;
        let m = g.m;
        let n_max = n_max.max(1);
        let dr1 = op.dress(&vec![1.0; m]);
        let sigma_mass: Vec<f64> = sol.mass.iter().zip(&dr1).map(|(p, d)| p * d).collect();
        let total: f64 = sigma_mass.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Singular(format!("integral of sigma is {total}")));
        }
        let kappa = 1.0 / total;
        let avg = |f: &[f64]| -> f64 { kappa * sigma_mass.iter().zip(f).map(|(s, f)| s * f).sum::<f64>() };

        let mut q = vec![1.0];
        let mut xi = vec![dr1.iter().map(|d| 0.5 * kappa * d).collect::<Vec<_>>()];
        let mut dr_w2 = Vec::new();
        for n in 1..=n_max {
            let pw: Vec<f64> = g.log_nodes.iter().map(|s| (2.0 * n as f64 * s).exp()).collect();
            let qn = avg(&pw);
            let dr = op.dress(&pw);
            xi.push(dr.iter().zip(&dr1).map(|(d, d1)| d - qn * d1).collect());
            q.push(qn);
            if n == 1 {
                dr_w2 = dr;
            }
        }
        let veff: Vec<f64> = dr_w2.iter().zip(&dr1).map(|(a, b)| a / b).collect();
        let v0 = extrapolate_even(&g.nodes[..3], &veff[..3]);
        let non_monotone =
            (1..m).filter(|&j| veff[j] - veff[j - 1] < -MONOTONE_TOL * veff[j].abs().max(1.0)).map(|j| j - 1).collect();
        Ok(Self { kappa, dr1, sigma_mass, q, xi, veff, v0, non_monotone })
    }

    /// ⟨σ_{β,V} f⟩ = κ Σ_j W_j σ_j f_j.
    pub fn average(&self, f: &[f64]) -> f64 {
        self.kappa * self.sigma_mass.iter().zip(f).map(|(s, f)| s * f).sum::<f64>()
    }

    /// Shock position ξ₀ = −(v_eff(0) − q₁)/κ.
    pub fn xi0(&self) -> f64 {
        (self.q[1] - self.v0) / self.kappa
    }

    /// Ballistic coordinate ξ(w) = −(v_eff(w) − q₁)/κ at the nodes.
    pub fn xi_coordinate(&self) -> Vec<f64> {
        self.veff.iter().map(|v| (self.q[1] - v) / self.kappa).collect()
    }

    /// Spectral weight I_mn(w) = 2σ_{β,V}Ξ_mΞ_n times W_j, so that C_mn = Σ_j.
    pub fn weight_mass(&self, m: usize, n: usize) -> Vec<f64> {
        (0..self.sigma_mass.len())
            .map(|j| 2.0 * self.kappa * self.sigma_mass[j] * self.xi[m][j] * self.xi[n][j])
            .collect()
    }

    fn check_index(&self, m: usize, n: usize) -> Result<()> {
        let top = self.xi.len() - 1;
        if m > top || n > top {
            return Err(Error::InvalidInput(format!("charge index ({m}, {n}) exceeds n_max = {top}")));
        }
        Ok(())
    }
}

/// v_eff = [w²]^dr/[1]^dr at the nodes.
pub fn effective_velocity(op: &DressingOperator, sol: &DosSolution) -> Result<Vec<f64>> {
    let dr1 = op.dress(&vec![1.0; sol.grid.m]);
    let w2: Vec<f64> = sol.grid.log_nodes.iter().map(|s| (2.0 * s).exp()).collect();
    let drw = op.dress(&w2);
    if let Some(j) = dr1.iter().position(|d| *d == 0.0 || !d.is_finite()) {
        return Err(Error::Singular(format!("[1]^dr vanishes at node {j}")));
    }
    Ok(drw.iter().zip(&dr1).map(|(a, b)| a / b).collect())
}

/// ξ₀ = (q₁ − v_eff(0))/κ.
pub fn shock_location(summary: &GhdSummary) -> f64 {
    (summary.q[1] - summary.v0) / summary.kappa
}

/// Value at w = 0 of the even interpolant c0 + c1 w² + c2 w⁴ through three nodes.
fn extrapolate_even(w: &[f64], v: &[f64]) -> f64 {
    let z: Vec<f64> = w.iter().map(|w| w * w).collect();
    let mut acc = 0.0;
    for i in 0..3 {
        let mut l = 1.0;
        for j in 0..3 {
            if j != i {
                l *= z[j] / (z[j] - z[i]);
            }
        }
        acc += l * v[i];
    }
    acc
}

/// C_mn = ∫ I_mn(w) dw for 0 ≤ m, n ≤ n_max.
pub fn compute_c(ch: &DressedCharges) -> Vec<Vec<f64>> {
    let k = ch.xi.len();
    let mut c = vec![vec![0.0; k]; k];
    for m in 0..k {
        for n in m..k {
            let v = ch.weight_mass(m, n).iter().sum();
            c[m][n] = v;
            c[n][m] = v;
        }
    }
    c
}

/// B_mn with B_0n = B_n0 = −½C_n1 and B_mn = −(2/κ)⟨σ_{β,V}(v − q₁)Ξ_mΞ_n⟩.
pub fn compute_b(ch: &DressedCharges, c: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = ch.xi.len();
    let mut b = vec![vec![0.0; k]; k];
    for n in 0..k {
        b[0][n] = -0.5 * c[n][1];
        b[n][0] = b[0][n];
    }
    for m in 1..k {
        for n in m..k {
            let v = -2.0
                * (0..ch.veff.len())
                    .map(|j| ch.sigma_mass[j] * (ch.veff[j] - ch.q[1]) * ch.xi[m][j] * ch.xi[n][j])
                    .sum::<f64>();
            b[m][n] = v;
            b[n][m] = v;
        }
    }
    b
}

/// B_0n evaluated from the velocity-weighted integral
/// −⟨σ_{β,V}(v − q₁)[1]^dr Ξ_n⟩ instead of the C-based closed form.
pub fn b0_direct(ch: &DressedCharges) -> Vec<f64> {
    (0..ch.xi.len())
        .map(|n| {
            -2.0 * (0..ch.veff.len())
                .map(|j| ch.sigma_mass[j] * (ch.veff[j] - ch.q[1]) * ch.xi[0][j] * ch.xi[n][j])
                .sum::<f64>()
        })
        .collect()
}

/// ⟨σ_{β,V}(v − q₁)(w² − q₁)⟩/κ, the GGE mean of the n = 1 current in the
/// continuity normalization divided by two.
pub fn mean_current_integral(ch: &DressedCharges, log_nodes: &[f64]) -> f64 {
    (0..ch.veff.len()).map(|j| ch.sigma_mass[j] * (ch.veff[j] - ch.q[1]) * ((2.0 * log_nodes[j]).exp() - ch.q[1])).sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GhdSummary {
    pub beta: f64,
    pub potential: Vec<f64>,
    pub n_max: usize,
    pub mu: f64,
    pub kappa: f64,
    pub q: Vec<f64>,
    pub v0: f64,
    pub xi0: f64,
    pub c: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub b0_direct: Vec<f64>,
    pub veff_monotone: bool,
    pub grid_m: usize,
    pub w_max: f64,
    pub core_scale: f64,
    pub dos_residual: f64,
}

impl GhdSummary {
    pub fn new(sol: &DosSolution, ch: &DressedCharges) -> Self {
        let c = compute_c(ch);
        let b = compute_b(ch, &c);
        Self {
            beta: sol.beta,
            potential: sol.params.potential.clone(),
            n_max: ch.xi.len() - 1,
            mu: sol.mu,
            kappa: ch.kappa,
            q: ch.q.clone(),
            v0: ch.v0,
            xi0: ch.xi0(),
            b0_direct: b0_direct(ch),
            c,
            b,
            veff_monotone: ch.non_monotone.is_empty(),
            grid_m: sol.grid.m,
            w_max: sol.grid.w_max,
            core_scale: sol.grid.core_scale,
            dos_residual: sol.residual,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub w: f64,
    pub xi: f64,
    pub value: f64,
    /// |v_eff′| is unresolved at this node and the value is not reliable
    pub diverged: bool,
}

/// Euler-scale correlation S_mn(ξ) = I_mn(w)·κ/|v_eff′(w)| along the curve ξ(w).
#[derive(Clone, Debug)]
pub struct GhdCurve {
    pub m: usize,
    pub n: usize,
    pub xi0: f64,
    /// ordered by ξ ascending
    pub points: Vec<CurvePoint>,
}

/// Build the curve parametrized by the grid nodes. dv/dx is a centered
/// difference in the computational coordinate, so I·κ/|dv/dw| is formed as
/// (W_j I_j)·κ/(dx|dv/dx|) without touching the steep node values of ϱ.
pub fn euler_scale_curve(sol: &DosSolution, ch: &DressedCharges, m: usize, n: usize) -> Result<GhdCurve> {
    ch.check_index(m, n)?;
    let g = &sol.grid;
    let len = g.m;
    let weight = ch.weight_mass(m, n);
    let xi = ch.xi_coordinate();
    let mut points = Vec::with_capacity(len);
    for j in 0..len {
        let (lo, hi) = (j.saturating_sub(1), (j + 1).min(len - 1));
        let dv = ch.veff[hi] - ch.veff[lo];
        let dvdx = dv / ((hi - lo) as f64 * g.dx);
        let scale = ch.veff[hi].abs().max(ch.veff[lo].abs()).max(1.0);
        let diverged = dv.abs() <= 1e-10 * scale;
        let value = if dvdx == 0.0 { f64::INFINITY } else { weight[j] * ch.kappa / (g.dx * dvdx.abs()) };
        points.push(CurvePoint { w: g.nodes[j], xi: xi[j], value, diverged });
    }
    points.sort_by(|a, b| a.xi.total_cmp(&b.xi));
    Ok(GhdCurve { m, n, xi0: ch.xi0(), points })
}

impl GhdCurve {
    /// Trapezoid moments ∫ξ^k S dξ over the resolved points.
    pub fn moment(&self, k: i32) -> f64 {
        let pts: Vec<&CurvePoint> = self.points.iter().filter(|p| !p.diverged && p.value.is_finite()).collect();
        pts.windows(2)
            .map(|p| 0.5 * (p[0].xi - p[1].xi).abs() * (p[0].xi.powi(k) * p[0].value + p[1].xi.powi(k) * p[1].value))
            .sum()
    }

    /// Linear interpolation of the curve at ξ; zero outside the support, and
    /// NaN where the bracketing points are flagged.
    pub fn interpolate(&self, xi: f64) -> f64 {
        let pts = &self.points;
        if pts.is_empty() || xi < pts[0].xi || xi > pts[pts.len() - 1].xi {
            return 0.0;
        }
        let idx = pts.partition_point(|p| p.xi < xi);
        if idx == 0 {
            return pts[0].value;
        }
        let (a, b) = (&pts[idx - 1], &pts[idx]);
        if a.diverged || b.diverged {
            return f64::NAN;
        }
        let span = b.xi - a.xi;
        if span <= 0.0 {
            return a.value;
        }
        let t = (xi - a.xi) / span;
        (1.0 - t) * a.value + t * b.value
    }

    /// CSV with columns `w,xi,value,diverged`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "w,xi,value,diverged")?;
        for p in &self.points {
            writeln!(f, "{},{},{},{}", fmt_f64(p.w), fmt_f64(p.xi), fmt_f64(p.value), p.diverged as u8)?;
        }
        f.flush()?;
        Ok(())
    }
}
