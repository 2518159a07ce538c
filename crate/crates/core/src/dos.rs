//! Density of states ϱ = βρ from the Euler–Lagrange equation
//!
//!   ln ϱ = μ − 1 + Tϱ + V(iw) + V(−iw) − ln w,   ∫ϱ = β.
//!
//! The unknown is stored as node masses p_j = W_j ϱ_j, which stay O(1) even
//! where ϱ itself is astronomically large (w → 0) or small (the Gaussian tail).

use std::io::Write;
use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::ensembles::GgeParams;
use crate::error::{Error, Result};
use crate::ghd::DressingOperator;
use crate::grid::RadialGrid;
use crate::io::fmt_f64;
use crate::kernel::{apply, assemble_t};

const PROGRESS_WINDOW: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// initial (and largest) damping factor
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { damping: 0.5, tol: 1e-10, max_iter: 10_000 }
    }
}

#[derive(Clone, Debug)]
pub struct DosSolution {
    pub grid: RadialGrid,
    pub params: GgeParams,
    pub beta: f64,
    /// p_j = W_j ϱ_j
    pub mass: Vec<f64>,
    pub mu: f64,
    pub converged: bool,
    pub iterations: usize,
    /// sup-norm Euler–Lagrange residual at the returned iterate
    pub residual: f64,
    /// damping in effect when the iteration stopped
    pub final_damping: f64,
}

impl DosSolution {
    /// Node values of ϱ.
    pub fn varrho(&self) -> Vec<f64> {
        self.mass.iter().zip(&self.grid.log_weights).map(|(p, lw)| (p.ln() - lw).exp()).collect()
    }

    /// Node values of ρ = ϱ/β.
    pub fn rho(&self) -> Vec<f64> {
        self.varrho().iter().map(|v| v / self.beta).collect()
    }

    /// ∫ϱ dw on the grid, identically β up to roundoff.
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// F_Volt = μ/2 − ln 2 − ½.
    pub fn volterra_free_energy(&self) -> f64 {
        0.5 * self.mu - std::f64::consts::LN_2 - 0.5
    }

    /// ∫_{w_lo}^{w_hi} ϱ dw using the piecewise-linear mass density in x.
    pub fn mass_between(&self, w_lo: f64, w_hi: f64) -> f64 {
        let g = &self.grid;
        let x_lo = g.x_of_w(w_lo.max(0.0)).min(g.x_max);
        let x_hi = g.x_of_w(w_hi.min(g.w_max)).min(g.x_max);
        if x_hi <= x_lo {
            return 0.0;
        }
        // density in x at the nodes; constant on the two end cells
        let d: Vec<f64> = self.mass.iter().map(|p| p / g.dx).collect();
        let dens = |x: f64| -> f64 {
            let pos = x / g.dx - 0.5;
            if pos <= 0.0 {
                d[0]
            } else if pos >= (g.m - 1) as f64 {
                d[g.m - 1]
            } else {
                let j = pos.floor() as usize;
                let t = pos - j as f64;
                (1.0 - t) * d[j] + t * d[j + 1]
            }
        };
        // trapezoid is exact on each linear piece
        let mut breaks = vec![x_lo];
        for &x in &g.x {
            if x > x_lo && x < x_hi {
                breaks.push(x);
            }
        }
        breaks.push(x_hi);
        breaks.windows(2).map(|p| (p[1] - p[0]) * 0.5 * (dens(p[0]) + dens(p[1]))).sum()
    }

    /// CSV with columns `w,varrho,sigma_norm`.
    pub fn write_csv(&self, path: &Path, sigma_norm: &[f64]) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "w,varrho,sigma_norm")?;
        let varrho = self.varrho();
        for j in 0..self.grid.m {
            writeln!(f, "{},{},{}", fmt_f64(self.grid.nodes[j]), fmt_f64(varrho[j]), fmt_f64(sigma_norm[j]))?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Assemble K for the grid and solve.
pub fn solve_el(params: &GgeParams, grid: &RadialGrid, solver: &SolverParams) -> Result<DosSolution> {
    let k = assemble_t(grid);
    solve_el_with_kernel(params, grid, &k, solver)
}

fn log_base(params: &GgeParams, grid: &RadialGrid) -> Vec<f64> {
    (0..grid.m).map(|j| grid.dx.ln() + grid.jac[j].ln() + params.v_imag_sum(grid.nodes[j])).collect()
}

/// One sweep of the normalized map p ↦ β·exp(base + Kp)/Σ; returns (p_new, μ).
fn sweep(k: &Mat<f64>, base: &[f64], p: &[f64], beta: f64) -> Result<(Vec<f64>, f64)> {
    let y = apply(k, p);
    let l: Vec<f64> = base.iter().zip(&y).map(|(b, y)| b + y).collect();
    let lmax = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lmax.is_finite() {
        return Err(Error::Overflow("non-finite exponent in the Euler-Lagrange sweep".into()));
    }
    let e: Vec<f64> = l.iter().map(|v| (v - lmax).exp()).collect();
    let sum: f64 = e.iter().sum();
    let p_new = e.iter().map(|v| beta * v / sum).collect();
    let mu = 1.0 + beta.ln() - sum.ln() - lmax;
    Ok((p_new, mu))
}

/// Damped fixed-point iteration with a reusable kernel matrix.
///
/// The linearized map has eigenvalues well below −1 for the default damping,
/// so the damping is halved whenever the update norm grows on two successive
/// sweeps, or fails to halve over a window of sweeps.
pub fn solve_el_with_kernel(
    params: &GgeParams,
    grid: &RadialGrid,
    k: &Mat<f64>,
    solver: &SolverParams,
) -> Result<DosSolution> {
    if !(solver.damping > 0.0 && solver.damping <= 1.0) {
        return Err(Error::InvalidInput(format!("damping must lie in (0, 1], got {}", solver.damping)));
    }
    if !(solver.tol > 0.0) {
        return Err(Error::InvalidInput("solver tolerance must be positive".into()));
    }
    let beta = params.beta;
    let base = log_base(params, grid);
    let bmax = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let init: Vec<f64> = base.iter().map(|b| (b - bmax).exp()).collect();
    let s: f64 = init.iter().sum();
    let mut p: Vec<f64> = init.iter().map(|v| beta * v / s).collect();

    let mut damping = solver.damping;
    let mut prev_change = f64::INFINITY;
    let mut growth = 0;
    let mut window_start = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < solver.max_iter {
        iterations += 1;
        let (p_new, _) = sweep(k, &base, &p, beta)?;
        let change = p.iter().zip(&p_new).map(|(a, b)| ((b - a) / a).abs()).fold(0.0, f64::max);
        if !change.is_finite() {
            return Err(Error::Overflow("density update is not finite; enlarge w_max or refine the grid".into()));
        }
        if change <= solver.tol {
            p = p_new;
            converged = true;
            break;
        }
        if change > prev_change {
            growth += 1;
            if growth >= 2 {
                damping *= 0.5;
                growth = 0;
            }
        } else {
            growth = 0;
        }
        prev_change = change;
        if iterations % PROGRESS_WINDOW == 0 {
            if change > 0.5 * window_start {
                damping *= 0.5;
                growth = 0;
            }
            window_start = change;
        }
        for (a, b) in p.iter_mut().zip(&p_new) {
            *a = (1.0 - damping) * *a + damping * b;
        }
        if damping < 1e-6 {
            break;
        }
    }
    // renormalize exactly and measure the residual at the returned iterate
    let total: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v *= beta / total;
    }
    let (p_img, mu) = sweep(k, &base, &p, beta)?;
    let residual = p.iter().zip(&p_img).map(|(a, b)| (a.ln() - b.ln()).abs()).fold(0.0, f64::max);
    Ok(DosSolution {
        grid: grid.clone(),
        params: params.clone(),
        beta,
        mass: p,
        mu,
        converged,
        iterations,
        residual,
        final_damping: damping,
    })
}

/// Sup-norm of the Euler–Lagrange residual
/// −(Kϱ)_i − (V(iw_i) + V(−iw_i)) + ln w_i + ln ϱ_i + 1 − μ.
pub fn el_residual(sol: &DosSolution, k: &Mat<f64>) -> f64 {
    let g = &sol.grid;
    let y = apply(k, &sol.mass);
    (0..g.m)
        .map(|i| {
            let ln_varrho = sol.mass[i].ln() - g.log_weights[i];
            (-y[i] - sol.params.v_imag_sum(g.nodes[i]) + g.log_nodes[i] + ln_varrho + 1.0 - sol.mu).abs()
        })
        .fold(0.0, f64::max)
}

/// The discretized functional
/// F = −½∬ln|x²−y²|ϱϱ − ∫(V(ix)+V(−ix) − ln x)ϱ + ∫ϱ ln ϱ, evaluated on masses.
pub fn functional(params: &GgeParams, grid: &RadialGrid, k: &Mat<f64>, mass: &[f64]) -> f64 {
    let y = apply(k, mass);
    let mut f = 0.0;
    for j in 0..grid.m {
        let p = mass[j];
        let ln_varrho = p.ln() - grid.log_weights[j];
        f += -0.5 * p * y[j] - p * (params.v_imag_sum(grid.nodes[j]) - grid.log_nodes[j]) + p * ln_varrho;
    }
    f
}

/// σ = ϱ·[1]^dr and κ = 1/∫σ.
#[derive(Clone, Debug)]
pub struct SigmaResult {
    /// node values of σ
    pub sigma: Vec<f64>,
    /// W_j σ_j
    pub sigma_mass: Vec<f64>,
    pub kappa: f64,
}

impl SigmaResult {
    /// Node values of the normalized density σ_{β,V} = κσ.
    pub fn sigma_norm(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| self.kappa * s).collect()
    }
}

pub fn sigma_from_dos(sol: &DosSolution, op: &DressingOperator) -> Result<SigmaResult> {
    let dr1 = op.dress(&vec![1.0; sol.grid.m]);
    let sigma_mass: Vec<f64> = sol.mass.iter().zip(&dr1).map(|(p, d)| p * d).collect();
    let total: f64 = sigma_mass.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Singular(format!("integral of sigma is {total}")));
    }
    let sigma = sigma_mass.iter().zip(&sol.grid.log_weights).map(|(s, lw)| s * (-lw).exp()).collect();
    Ok(SigmaResult { sigma, sigma_mass, kappa: 1.0 / total })
}

/// σ_{β,V} = ∂_β ϱ by a central difference of two solves; returns node masses
/// W_j σ_{β,V}(w_j).
pub fn sigma_by_beta_derivative(
    params: &GgeParams,
    grid: &RadialGrid,
    k: &Mat<f64>,
    solver: &SolverParams,
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps < params.beta) {
        return Err(Error::InvalidInput(format!("eps must lie in (0, beta), got {eps}")));
    }
    let plus = GgeParams { beta: params.beta + eps, ..params.clone() };
    let minus = GgeParams { beta: params.beta - eps, ..params.clone() };
    let sp = solve_el_with_kernel(&plus, grid, k, solver)?;
    let sm = solve_el_with_kernel(&minus, grid, k, solver)?;
    if !sp.converged || !sm.converged {
        return Err(Error::InvalidInput("a shifted-beta solve did not converge".into()));
    }
    Ok(sp.mass.iter().zip(&sm.mass).map(|(a, b)| (a - b) / (2.0 * eps)).collect())
}
