//! Radial grid for the density of states.
//!
//! The density ϱ(w) behaves like 1/(w ln²w) at the origin and carries an
//! O(1/|ln ε|) fraction of its mass below any ε, which a grid uniform in w
//! cannot resolve. Nodes are therefore cell-centered and uniform in a
//! computational coordinate x ∈ [0, X] with
//!
//!   w(x) = x·exp(−c/x),   s(x) = ln w = ln x − c/x.
//!
//! In x the mass density ϱ·w′(x) stays bounded down to x = 0. With c = 0 the
//! map is the identity and the grid reduces to the plain uniform one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CORE_SCALE: f64 = 0.5;

/// ln w is kept above this so that node values of ϱ stay representable.
const MIN_LOG_NODE: f64 = -690.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub w_max: f64,
    pub m: usize,
    pub core_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadialGrid {
    pub w_max: f64,
    pub m: usize,
    /// c in w = x·exp(−c/x)
    pub core_scale: f64,
    /// X with w(X) = w_max
    pub x_max: f64,
    pub dx: f64,
    /// computational nodes x_j = (j + ½)dx
    pub x: Vec<f64>,
    /// ln w_j
    pub log_nodes: Vec<f64>,
    /// w_j
    pub nodes: Vec<f64>,
    /// ds/dx at the nodes
    pub jac: Vec<f64>,
    /// quadrature weights W_j = dx·w′(x_j), so Σ W_j f_j ≈ ∫ f dw
    pub weights: Vec<f64>,
    /// ln W_j
    pub log_weights: Vec<f64>,
}

impl RadialGrid {
    /// Mapped grid with the default core scale.
    pub fn new(w_max: f64, m: usize) -> Result<Self> {
        Self::mapped(w_max, m, DEFAULT_CORE_SCALE)
    }

    /// Uniform cell-centered grid w_i = (i − ½)h.
    pub fn uniform(w_max: f64, m: usize) -> Result<Self> {
        Self::mapped(w_max, m, 0.0)
    }

    pub fn from_params(p: &GridParams) -> Result<Self> {
        Self::mapped(p.w_max, p.m, p.core_scale)
    }

    pub fn params(&self) -> GridParams {
        GridParams { w_max: self.w_max, m: self.m, core_scale: self.core_scale }
    }

    /// Default w_max = max(6, 4√β).
    pub fn default_w_max(beta: f64) -> f64 {
        (4.0 * beta.sqrt()).max(6.0)
    }

    pub fn mapped(w_max: f64, m: usize, core_scale: f64) -> Result<Self> {
        if !(w_max > 0.0 && w_max.is_finite()) {
            return Err(Error::InvalidInput(format!("w_max must be positive, got {w_max}")));
        }
        if m < 4 {
            return Err(Error::InvalidInput(format!("need at least 4 grid nodes, got {m}")));
        }
        if !(core_scale >= 0.0 && core_scale.is_finite()) {
            return Err(Error::InvalidInput(format!("core scale must be >= 0, got {core_scale}")));
        }
        let c = core_scale;
        let x_max = solve_x(w_max.ln(), c);
        let dx = x_max / m as f64;
        let x: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5) * dx).collect();
        let log_nodes: Vec<f64> = x.iter().map(|&x| log_w(x, c)).collect();
        if log_nodes[0] < MIN_LOG_NODE {
            return Err(Error::InvalidInput(format!(
                "first node ln w = {:.1} is below {MIN_LOG_NODE}; lower the core scale for m = {m}",
                log_nodes[0]
            )));
        }
        let nodes: Vec<f64> = log_nodes.iter().map(|s| s.exp()).collect();
        let jac: Vec<f64> = x.iter().map(|&x| dlogw_dx(x, c)).collect();
        let log_weights: Vec<f64> = (0..m).map(|j| dx.ln() + jac[j].ln() + log_nodes[j]).collect();
        let weights = log_weights.iter().map(|l| l.exp()).collect();
        Ok(Self { w_max, m, core_scale: c, x_max, dx, x, log_nodes, nodes, jac, weights, log_weights })
    }

    /// ∫ f dw ≈ Σ W_j f_j.
    pub fn quadrature(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, f)| w * f).sum()
    }

    pub fn log_w(&self, x: f64) -> f64 {
        log_w(x, self.core_scale)
    }

    pub fn dlogw_dx(&self, x: f64) -> f64 {
        dlogw_dx(x, self.core_scale)
    }

    /// Computational coordinate of a physical w (inverse map).
    pub fn x_of_w(&self, w: f64) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        solve_x(w.ln(), self.core_scale)
    }
}

#[inline]
pub fn log_w(x: f64, c: f64) -> f64 {
    if c == 0.0 {
        x.ln()
    } else {
        x.ln() - c / x
    }
}

#[inline]
pub fn dlogw_dx(x: f64, c: f64) -> f64 {
    1.0 / x + c / (x * x)
}

/// Solve ln x − c/x = target for x > 0.
fn solve_x(target: f64, c: f64) -> f64 {
    if c == 0.0 {
        return target.exp();
    }
    // safeguarded Newton inside a shrinking bracket
    let mut lo = 1e-300f64;
    let mut hi = target.exp().max(1.0) + c;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = log_w(x, c) - target;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let step = f / dlogw_dx(x, c);
        let mut next = x - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x {
            return next;
        }
        x = next;
    }
    x
}
