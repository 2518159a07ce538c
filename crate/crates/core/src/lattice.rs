//! Volterra lattice state, Lax matrix, conserved fields and currents.
//!
//! Sites are indexed 0..2N with periodic wrap. The Lax matrix is
//! L = Σ √a_j (E_{j,j+1} − E_{j+1,j}) including the corner entries.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeState {
    pub a: Vec<f64>,
    pub time: f64,
}

impl LatticeState {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.len() < 4 || !a.len().is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("lattice needs an even number of sites >= 4, got {}", a.len())));
        }
        if let Some((index, &value)) = a.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v.is_finite())) {
            return Err(Error::NonPositive { index, value });
        }
        Ok(Self { a, time: 0.0 })
    }

    pub fn uniform(n_pairs: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; 2 * n_pairs])
    }

    pub fn n_pairs(&self) -> usize {
        self.a.len() / 2
    }

    pub fn sites(&self) -> usize {
        self.a.len()
    }
}

/// Which prefactor to use for the currents of the higher fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurrentConvention {
    /// ((−1)ⁿ/2)(L^{2n}_{j,j+2}√(a_j a_{j+1}) + L^{2n}_{j−1,j+1}√(a_{j−1} a_j)).
    Lax,
    /// −2 × the Lax value; satisfies dQ_j/dt = J_j − J_{j−1} exactly.
    Continuity,
}

#[inline]
fn wrap(i: isize, len: usize) -> usize {
    i.rem_euclid(len as isize) as usize
}

/// ȧ_j = a_j (a_{j+1} − a_{j−1}).
pub fn volterra_rhs(state: &LatticeState) -> Vec<f64> {
    let mut out = vec![0.0; state.a.len()];
    rhs_into(&state.a, &mut out);
    out
}

/// Allocation-free form of [`volterra_rhs`] used by the integrator.
#[inline]
pub fn rhs_into(a: &[f64], out: &mut [f64]) {
    let n = a.len();
    out[0] = a[0] * (a[1] - a[n - 1]);
    for j in 1..n - 1 {
        out[j] = a[j] * (a[j + 1] - a[j - 1]);
    }
    out[n - 1] = a[n - 1] * (a[0] - a[n - 2]);
}

pub fn build_lax(state: &LatticeState) -> Result<Mat<f64>> {
    let n = state.a.len();
    if let Some((index, &value)) = state.a.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositive { index, value });
    }
    let mut l = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        let s = state.a[j].sqrt();
        let k = (j + 1) % n;
        l[(j, k)] = s;
        l[(k, j)] = -s;
    }
    Ok(l)
}

/// One row of L^p restricted to the band |offset| ≤ p around `center`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedPower {
    pub center: usize,
    pub half_bandwidth: usize,
    /// entries[k] = (L^p)_{center, center + k − half_bandwidth}
    pub entries: Vec<f64>,
}

impl BandedPower {
    pub fn at(&self, offset: isize) -> f64 {
        let hb = self.half_bandwidth as isize;
        if offset.abs() > hb {
            0.0
        } else {
            self.entries[(offset + hb) as usize]
        }
    }
}

/// Row `center` of L^p by repeated band-limited multiplication r ← r·L.
///
/// `sqrt_a` holds √a_j. Exact on the ring as long as 2N > 2p.
pub fn banded_power_row(sqrt_a: &[f64], center: usize, p: usize) -> BandedPower {
    let n = sqrt_a.len();
    let width = 2 * p + 1;
    let mut cur = vec![0.0; width + 2];
    let mut next = vec![0.0; width + 2];
    // cur[idx] holds offset idx − p − 1; padding at both ends keeps reads in range
    cur[p + 1] = 1.0;
    for step in 0..p {
        let reach = step + 1;
        for idx in (p + 1 - reach)..=(p + 1 + reach) {
            let off = idx as isize - p as isize - 1;
            let k = wrap(center as isize + off, n);
            let km1 = if k == 0 { n - 1 } else { k - 1 };
            // (rL)_k = r_{k−1} L_{k−1,k} + r_{k+1} L_{k+1,k}
            next[idx] = cur[idx - 1] * sqrt_a[km1] - cur[idx + 1] * sqrt_a[k];
        }
        std::mem::swap(&mut cur, &mut next);
    }
    BandedPower { center, half_bandwidth: p, entries: cur[1..=width].to_vec() }
}

fn dense_even_power(state: &LatticeState, n: usize) -> Result<Mat<f64>> {
    let l = build_lax(state)?;
    let l2 = &l * &l;
    let mut acc = Mat::<f64>::identity(state.sites(), state.sites());
    for _ in 0..n {
        acc = &acc * &l2;
    }
    Ok(acc)
}

fn sign(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Q^{[0]}_j = ½ ln a_j; Q^{[n]}_j = (−1)ⁿ (L^{2n})_{jj} for n ≥ 1.
///
/// Uses banded rows when 2N > 4n and falls back to dense powers otherwise.
pub fn local_fields(state: &LatticeState, n: usize) -> Vec<f64> {
    match local_fields_banded(state, n) {
        Ok(q) => q,
        Err(_) => {
            let p = dense_even_power(state, n).expect("state validated on construction");
            (0..state.sites()).map(|j| sign(n) * p[(j, j)]).collect()
        }
    }
}

/// Banded-only evaluation; errors instead of falling back when the band wraps.
pub fn local_fields_banded(state: &LatticeState, n: usize) -> Result<Vec<f64>> {
    let sites = state.sites();
    if n == 0 {
        return Ok(state.a.iter().map(|&a| 0.5 * a.ln()).collect());
    }
    if n == 1 {
        return Ok((0..sites).map(|j| state.a[j] + state.a[(j + sites - 1) % sites]).collect());
    }
    if sites <= 4 * n {
        return Err(Error::BandWrap { sites, n });
    }
    let sqrt_a: Vec<f64> = state.a.iter().map(|a| a.sqrt()).collect();
    let s = sign(n);
    Ok((0..sites).map(|j| s * banded_power_row(&sqrt_a, j, 2 * n).at(0)).collect())
}

/// Currents J^{[n]}_j pairing with Q^{[n]}_j.
pub fn local_currents(state: &LatticeState, n: usize, convention: CurrentConvention) -> Vec<f64> {
    let sites = state.sites();
    let a = &state.a;
    if n == 0 {
        return (0..sites).map(|j| 0.5 * (a[(j + 1) % sites] + a[j])).collect();
    }
    let factor = match convention {
        CurrentConvention::Lax => 0.5 * sign(n),
        CurrentConvention::Continuity => -sign(n),
    };
    // u_j = L^{2n}_{j,j+2} √(a_j a_{j+1}); for n = 1 this is a_j a_{j+1}
    let u: Vec<f64> = if n == 1 {
        (0..sites).map(|j| a[j] * a[(j + 1) % sites]).collect()
    } else if sites > 4 * n {
        let sqrt_a: Vec<f64> = a.iter().map(|x| x.sqrt()).collect();
        (0..sites).map(|j| banded_power_row(&sqrt_a, j, 2 * n).at(2) * sqrt_a[j] * sqrt_a[(j + 1) % sites]).collect()
    } else {
        let p = dense_even_power(state, n).expect("state validated on construction");
        (0..sites).map(|j| p[(j, (j + 2) % sites)] * (a[j] * a[(j + 1) % sites]).sqrt()).collect()
    };
    (0..sites).map(|j| factor * (u[j] + u[(j + sites - 1) % sites])).collect()
}

/// Σ_j Q^{[n]}_j.
pub fn total_field(state: &LatticeState, n: usize) -> f64 {
    local_fields(state, n).iter().sum()
}

/// ln Π_j a_j, the conserved product in log form.
pub fn log_product(state: &LatticeState) -> f64 {
    state.a.iter().map(|a| a.ln()).sum()
}
