//! GGE and antisymmetric Gaussian β-ensemble samplers, spectra, histograms.

use std::io::Write;
use std::path::Path;

use faer::{c64, Mat, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::lattice::{build_lax, LatticeState};

/// β and the even potential V(x) = (−1)^{ℓ+1} c_ℓ x^{2ℓ} + Σ_{j<ℓ} c_j x^{2j}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GgeParams {
    pub beta: f64,
    /// c_1, …, c_ℓ
    pub potential: Vec<f64>,
}

impl GgeParams {
    pub fn new(beta: f64, potential: Vec<f64>) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
        }
        match potential.last() {
            Some(&c) if c > 0.0 => {}
            _ => return Err(Error::InvalidInput("leading potential coefficient must be positive".into())),
        }
        Ok(Self { beta, potential })
    }

    /// V(x) = x²/2.
    pub fn quadratic(beta: f64) -> Result<Self> {
        Self::new(beta, vec![0.5])
    }

    pub fn is_quadratic(&self) -> bool {
        self.potential.len() == 1 && self.potential[0] == 0.5
    }

    /// V(iw) + V(−iw) = 2(−c_ℓ w^{2ℓ} + Σ_{j<ℓ} (−1)^j c_j w^{2j}).
    pub fn v_imag_sum(&self, w: f64) -> f64 {
        let l = self.potential.len();
        let w2 = w * w;
        let mut acc = 0.0;
        let mut pow = 1.0;
        for (idx, &c) in self.potential.iter().enumerate() {
            pow *= w2;
            let j = idx + 1;
            acc += if j == l {
                -c * pow
            } else if j % 2 == 0 {
                c * pow
            } else {
                -c * pow
            };
        }
        2.0 * acc
    }
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 2N i.i.d. Gamma(β/2, 1) sites, the GGE for V = x²/2.
pub fn sample_gge(params: &GgeParams, n_pairs: usize, seed: u64) -> Result<LatticeState> {
    let mut rng = rng_for(seed);
    sample_gge_with(params, n_pairs, &mut rng)
}

pub fn sample_gge_with(params: &GgeParams, n_pairs: usize, rng: &mut ChaCha8Rng) -> Result<LatticeState> {
    if !params.is_quadratic() {
        return Err(Error::UnsupportedPotential("direct GGE sampling is only available for V = x^2/2".into()));
    }
    if n_pairs < 2 {
        return Err(Error::InvalidInput("need N >= 2".into()));
    }
    let gamma = Gamma::new(0.5 * params.beta, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let a = (0..2 * n_pairs).map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE)).collect();
    LatticeState::new(a)
}

/// Tridiagonal antisymmetric matrix with zero diagonal and off-diagonals y_j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgMatrix {
    pub offdiag: Vec<f64>,
    pub beta: f64,
    pub n_pairs: usize,
}

impl AgMatrix {
    pub fn new(offdiag: Vec<f64>, beta: f64) -> Result<Self> {
        if offdiag.is_empty() || offdiag.len().is_multiple_of(2) {
            return Err(Error::InvalidInput("AG matrix needs 2N - 1 off-diagonal entries".into()));
        }
        if offdiag.iter().any(|&y| !(y > 0.0 && y.is_finite())) {
            return Err(Error::InvalidInput("AG off-diagonals must be positive".into()));
        }
        let n_pairs = offdiag.len().div_ceil(2);
        Ok(Self { offdiag, beta, n_pairs })
    }

    pub fn dense(&self) -> Mat<f64> {
        let n = 2 * self.n_pairs;
        let mut q = Mat::<f64>::zeros(n, n);
        for (j, &y) in self.offdiag.iter().enumerate() {
            q[(j, j + 1)] = y;
            q[(j + 1, j)] = -y;
        }
        q
    }
}

/// y_j = √g_j with g_j ~ Gamma(β(1 − j/2N)/2, 1), j = 1…2N−1.
pub fn sample_ag(beta: f64, n_pairs: usize, seed: u64) -> Result<AgMatrix> {
    let mut rng = rng_for(seed);
    sample_ag_with(beta, n_pairs, &mut rng)
}

pub fn sample_ag_with(beta: f64, n_pairs: usize, rng: &mut ChaCha8Rng) -> Result<AgMatrix> {
    if !(beta > 0.0) || n_pairs < 1 {
        return Err(Error::InvalidInput(format!("invalid AG parameters beta = {beta}, N = {n_pairs}")));
    }
    let two_n = 2 * n_pairs;
    let mut y = Vec::with_capacity(two_n - 1);
    for j in 1..two_n {
        let shape = 0.5 * beta * (1.0 - j as f64 / two_n as f64);
        let g = Gamma::new(shape, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
        // tiny shapes can underflow to zero; the smallest positive value is spectrally identical
        y.push(g.sample(rng).max(f64::MIN_POSITIVE).sqrt());
    }
    AgMatrix::new(y, beta)
}

const LANES: usize = 8;

/// Nonnegative frequencies w_k of the AG matrix, sorted descending.
///
/// The eigenvalues of the real symmetric tridiagonal S with zero diagonal and
/// off-diagonals y are ±w_k. Every positive eigenvalue is bisected on Sturm
/// counts; the counts for all of them run in lockstep so the inner loop
/// vectorizes across eigenvalue indices.
pub fn ag_eigs(m: &AgMatrix) -> Vec<f64> {
    let e2: Vec<f64> = m.offdiag.iter().map(|y| y * y).collect();
    let n = m.n_pairs;
    let size = 2 * n;
    let mut bound = 0.0f64;
    for i in 0..size {
        let left = if i > 0 { m.offdiag[i - 1] } else { 0.0 };
        let right = if i + 1 < size { m.offdiag[i] } else { 0.0 };
        bound = bound.max(left + right);
    }
    let max_e2 = e2.iter().cloned().fold(1.0f64, f64::max);
    let pivmin = f64::MIN_POSITIVE * max_e2;
    let hi0 = bound * (1.0 + 4.0 * f64::EPSILON) + 2.0 * pivmin;

    let mut out = vec![0.0; n];
    for chunk_start in (0..n).step_by(LANES) {
        let lanes = LANES.min(n - chunk_start);
        let mut lo = [0.0f64; LANES];
        let mut hi = [hi0; LANES];
        // lane l looks for the eigenvalue with ascending index n + chunk_start + l
        let mut target = [0u32; LANES];
        for l in 0..LANES {
            target[l] = (n + chunk_start + l.min(lanes - 1)) as u32;
        }
        loop {
            let mut done = true;
            for l in 0..lanes {
                let tol = 2.0 * f64::EPSILON * hi[l].abs().max(lo[l].abs()) + pivmin;
                if hi[l] - lo[l] > tol {
                    done = false;
                }
            }
            if done {
                break;
            }
            let mut mid = [0.0f64; LANES];
            for l in 0..LANES {
                mid[l] = 0.5 * (lo[l] + hi[l]);
            }
            let counts = sturm_counts(&e2, &mid, pivmin);
            for l in 0..LANES {
                if counts[l] > target[l] {
                    hi[l] = mid[l];
                } else {
                    lo[l] = mid[l];
                }
            }
        }
        for l in 0..lanes {
            out[chunk_start + l] = 0.5 * (lo[l] + hi[l]);
        }
    }
    out.sort_by(|a, b| b.partial_cmp(a).unwrap());
    out
}

/// Number of eigenvalues of S strictly below each shift.
#[inline]
fn sturm_counts(e2: &[f64], shifts: &[f64; LANES], pivmin: f64) -> [u32; LANES] {
    let mut q = [0.0f64; LANES];
    let mut cnt = [0u32; LANES];
    for l in 0..LANES {
        q[l] = -shifts[l];
        if q[l].abs() < pivmin {
            q[l] = -pivmin;
        }
        cnt[l] = (q[l] < 0.0) as u32;
    }
    for &e in e2 {
        for l in 0..LANES {
            let mut v = -shifts[l] - e / q[l];
            if v.abs() < pivmin {
                v = -pivmin;
            }
            q[l] = v;
            cnt[l] += (v < 0.0) as u32;
        }
    }
    cnt
}

/// Nonnegative frequencies of the periodic Lax matrix, sorted descending.
///
/// Dense Hermitian eigensolve on iL; the spectrum is symmetric so the upper
/// half is kept.
pub fn volterra_spectrum(state: &LatticeState) -> Result<Vec<f64>> {
    let l = build_lax(state)?;
    let n = state.sites();
    let il = Mat::<c64>::from_fn(n, n, |i, j| c64::new(0.0, l[(i, j)]));
    let eig = il
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Singular(format!("Hermitian eigensolve failed: {e:?}")))?;
    let mut w: Vec<f64> = eig.iter().rev().take(state.n_pairs()).map(|&x| x.max(0.0)).collect();
    w.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(w)
}

/// Density-normalized histogram of nonnegative frequencies on [0, w_max].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<f64>,
    pub n_samples: usize,
    /// fraction of all values that fell at or above w_max
    pub overflow: f64,
}

impl SpectrumHistogram {
    pub fn bin_width(&self, k: usize) -> f64 {
        self.bin_edges[k + 1] - self.bin_edges[k]
    }

    pub fn moment(&self, power: i32) -> f64 {
        (0..self.counts.len())
            .map(|k| {
                let c = 0.5 * (self.bin_edges[k] + self.bin_edges[k + 1]);
                c.powi(power) * self.counts[k] * self.bin_width(k)
            })
            .sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "bin_left,bin_right,density")?;
        for k in 0..self.counts.len() {
            writeln!(
                f,
                "{},{},{}",
                fmt_f64(self.bin_edges[k]),
                fmt_f64(self.bin_edges[k + 1]),
                fmt_f64(self.counts[k])
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Raw-count accumulator; merging is exact integer addition.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramAccumulator {
    w_max: f64,
    counts: Vec<u64>,
    overflow: u64,
    samples: usize,
}

impl HistogramAccumulator {
    pub fn new(bins: usize, w_max: f64) -> Result<Self> {
        if bins < 10 {
            return Err(Error::InvalidInput(format!("need at least 10 bins, got {bins}")));
        }
        if !(w_max > 0.0) {
            return Err(Error::InvalidInput("w_max must be positive".into()));
        }
        Ok(Self { w_max, counts: vec![0; bins], overflow: 0, samples: 0 })
    }

    pub fn add(&mut self, w: &[f64]) {
        let bins = self.counts.len();
        let scale = bins as f64 / self.w_max;
        for &x in w {
            if x >= self.w_max {
                self.overflow += 1;
            } else {
                let k = ((x.max(0.0) * scale) as usize).min(bins - 1);
                self.counts[k] += 1;
            }
        }
        self.samples += 1;
    }

    /// Bin the positive AG frequencies without computing them: the number
    /// below each bin edge is a Sturm count of S minus the N nonpositive
    /// eigenvalues.
    pub fn add_ag(&mut self, m: &AgMatrix) {
        let bins = self.counts.len();
        let e2: Vec<f64> = m.offdiag.iter().map(|y| y * y).collect();
        let pivmin = f64::MIN_POSITIVE * e2.iter().cloned().fold(1.0f64, f64::max);
        let n = m.n_pairs as u32;
        let edges: Vec<f64> = (1..=bins).map(|k| k as f64 * self.w_max / bins as f64).collect();
        let mut below = Vec::with_capacity(bins);
        for chunk in edges.chunks(LANES) {
            let mut shifts = [self.w_max; LANES];
            shifts[..chunk.len()].copy_from_slice(chunk);
            let c = sturm_counts(&e2, &shifts, pivmin);
            below.extend(c[..chunk.len()].iter().map(|&c| c.saturating_sub(n) as u64));
        }
        let mut prev = 0;
        for (k, &b) in below.iter().enumerate() {
            self.counts[k] += b - prev;
            prev = b;
        }
        self.overflow += m.n_pairs as u64 - prev;
        self.samples += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.overflow += other.overflow;
        self.samples += other.samples;
    }

    pub fn finish(&self) -> Result<SpectrumHistogram> {
        let inside: u64 = self.counts.iter().sum();
        if inside == 0 {
            return Err(Error::Empty("all spectral mass lies above w_max".into()));
        }
        let bins = self.counts.len();
        let width = self.w_max / bins as f64;
        let bin_edges = (0..=bins).map(|k| k as f64 * width).collect();
        let counts = self.counts.iter().map(|&c| c as f64 / (inside as f64 * width)).collect();
        Ok(SpectrumHistogram {
            bin_edges,
            counts,
            n_samples: self.samples,
            overflow: self.overflow as f64 / (inside + self.overflow) as f64,
        })
    }
}

/// Histogram of all w values, normalized to unit integral on [0, w_max].
pub fn empirical_dos(samples: &[Vec<f64>], bins: usize, w_max: f64) -> Result<SpectrumHistogram> {
    if samples.is_empty() {
        return Err(Error::Empty("no spectral samples".into()));
    }
    let mut acc = HistogramAccumulator::new(bins, w_max)?;
    for s in samples {
        acc.add(s);
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_block() {
        let m = AgMatrix::new(vec![1.7], 1.0).unwrap();
        let w = ag_eigs(&m);
        assert_eq!(w.len(), 1);
        assert!((w[0] - 1.7).abs() < 4.0 * f64::EPSILON);
    }

    #[test]
    fn sturm_binning_matches_eigenvalues() {
        for seed in 0..5 {
            let m = sample_ag(1.5, 60, seed).unwrap();
            let mut by_eigs = HistogramAccumulator::new(40, 4.0).unwrap();
            by_eigs.add(&ag_eigs(&m));
            let mut by_counts = HistogramAccumulator::new(40, 4.0).unwrap();
            by_counts.add_ag(&m);
            assert_eq!(by_eigs, by_counts);
        }
    }

    #[test]
    fn golden_ratio_four_by_four() {
        let m = AgMatrix::new(vec![1.0, 1.0, 1.0], 1.0).unwrap();
        let w = ag_eigs(&m);
        let phi = 0.5 * (1.0 + 5f64.sqrt());
        assert!((w[0] - phi).abs() < 1e-14);
        assert!((w[1] - (phi - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn ring_of_ones_spectrum() {
        let s = LatticeState::uniform(2, 1.0).unwrap();
        let w = volterra_spectrum(&s).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-12 && w[1].abs() < 1e-7);
    }

    #[test]
    fn quadratic_potential_on_imaginary_axis() {
        let p = GgeParams::quadratic(1.5).unwrap();
        assert_eq!(p.v_imag_sum(2.0), -4.0);
        // V = -x^4 + x^2: V(iw) = -w^4 - w^2
        let q = GgeParams::new(1.0, vec![1.0, 1.0]).unwrap();
        assert_eq!(q.v_imag_sum(2.0), 2.0 * (-16.0 - 4.0));
    }

    #[test]
    fn histogram_single_vector() {
        let h = empirical_dos(&[vec![1.0, 1.0, 1.0]], 10, 2.0).unwrap();
        let nonzero: Vec<_> = h.counts.iter().filter(|&&c| c > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        let total: f64 = (0..10).map(|k| h.counts[k] * h.bin_width(k)).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_rejects_all_overflow() {
        assert!(matches!(empirical_dos(&[vec![5.0]], 10, 2.0), Err(Error::Empty(_))));
        assert!(empirical_dos(&[vec![1.0]], 5, 2.0).is_err());
    }

    #[test]
    fn non_quadratic_gge_sampling_is_rejected() {
        let q = GgeParams::new(1.0, vec![1.0, 1.0]).unwrap();
        assert!(matches!(sample_gge(&q, 4, 1), Err(Error::UnsupportedPotential(_))));
    }
}
