//! Rescaled MD profiles against Euler-scale GHD curves.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghd::GhdCurve;
use crate::io::fmt_f64;
use crate::md::RescaledProfile;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompareRow {
    pub t: f64,
    pub xi: f64,
    pub md: f64,
    pub md_stderr: f64,
    /// interpolated curve value; NaN beyond ξ₀ and inside the unresolved zone
    pub ghd: f64,
}

/// Join a profile with the curve evaluated on the profile's ξ values.
pub fn join(profile: &RescaledProfile, curve: &GhdCurve) -> Vec<CompareRow> {
    profile
        .xi
        .iter()
        .enumerate()
        .map(|(i, &xi)| CompareRow {
            t: profile.t,
            xi,
            md: profile.value[i],
            md_stderr: profile.stderr[i],
            ghd: if xi > curve.xi0 { f64::NAN } else { curve.interpolate(xi) },
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub t: f64,
    pub window: (f64, f64),
    /// (1/|window|) Σ |md − ghd| Δξ over rows in the window
    pub mean_abs_deviation: f64,
    /// same with both sides replaced by their magnitudes, insensitive to an
    /// overall sign convention
    pub mean_magnitude_deviation: f64,
    /// largest |curve| in the window
    pub ghd_peak: f64,
    /// same average of the MD standard errors
    pub mean_stderr: f64,
    pub rows: usize,
}

pub fn window_metrics(rows: &[CompareRow], lo: f64, hi: f64) -> Result<WindowMetrics> {
    let sel: Vec<&CompareRow> = rows.iter().filter(|r| r.xi >= lo && r.xi <= hi && r.ghd.is_finite()).collect();
    if sel.len() < 2 {
        return Err(Error::Empty(format!("fewer than two comparable points in [{lo}, {hi}]")));
    }
    let dxi = sel[1].xi - sel[0].xi;
    let span = dxi * sel.len() as f64;
    let dev = sel.iter().map(|r| (r.md - r.ghd).abs()).sum::<f64>() * dxi / span;
    let mag = sel.iter().map(|r| (r.md.abs() - r.ghd.abs()).abs()).sum::<f64>() * dxi / span;
    let se = sel.iter().map(|r| r.md_stderr).sum::<f64>() * dxi / span;
    let peak = sel.iter().map(|r| r.ghd.abs()).fold(0.0, f64::max);
    Ok(WindowMetrics {
        t: rows[0].t,
        window: (lo, hi),
        mean_abs_deviation: dev,
        mean_magnitude_deviation: mag,
        ghd_peak: peak,
        mean_stderr: se,
        rows: sel.len(),
    })
}

/// Sign changes of the MD profile in [lo, hi], counting only points that
/// differ from zero by more than `sigmas` standard errors.
pub fn sign_changes(rows: &[CompareRow], lo: f64, hi: f64, sigmas: f64) -> usize {
    let signs: Vec<bool> = rows
        .iter()
        .filter(|r| r.xi >= lo && r.xi <= hi && r.md.abs() > sigmas * r.md_stderr && r.md != 0.0)
        .map(|r| r.md > 0.0)
        .collect();
    signs.windows(2).filter(|p| p[0] != p[1]).count()
}

/// Smallest curve value on [lo, min(hi, ξ₀)], skipping unresolved points.
pub fn curve_min(curve: &GhdCurve, lo: f64, hi: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.xi >= lo && p.xi <= hi.min(curve.xi0) && !p.diverged)
        .map(|p| p.value)
        .fold(f64::INFINITY, f64::min)
}

/// CSV with columns `t,xi,md,md_stderr,ghd`.
pub fn write_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,xi,md,md_stderr,ghd")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            fmt_f64(r.t),
            fmt_f64(r.xi),
            fmt_f64(r.md),
            fmt_f64(r.md_stderr),
            fmt_f64(r.ghd)
        )?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ghd::CurvePoint;

    fn curve() -> GhdCurve {
        let points = (0..=10)
            .map(|i| CurvePoint { w: 1.0 - 0.1 * i as f64, xi: -1.0 + 0.2 * i as f64, value: 1.0, diverged: false })
            .collect();
        GhdCurve { m: 0, n: 0, xi0: 1.0, points }
    }

    fn profile(values: Vec<f64>) -> RescaledProfile {
        let n = values.len();
        RescaledProfile {
            t: 1.0,
            xi: (0..n).map(|i| -1.0 + 2.5 * i as f64 / (n - 1) as f64).collect(),
            value: values,
            stderr: vec![0.01; n],
        }
    }

    #[test]
    fn curve_is_nan_beyond_shock() {
        let rows = join(&profile(vec![1.0; 11]), &curve());
        for r in &rows {
            assert_eq!(r.ghd.is_nan(), r.xi > 1.0, "xi = {}", r.xi);
        }
    }

    #[test]
    fn perfect_agreement_has_zero_deviation() {
        let rows = join(&profile(vec![1.0; 11]), &curve());
        let m = window_metrics(&rows, -1.0, 0.8).unwrap();
        assert!(m.mean_abs_deviation.abs() < 1e-15);
        assert_eq!(m.ghd_peak, 1.0);
    }

    #[test]
    fn magnitude_deviation_ignores_a_flipped_sign() {
        let rows = join(&profile(vec![-1.0; 11]), &curve());
        let m = window_metrics(&rows, -1.0, 0.8).unwrap();
        assert!((m.mean_abs_deviation - 2.0).abs() < 1e-12);
        assert!(m.mean_magnitude_deviation.abs() < 1e-15);
    }

    #[test]
    fn counts_significant_sign_changes_only() {
        let rows = join(&profile(vec![1.0, -1.0, 1.0, -0.001, 1.0, 1.0]), &curve());
        assert_eq!(sign_changes(&rows, -10.0, 10.0, 2.0), 2);
        assert_eq!(sign_changes(&rows, -10.0, 10.0, 0.0), 4);
    }
}
