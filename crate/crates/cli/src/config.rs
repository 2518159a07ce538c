//! TOML run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use volterra_ghd::dos::SolverParams;
use volterra_ghd::ensembles::GgeParams;
use volterra_ghd::grid::{GridParams, RadialGrid, DEFAULT_CORE_SCALE};
use volterra_ghd::lattice::CurrentConvention;
use volterra_ghd::md::MdPlan;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub beta: f64,
    /// c_1, …, c_ℓ of the potential; x²/2 when omitted
    #[serde(default = "default_potential")]
    pub potential: Vec<f64>,
    /// output directory; `--out` takes precedence
    #[serde(default, skip_serializing)]
    pub out: Option<String>,
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub dos: DosSection,
    #[serde(default)]
    pub ghd: GhdSection,
    pub md: Option<MdSection>,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
}

fn default_potential() -> Vec<f64> {
    vec![0.5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub m: usize,
    /// max(6, 4√β) when omitted
    pub w_max: Option<f64>,
    #[serde(default = "default_core_scale")]
    pub core_scale: f64,
}

fn default_core_scale() -> f64 {
    DEFAULT_CORE_SCALE
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DosSection {
    /// compare with the closed-form density (x²/2 only)
    #[serde(default)]
    pub whittaker_check: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GhdSection {
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// (m, n) pairs whose Euler-scale curves are written
    #[serde(default = "default_pairs")]
    pub curves: Vec<(usize, usize)>,
}

fn default_n_max() -> usize {
    3
}

fn default_pairs() -> Vec<(usize, usize)> {
    vec![(0, 0), (0, 1), (1, 1)]
}

impl Default for GhdSection {
    fn default() -> Self {
        Self { n_max: default_n_max(), curves: default_pairs() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdSection {
    pub n_pairs: usize,
    pub trials: usize,
    pub times: Vec<f64>,
    #[serde(default = "default_md_tol")]
    pub tol: f64,
    pub seed: u64,
    #[serde(default = "default_md_fields")]
    pub fields: Vec<(usize, usize)>,
    #[serde(default = "default_convention")]
    pub convention: CurrentConvention,
    /// trials per checkpoint
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_md_tol() -> f64 {
    1e-9
}

fn default_md_fields() -> Vec<(usize, usize)> {
    vec![(0, 0)]
}

fn default_convention() -> CurrentConvention {
    CurrentConvention::Lax
}

fn default_batch() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// left end of the smooth-region window
    #[serde(default = "default_xi_lo")]
    pub xi_lo: f64,
    /// the window stops this far before ξ₀
    #[serde(default = "default_shock_margin")]
    pub shock_margin: f64,
    /// sign changes are counted on ξ₀ ± this
    #[serde(default = "default_halfwidth")]
    pub oscillation_halfwidth: f64,
    /// only points this many standard errors from zero carry a sign
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
}

fn default_xi_lo() -> f64 {
    -4.0
}

fn default_shock_margin() -> f64 {
    0.2
}

fn default_halfwidth() -> f64 {
    0.3
}

fn default_sigmas() -> f64 {
    2.0
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            xi_lo: default_xi_lo(),
            shock_margin: default_shock_margin(),
            oscillation_halfwidth: default_halfwidth(),
            sigmas: default_sigmas(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_pairs: usize,
    pub samples: usize,
    pub bins: usize,
    pub seed: u64,
    /// lower end of the L¹ comparison
    pub l1_lo: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self { n_pairs: 400, samples: 20_000, bins: 120, seed: 1, l1_lo: 0.2 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.gge()?;
        self.grid()?;
        if let Some(md) = &self.md {
            if md.batch == 0 {
                return Err(CliError::Usage("md.batch must be at least 1".into()));
            }
            self.md_plan_for(md).validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if self.ghd.curves.iter().any(|&(m, n)| m.max(n) > self.ghd.n_max) {
            return Err(CliError::Usage("ghd.curves index exceeds ghd.n_max".into()));
        }
        Ok(())
    }

    pub fn gge(&self) -> Result<GgeParams, CliError> {
        GgeParams::new(self.beta, self.potential.clone()).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn grid_params(&self) -> GridParams {
        GridParams {
            w_max: self.grid.w_max.unwrap_or_else(|| RadialGrid::default_w_max(self.beta)),
            m: self.grid.m,
            core_scale: self.grid.core_scale,
        }
    }

    pub fn grid(&self) -> Result<RadialGrid, CliError> {
        RadialGrid::from_params(&self.grid_params()).map_err(|e| CliError::Usage(e.to_string()))
    }

    fn md_plan_for(&self, md: &MdSection) -> MdPlan {
        let n_max = md.fields.iter().map(|&(m, n)| m.max(n)).max().unwrap_or(0);
        MdPlan {
            gge: GgeParams { beta: self.beta, potential: self.potential.clone() },
            n_pairs: md.n_pairs,
            trials: md.trials,
            times: md.times.clone(),
            fields: md.fields.clone(),
            base_seed: md.seed,
            tol: md.tol,
            convention: md.convention,
            n_max,
            use_fft: true,
        }
    }

    pub fn md_plan(&self) -> Result<(MdPlan, &MdSection), CliError> {
        let md = self.md.as_ref().ok_or_else(|| CliError::Usage("config has no [md] section".into()))?;
        Ok((self.md_plan_for(md), md))
    }

    /// `--seed` replaces every seed in the file.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(md) = &mut self.md {
            md.seed = seed;
        }
        self.ensemble.seed = seed;
    }

    /// SHA-256 of the canonical JSON form; the output directory is excluded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "beta = 1.5\n[grid]\nm = 100\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.potential, vec![0.5]);
        assert_eq!(c.grid_params().w_max, 6.0);
        assert_eq!(c.ghd.curves.len(), 3);
        assert!(c.md.is_none());
    }

    #[test]
    fn unknown_and_missing_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("beta = 1.5\n[grid]\nm = 100\nextra = 1\n"), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::parse("[grid]\nm = 100\n"), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::parse("beta = -1.0\n[grid]\nm = 100\n"), Err(CliError::Usage(_))));
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```toml\n").unwrap() + 8;
        let len = readme[start..].find("```").unwrap();
        let c = RunConfig::parse(&readme[start..start + len]).unwrap();
        assert_eq!(c.md.unwrap().convention, CurrentConvention::Lax);
    }

    #[test]
    fn hash_tracks_content_but_not_output_dir() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.beta = 1.6;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
