//! Pipeline configuration, read from TOML. Every field has a desk-scale default.

use crate::geometry::{DeformedGeometry, MeshParams, RotationProfile};
use crate::spaces::{PushMode, SpaceKind};
use crate::{Error, ParameterBox, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub n_circ: usize,
    pub n_rad: usize,
    pub alpha: f64,
    pub outer_radius: f64,
    pub thickness: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { n_circ: 48, n_rad: 16, alpha: 1.2, outer_radius: 10.0, thickness: 0.15 }
    }
}

impl MeshConfig {
    pub fn params(&self) -> MeshParams {
        MeshParams {
            n_circ: self.n_circ,
            n_rad: self.n_rad,
            grading: self.alpha,
            outer_radius: self.outer_radius,
            thickness_ratio: self.thickness,
        }
    }

    pub fn from_params(p: &MeshParams) -> Self {
        Self { n_circ: p.n_circ, n_rad: p.n_rad, alpha: p.grading, outer_radius: p.outer_radius, thickness: p.thickness_ratio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterConfig {
    pub phi_min_deg: f64,
    pub phi_max_deg: f64,
    pub uinf_min: f64,
    pub uinf_max: f64,
}

impl Default for ParameterConfig {
    fn default() -> Self {
        Self { phi_min_deg: -35.0, phi_max_deg: 35.0, uinf_min: 1.0, uinf_max: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: SpaceKind,
    /// defaults to the space's natural push-forward
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formulation: Option<PushMode>,
}

impl MethodConfig {
    pub fn new(kind: SpaceKind) -> Self {
        Self { kind, formulation: None }
    }

    pub fn mode(&self) -> PushMode {
        self.formulation.unwrap_or(self.kind.default_push())
    }

    /// File-name tag, e.g. "dc" or "th-piola" for a non-default pairing.
    pub fn tag(&self) -> String {
        match self.formulation {
            Some(m) if m != self.kind.default_push() => format!("{}-{}", self.kind.short(), if m == PushMode::Piola { "piola" } else { "canonical" }),
            _ => self.kind.short().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mesh: MeshConfig,
    pub nu: f64,
    pub parameters: ParameterConfig,
    pub series_order: usize,
    /// Gauss points per parameter direction
    pub ensemble_grid: [usize; 2],
    pub methods: Vec<MethodConfig>,
    pub basis_sizes: Vec<usize>,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mesh: MeshConfig::default(),
            nu: 1.0 / 6.0,
            parameters: ParameterConfig::default(),
            series_order: 12,
            ensemble_grid: [7, 7],
            methods: vec![MethodConfig::new(SpaceKind::TaylorHood), MethodConfig::new(SpaceKind::DivConforming)],
            basis_sizes: vec![5, 10, 15, 20],
            solver: SolverConfig::default(),
            seed: 20240611,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn param_box(&self) -> ParameterBox {
        ParameterBox {
            phi_min: self.parameters.phi_min_deg.to_radians(),
            phi_max: self.parameters.phi_max_deg.to_radians(),
            uinf_min: self.parameters.uinf_min,
            uinf_max: self.parameters.uinf_max,
        }
    }

    pub fn geometry(&self) -> Result<DeformedGeometry> {
        DeformedGeometry::new(RotationProfile::default(), self.series_order, self.param_box().phi_abs_max())
    }

    pub fn max_basis_size(&self) -> usize {
        self.basis_sizes.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        let p = &self.parameters;
        if !(p.phi_min_deg < p.phi_max_deg) || !(p.uinf_min < p.uinf_max) || p.uinf_min <= 0.0 {
            return bad(format!("empty or invalid parameter box {p:?}"));
        }
        if p.phi_min_deg.abs().max(p.phi_max_deg.abs()) >= 90.0 {
            return bad("angles must stay below 90 degrees".into());
        }
        if !(self.nu > 0.0) {
            return bad(format!("viscosity must be positive, got {}", self.nu));
        }
        if self.ensemble_grid.contains(&0) {
            return bad("ensemble grid needs at least one point per direction".into());
        }
        if self.methods.is_empty() {
            return bad("no methods configured".into());
        }
        if self.basis_sizes.is_empty() || self.basis_sizes.contains(&0) {
            return bad("basis sizes must be a nonempty list of positive counts".into());
        }
        let n = self.ensemble_grid[0] * self.ensemble_grid[1];
        if self.max_basis_size() > n {
            return bad(format!("basis size {} exceeds the {n} snapshots", self.max_basis_size()));
        }
        self.geometry()?;
        Ok(())
    }

    /// Series accuracy warning, if any.
    pub fn warnings(&self) -> Vec<String> {
        self.geometry().ok().and_then(|g| g.accuracy_warning()).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert!(c.warnings().is_empty());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = PipelineConfig::from_toml("series_order = 4\n[mesh]\nn_circ = 24\n").unwrap();
        assert_eq!(c.series_order, 4);
        assert_eq!(c.mesh.n_circ, 24);
        assert_eq!(c.mesh.n_rad, 16);
        let w = c.warnings();
        assert_eq!(w.len(), 1);
        // 0.611^4/24
        assert!(w[0].contains("5.8"), "{}", w[0]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_toml("nu = -1.0").is_err());
        assert!(PipelineConfig::from_toml("basis_sizes = [60]").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml("[[methods]]\nkind = \"raviart\"").is_err());
    }

    #[test]
    fn method_tags() {
        assert_eq!(MethodConfig::new(SpaceKind::DivConforming).tag(), "dc");
        let m = MethodConfig { kind: SpaceKind::TaylorHood, formulation: Some(PushMode::Piola) };
        assert_eq!(m.tag(), "th-piola");
        assert_eq!(m.mode(), PushMode::Piola);
    }
}
