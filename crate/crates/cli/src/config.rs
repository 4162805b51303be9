//! Experiment configuration: one TOML file describes the scan geometry,
//! the phantom, the per-resolution regularization table, and the solver
//! template. Every key has a default reproducing the shipped study, so a
//! partial file (or none at all) is valid; CLI flags override individual
//! keys after parsing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lartk::diffops::Boundary;
use lartk::error::{Error, Result};
use lartk::filters::{FilterKind, FilterSpec};
use lartk::geometry::{ScanGeometry, default_detector_length};
use lartk::phantom::{PhantomSpec, TissueWeights};
use lartk::solver::{BallUpdate, RelaxationScope, SolverConfig, SolverMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub n_views: usize,
    pub arc_span_deg: f64,
    pub source_to_isocenter_cm: f64,
    pub source_to_detector_cm: f64,
    pub n_detector_bins: usize,
    /// Defaults to the length whose fan covers the circle circumscribing
    /// the field of view at every view.
    pub detector_length_cm: Option<f64>,
    pub fov_side_cm: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            n_views: 25,
            arc_span_deg: 50.0,
            source_to_isocenter_cm: 50.0,
            source_to_detector_cm: 100.0,
            n_detector_bins: 1024,
            detector_length_cm: None,
            fov_side_cm: 10.0,
        }
    }
}

impl GeometryConfig {
    pub fn scan_geometry(&self) -> ScanGeometry {
        ScanGeometry {
            n_views: self.n_views,
            arc_span_deg: self.arc_span_deg,
            source_to_isocenter_cm: self.source_to_isocenter_cm,
            source_to_detector_cm: self.source_to_detector_cm,
            n_detector_bins: self.n_detector_bins,
            detector_length_cm: self.detector_length_cm.unwrap_or_else(|| {
                default_detector_length(
                    self.fov_side_cm,
                    self.source_to_isocenter_cm,
                    self.source_to_detector_cm,
                )
            }),
            fov_side_cm: self.fov_side_cm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub noise_exponent: f64,
    pub glandular_fraction: f64,
    pub n_calcifications: usize,
    pub calc_radius_px: [u32; 2],
    pub tissue_weights: TissueWeights,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let spec = PhantomSpec::default();
        PhantomConfig {
            noise_exponent: spec.noise_exponent,
            glandular_fraction: spec.glandular_fraction,
            n_calcifications: spec.n_calcifications,
            calc_radius_px: [spec.calc_radius_px.0, spec.calc_radius_px.1],
            tissue_weights: spec.tissue_weights,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBeta {
    pub resolution: usize,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub cutoff: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { kind: FilterKind::HannSqrt, cutoff: 4.0 }
    }
}

impl FilterConfig {
    fn spec(&self, n_bins: usize) -> FilterSpec {
        FilterSpec { kind: self.kind, cutoff_param: self.cutoff, n_bins }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverTemplate {
    pub rho: f64,
    pub n_iter: usize,
    pub sigma_ratio: f64,
    pub epsilon_hi: f64,
    /// `epsilon_lo = epsilon_lo_ratio * epsilon_hi`.
    pub epsilon_lo_ratio: f64,
    pub filter_single: FilterConfig,
    pub filter_hi: FilterConfig,
    pub filter_lo: FilterConfig,
    pub power_iters: usize,
    pub power_seed: u64,
    pub relaxation_scope: RelaxationScope,
    pub ball_update: BallUpdate,
    pub stability_margin: f64,
    pub step_balance: f64,
    pub boundary: Boundary,
    pub checkpoint_interval: Option<usize>,
}

impl Default for SolverTemplate {
    fn default() -> Self {
        let base = SolverConfig::two_channel(1024, 1.0, 1.0);
        SolverTemplate {
            rho: base.rho,
            n_iter: base.n_iter,
            sigma_ratio: base.sigma_ratio,
            epsilon_hi: base.epsilon_hi,
            epsilon_lo_ratio: 1.25,
            filter_single: FilterConfig { kind: FilterKind::HannSqrt, cutoff: 4.0 },
            filter_hi: FilterConfig { kind: FilterKind::HannSqrtComplement, cutoff: 4.0 },
            filter_lo: FilterConfig { kind: FilterKind::HannSqrt, cutoff: 8.0 },
            power_iters: base.power_iters,
            power_seed: base.power_seed,
            relaxation_scope: base.relaxation_scope,
            ball_update: base.ball_update,
            stability_margin: base.stability_margin,
            step_balance: base.step_balance,
            boundary: base.boundary,
            checkpoint_interval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumConfig {
    pub grid_n: usize,
    pub n_detector_bins: usize,
    /// Probe modes 0..=max_mode; defaults to grid_n / 2 - 1.
    pub max_mode: Option<usize>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig { grid_n: 64, n_detector_bins: 128, max_mode: None }
    }
}

/// Full experiment description. The defaults reproduce the shipped
/// three-resolution comparison study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Cheapest, most decisive comparison first.
    pub resolutions: Vec<usize>,
    /// When true, coarser phantoms are block-decimated from the finest
    /// resolution instead of regenerated natively per grid.
    pub downsample_from_base: bool,
    pub geometry: GeometryConfig,
    pub phantom: PhantomConfig,
    pub alpha_beta: Vec<AlphaBeta>,
    pub solver: SolverTemplate,
    pub spectrum: SpectrumConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            output_dir: PathBuf::from("runs"),
            resolutions: vec![128, 256, 512],
            downsample_from_base: false,
            geometry: GeometryConfig::default(),
            phantom: PhantomConfig::default(),
            alpha_beta: vec![
                AlphaBeta { resolution: 128, alpha: 1.95, beta: 10.0 },
                AlphaBeta { resolution: 256, alpha: 1.9, beta: 10.0 },
                AlphaBeta { resolution: 512, alpha: 1.7, beta: 5.0 },
            ],
            solver: SolverTemplate::default(),
            spectrum: SpectrumConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("serialize config: {e}")))
    }

    /// Config echo embedded in every output sidecar.
    pub fn echo_table(&self) -> Result<toml::Table> {
        let text = self.to_toml()?;
        let table: toml::Table = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("re-parse config: {e}")))?;
        let mut wrapper = toml::Table::new();
        wrapper.insert("config".into(), toml::Value::Table(table));
        Ok(wrapper)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.scan_geometry().validate()?;
        if self.resolutions.is_empty() {
            return Err(Error::InvalidConfig("resolutions must be nonempty".into()));
        }
        for &r in &self.resolutions {
            self.alpha_beta_for(r)?;
            self.phantom_spec(r).validate()?;
        }
        // instantiate one solver config to validate the template fields
        self.solver_config(self.resolutions[0], SolverMode::TwoChannel)?;
        if self.spectrum.grid_n < 8 || self.spectrum.n_detector_bins < 2 {
            return Err(Error::InvalidConfig("spectrum grid too small".into()));
        }
        Ok(())
    }

    pub fn alpha_beta_for(&self, resolution: usize) -> Result<AlphaBeta> {
        self.alpha_beta
            .iter()
            .find(|ab| ab.resolution == resolution)
            .copied()
            .ok_or_else(|| {
                Error::InvalidConfig(format!("no (alpha, beta) entry for resolution {resolution}"))
            })
    }

    pub fn scan_geometry(&self) -> ScanGeometry {
        self.geometry.scan_geometry()
    }

    pub fn phantom_spec(&self, resolution: usize) -> PhantomSpec {
        PhantomSpec {
            n_pixels: resolution,
            seed: self.seed,
            noise_exponent: self.phantom.noise_exponent,
            glandular_fraction: self.phantom.glandular_fraction,
            n_calcifications: self.phantom.n_calcifications,
            calc_radius_px: (self.phantom.calc_radius_px[0], self.phantom.calc_radius_px[1]),
            tissue_weights: self.phantom.tissue_weights,
            fov_side_cm: self.geometry.fov_side_cm,
        }
    }

    pub fn solver_config(&self, resolution: usize, mode: SolverMode) -> Result<SolverConfig> {
        let ab = self.alpha_beta_for(resolution)?;
        let t = &self.solver;
        let n_bins = self.geometry.n_detector_bins;
        let cfg = SolverConfig {
            mode,
            alpha_x: ab.alpha,
            alpha_z: ab.alpha,
            beta: ab.beta,
            epsilon_hi: t.epsilon_hi,
            epsilon_lo: t.epsilon_lo_ratio * t.epsilon_hi,
            sigma_ratio: t.sigma_ratio,
            rho: t.rho,
            n_iter: t.n_iter,
            filter_hi: match mode {
                SolverMode::Single => t.filter_single.spec(n_bins),
                SolverMode::TwoChannel => t.filter_hi.spec(n_bins),
            },
            filter_lo: match mode {
                SolverMode::Single => None,
                SolverMode::TwoChannel => Some(t.filter_lo.spec(n_bins)),
            },
            power_iters: t.power_iters,
            power_seed: t.power_seed,
            relaxation_scope: t.relaxation_scope,
            ball_update: t.ball_update,
            stability_margin: t.stability_margin,
            step_balance: t.step_balance,
            boundary: t.boundary,
            checkpoint_interval: t.checkpoint_interval,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: ExperimentConfig =
            toml::from_str("seed = 99\n[solver]\nn_iter = 7\n").unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.solver.n_iter, 7);
        assert_eq!(cfg.geometry.n_views, 25);
        assert_eq!(cfg.resolutions, vec![128, 256, 512]);
    }

    #[test]
    fn missing_alpha_beta_is_validation_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.resolutions = vec![64];
        let err = cfg.validate().unwrap_err();
        assert!(err.is_validation(), "{err}");
    }

    #[test]
    fn paper_solver_config_shapes() {
        let cfg = ExperimentConfig::default();
        let two = cfg.solver_config(128, SolverMode::TwoChannel).unwrap();
        assert_eq!(two.alpha_x, 1.95);
        assert_eq!(two.beta, 10.0);
        assert!((two.epsilon_lo - 1.25 * two.epsilon_hi).abs() < 1e-18);
        assert!(two.filter_lo.is_some());
        let single = cfg.solver_config(512, SolverMode::Single).unwrap();
        assert_eq!(single.alpha_x, 1.7);
        assert_eq!(single.beta, 5.0);
        assert!(single.filter_lo.is_none());
        assert_eq!(single.filter_hi.kind, FilterKind::HannSqrt);
    }
}
