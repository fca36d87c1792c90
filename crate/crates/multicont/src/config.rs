//! Run configuration: TOML file loading, validation, defaults, and the
//! configuration hash used for artifact provenance.

use crate::grid::{default_layers, CoarseGrid, FineGrid};
use crate::media::{ContrastSpec, MediumParams};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::Digest;
use std::path::PathBuf;

/// Which conductivity field to run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    /// Horizontal layers, contrast scaling with the period.
    Case1,
    /// Horizontal layers, fixed contrast 1e-4 / 0.1.
    Case1Fixed,
    /// Periodic crossing-channel network.
    Case2,
    /// Smoothly modulated (non-periodic) channel network.
    Case3,
    /// Conductivity and labels read from `kappa_file`.
    File,
}

/// Oversampling depth: a fixed layer count or "auto" (depth growing like
/// -2 ln H with the coarse mesh size H).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayersSpec {
    Fixed(usize),
    Auto(AutoTag),
}

/// The literal string "auto" in TOML.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl Default for LayersSpec {
    fn default() -> Self {
        LayersSpec::Auto(AutoTag::Auto)
    }
}

impl LayersSpec {
    pub fn resolve(&self, big_h: f64) -> usize {
        match *self {
            LayersSpec::Fixed(l) => l,
            LayersSpec::Auto(_) => default_layers(big_h),
        }
    }
}

/// How continuum labels are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuumSource {
    /// Use the labels produced by the medium generator.
    Generator,
    /// Identify continua from the smallest eigenfunctions of the local
    /// spectral problem.
    Spectral,
}

fn default_nx() -> usize {
    400
}
fn default_m() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_outdir() -> PathBuf {
    PathBuf::from("out")
}
fn default_tol() -> f64 {
    1e-10
}
fn default_eig_count() -> usize {
    8
}
fn default_gap_threshold() -> f64 {
    crate::spectral::GAP_THRESHOLD
}
fn default_source() -> ContinuumSource {
    ContinuumSource::Generator
}

/// Full description of a run. Serializable to/from TOML; unknown keys are
/// rejected so typos fail loudly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: CaseKind,
    /// Fine cells per side.
    #[serde(default = "default_nx")]
    pub nx: usize,
    /// Coarse cells per side.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Medium period; required for the generated cases.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Oversampling depth ("auto" or a fixed count).
    #[serde(default)]
    pub layers: LayersSpec,
    /// Overrides the case's default contrast when set.
    #[serde(default)]
    pub contrast: Option<ContrastSpec>,
    /// Case 1: high-conductivity volume fraction per period.
    #[serde(default)]
    pub high_fraction: Option<f64>,
    /// Case 2/3: channel width as a fraction of the period.
    #[serde(default)]
    pub channel_width: Option<f64>,
    /// Case 3: modulation amplitude.
    #[serde(default)]
    pub modulation: Option<f64>,
    /// Where continuum labels come from.
    #[serde(default = "default_source")]
    pub continuum_source: ContinuumSource,
    /// Include the convective coupling terms in the coarse system.
    #[serde(default = "default_true")]
    pub cross_terms: bool,
    /// Use gradient-constrained (single-region) cell problems instead of
    /// oversampled average/moment constraints. Diagnostic mode.
    #[serde(default)]
    pub gradient_constraint: bool,
    /// Dump per-region cell-solution fields as heatmaps.
    #[serde(default)]
    pub dump_cells: bool,
    /// Conductivity CSV for `case = "file"`.
    #[serde(default)]
    pub kappa_file: Option<PathBuf>,
    #[serde(default = "default_outdir")]
    pub outdir: PathBuf,
    /// Linear-solver residual tolerance.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Eigenpairs requested by spectral identification.
    #[serde(default = "default_eig_count")]
    pub eig_count: usize,
    /// Minimum eigenvalue ratio declared a spectral gap.
    #[serde(default = "default_gap_threshold")]
    pub gap_threshold: f64,
}

impl RunConfig {
    /// A valid default run: layered case 1 on the reference discretization.
    pub fn example() -> Self {
        RunConfig {
            case: CaseKind::Case1,
            nx: default_nx(),
            m: default_m(),
            epsilon: Some(1.0 / 10.0),
            layers: LayersSpec::default(),
            contrast: None,
            high_fraction: None,
            channel_width: None,
            modulation: None,
            continuum_source: default_source(),
            cross_terms: true,
            gradient_constraint: false,
            dump_cells: false,
            kappa_file: None,
            outdir: default_outdir(),
            tol: default_tol(),
            eig_count: default_eig_count(),
            gap_threshold: default_gap_threshold(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Short hex digest of the canonical TOML form, used in artifact headers.
    pub fn hash(&self) -> String {
        let digest = sha2::Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks grid/medium compatibility without building anything heavy.
    pub fn validate(&self) -> Result<()> {
        let fine = FineGrid::new(self.nx)?;
        CoarseGrid::new(fine, self.m)?;
        if self.m > self.nx {
            return Err(Error::Config(format!(
                "coarse cells M={} exceed fine cells nx={}",
                self.m, self.nx
            )));
        }
        match self.case {
            CaseKind::File => {
                if self.kappa_file.is_none() {
                    return Err(Error::Config(
                        "case = \"file\" requires kappa_file".into(),
                    ));
                }
            }
            _ => {
                let eps = self.epsilon.ok_or_else(|| {
                    Error::Config("generated cases require epsilon".into())
                })?;
                if !(eps > 0.0 && eps <= 1.0) {
                    return Err(Error::Config(format!("epsilon {eps} out of (0,1]")));
                }
                let cells = eps * self.nx as f64;
                if (cells - cells.round()).abs() > 1e-9 || cells < 2.0 - 1e-9 {
                    return Err(Error::Config(format!(
                        "epsilon={eps} is not resolved by nx={} (epsilon*nx must be an integer >= 2)",
                        self.nx
                    )));
                }
            }
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("tol {} out of (0,1)", self.tol)));
        }
        if self.eig_count < 2 {
            return Err(Error::Config("eig_count must be at least 2".into()));
        }
        if self.gap_threshold <= 1.0 {
            return Err(Error::Config("gap_threshold must exceed 1".into()));
        }
        Ok(())
    }

    /// Medium parameters with per-run overrides applied.
    pub fn medium_params(&self) -> MediumParams {
        let mut p = MediumParams::default();
        if let Some(c) = self.contrast {
            p.contrast = c;
        }
        if let Some(f) = self.high_fraction {
            p.high_fraction = f;
        }
        if let Some(w) = self.channel_width {
            p.channel_width = w;
        }
        if let Some(a) = self.modulation {
            p.modulation = a;
        }
        p
    }

    /// Oversampling depth for this run's coarse mesh.
    pub fn layers(&self) -> usize {
        self.layers.resolve(1.0 / self.m as f64)
    }
}
