//! Scenario files (TOML).
//!
//! Required keys: `name`, `nx`, `ny`, `a_plus`, `[coefficient]`, `[u0]`.
//! Everything else has a default:
//!
//! | key | default |
//! |-----|---------|
//! | `modes` | 40 |
//! | `cluster_tol` | 1e-6 |
//! | `t` | 1.0 |
//! | `t_grid` | 9 points on [1, 5] |
//! | `gamma`, `delta` | 0.0, 1.0 |
//! | `band_epsilon` | 0.1 |
//! | `noise` | 0.0 (H2-surrogate norm of the data perturbation) |
//! | `seed` | 0 |
//! | `[inversion]` | `alpha = 1e-8`, `tol_fp = 1e-8`, `max_iter = 50`, `target_rel_error = 0.02`, `t_sweep = []` |
//! | `[spectral]` | `eta = [[1, 1, 0.01]]`, `scales = [1e-3, 1e-2, 1e-1]`, `eta_hat = 0.05`, `eig_modes = 10`, `proj_modes = 5` |
//! | `[stability]` | `perturbation = [[1, 1, 0.05]]` |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::catalog::{CoefficientSpec, Direction, InitialSpec};
use crate::error::{Error, Result};
use crate::fem::check_admissible;
use crate::fit::linspace;
use crate::mesh::build_structured_mesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub nx: usize,
    pub ny: usize,
    pub a_plus: f64,
    #[serde(default = "defaults::modes")]
    pub modes: usize,
    #[serde(default = "defaults::cluster_tol")]
    pub cluster_tol: f64,
    #[serde(default = "defaults::t")]
    pub t: f64,
    #[serde(default = "defaults::t_grid")]
    pub t_grid: Vec<f64>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::band_epsilon")]
    pub band_epsilon: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    pub coefficient: CoefficientSpec,
    pub u0: InitialSpec,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub alpha: f64,
    pub tol_fp: f64,
    pub max_iter: usize,
    pub target_rel_error: f64,
    /// Extra data times for a rel-error-versus-T sweep; empty disables it.
    pub t_sweep: Vec<f64>,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-8,
            tol_fp: 1e-8,
            max_iter: 50,
            target_rel_error: 0.02,
            t_sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    pub eta: Direction,
    pub scales: Vec<f64>,
    pub eta_hat: f64,
    pub eig_modes: usize,
    pub proj_modes: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            eta: Direction {
                terms: vec![(1, 1, 0.01)],
            },
            scales: vec![1e-3, 1e-2, 1e-1],
            eta_hat: 0.05,
            eig_modes: 10,
            proj_modes: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub perturbation: Direction,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            perturbation: Direction {
                terms: vec![(1, 1, 0.05)],
            },
        }
    }
}

mod defaults {
    pub fn modes() -> usize {
        40
    }
    pub fn cluster_tol() -> f64 {
        1e-6
    }
    pub fn t() -> f64 {
        1.0
    }
    pub fn t_grid() -> Vec<f64> {
        super::linspace(1.0, 5.0, 9)
    }
    pub fn delta() -> f64 {
        1.0
    }
    pub fn band_epsilon() -> f64 {
        0.1
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario fields are all serializable")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml_string().as_bytes()))
    }

    /// Structural checks plus admissibility of the coefficient on the mesh.
    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::invalid(format!("grid must be at least 2x2, got {}x{}", self.nx, self.ny)));
        }
        if self.modes == 0 {
            return Err(Error::invalid("modes must be positive"));
        }
        if !(self.cluster_tol > 0.0) {
            return Err(Error::invalid("cluster_tol must be positive"));
        }
        if !(self.t > 0.0) {
            return Err(Error::invalid(format!("t must be positive, got {}", self.t)));
        }
        if let Some(t) = self.t_grid.iter().find(|t| !(**t > 0.0)) {
            return Err(Error::invalid(format!("t_grid entries must be positive, got {t}")));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::invalid("noise level must be nonnegative"));
        }
        if let Some(t) = self.inversion.t_sweep.iter().find(|t| !(**t > 0.0)) {
            return Err(Error::invalid(format!("inversion.t_sweep entries must be positive, got {t}")));
        }
        if !(self.inversion.alpha > 0.0) || !(self.inversion.tol_fp > 0.0) || self.inversion.max_iter == 0 {
            return Err(Error::invalid("inversion needs alpha > 0, tol_fp > 0 and max_iter >= 1"));
        }
        self.u0.validate()?;
        let mesh = build_structured_mesh(self.nx, self.ny)?;
        let a = self.coefficient.nodal(&mesh)?;
        check_admissible(&mesh, &a, self.a_plus)
    }
}

/// Reads and validates a scenario file. Errors carry the path and, for
/// syntax or schema problems, the line and key reported by the parser.
pub fn parse_config(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let attach = |e: Error| match e {
        Error::Config { message, .. } => Error::Config {
            path: path.to_path_buf(),
            message,
        },
        other => Error::Config {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    Scenario::from_toml_str(&text).map_err(attach)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
nx = 8
ny = 8
a_plus = 2.0

[coefficient]
kind = "constant"
value = 1.0

[u0]
kind = "d_Omega"
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.modes, 40);
        assert_eq!(s.t_grid.len(), 9);
        assert_eq!(s.inversion, InversionConfig::default());
        assert_eq!(s.band_epsilon, 0.1);
    }

    #[test]
    fn round_trip_is_identity() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        let again = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.hash(), again.hash());
    }

    #[test]
    fn unknown_key_is_named() {
        let text = format!("betta = 1.0\n{MINIMAL}");
        let err = Scenario::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("betta"), "{err}");
    }

    #[test]
    fn coefficient_below_one_names_node() {
        let text = MINIMAL.replace("value = 1.0", "value = 0.5");
        match Scenario::from_toml_str(&text) {
            Err(Error::NotAdmissible { node, .. }) => assert_eq!(node, 0),
            other => panic!("unexpected {other:?}"),
        }
        let text = MINIMAL.replace("kind = \"constant\"\nvalue = 1.0", "kind = \"affine\"\nc0 = 1.2\ncx = -0.5\ncy = 0.0");
        let err = Scenario::from_toml_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("node"), "{msg}");
    }

    #[test]
    fn out_of_catalog_id_rejected() {
        let text = MINIMAL.replace("kind = \"d_Omega\"", "kind = \"gaussian\"");
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn missing_required_key_rejected() {
        let text = MINIMAL.replace("a_plus = 2.0\n", "");
        let err = Scenario::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("a_plus"), "{err}");
    }
}
