//! Closed catalogs of coefficients, initial conditions and perturbation
//! directions that scenarios may reference.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{distance_to_boundary, read_grid, Mesh};
use crate::spectral::SpectralDecomposition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant {
        value: f64,
    },
    /// `c0 + cx x + cy y`.
    Affine {
        c0: f64,
        cx: f64,
        cy: f64,
    },
    /// `1 + amplitude (b - b_c)_+ / (1 - b_c)` with `b = exp(-|x - c|^2 / width)`
    /// and `b_c` the value of `b` at the nearest boundary point, so the field
    /// equals 1 on the boundary.
    GaussianBump {
        amplitude: f64,
        center: [f64; 2],
        width: f64,
    },
    /// Sum of two truncated bumps sharing one width.
    TwoBump {
        amplitudes: [f64; 2],
        centers: [[f64; 2]; 2],
        width: f64,
    },
}

impl CoefficientSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Self::Constant { value } if !value.is_finite() => Err(Error::invalid("constant coefficient must be finite")),
            Self::Affine { c0, cx, cy } if !finite(&[*c0, *cx, *cy]) => {
                Err(Error::invalid("affine coefficient parameters must be finite"))
            }
            Self::GaussianBump { amplitude, center, width } => check_bump(*amplitude, *center, *width),
            Self::TwoBump { amplitudes, centers, width } => {
                check_bump(amplitudes[0], centers[0], *width)?;
                check_bump(amplitudes[1], centers[1], *width)
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Affine { c0, cx, cy } => c0 + cx * x + cy * y,
            Self::GaussianBump { amplitude, center, width } => 1.0 + truncated_bump(x, y, *amplitude, *center, *width),
            Self::TwoBump { amplitudes, centers, width } => {
                1.0 + truncated_bump(x, y, amplitudes[0], centers[0], *width)
                    + truncated_bump(x, y, amplitudes[1], centers[1], *width)
            }
        }
    }

    pub fn nodal(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(mesh.interpolate(|x, y| self.eval(x, y)))
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self {
            Self::Constant { value } => Some(*value),
            _ => None,
        }
    }
}

fn check_bump(amplitude: f64, center: [f64; 2], width: f64) -> Result<()> {
    if !(width > 0.0) || !amplitude.is_finite() {
        return Err(Error::invalid(format!(
            "bump needs a finite amplitude and positive width (got {amplitude}, {width})"
        )));
    }
    if !center.iter().all(|c| *c > 0.0 && *c < 1.0) {
        return Err(Error::invalid(format!("bump center {center:?} must lie inside the unit square")));
    }
    Ok(())
}

fn truncated_bump(x: f64, y: f64, amplitude: f64, c: [f64; 2], width: f64) -> f64 {
    let d = c[0].min(1.0 - c[0]).min(c[1]).min(1.0 - c[1]);
    let cut = (-d * d / width).exp();
    let b = (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / width).exp();
    amplitude * (b - cut).max(0.0) / (1.0 - cut)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    #[serde(rename = "d_Omega")]
    DOmega,
    /// First eigenfunction of the scenario coefficient.
    FirstEigenfunction,
    /// `sum amp sin(m pi x) sin(n pi y)` over `(m, n, amp)` terms.
    SineProduct {
        terms: Vec<(u32, u32, f64)>,
    },
    /// Nodal values from a grid dump; relative paths resolve against the
    /// config file's directory.
    GridFile {
        path: PathBuf,
    },
}

impl InitialSpec {
    pub fn validate(&self) -> Result<()> {
        if let Self::SineProduct { terms } = self {
            validate_terms(terms)?;
        }
        Ok(())
    }

    /// `spec` is required for `first-eigenfunction` only.
    pub fn nodal(&self, mesh: &Mesh, spec: Option<&SpectralDecomposition>, base_dir: &Path) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            Self::DOmega => Ok(distance_to_boundary(mesh)),
            Self::FirstEigenfunction => {
                let spec = spec.ok_or_else(|| Error::invalid("first-eigenfunction needs a spectral decomposition"))?;
                Ok(spec.phi(0))
            }
            Self::SineProduct { terms } => Ok(sine_field(mesh, terms)),
            Self::GridFile { path } => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let (nx, ny, values) = read_grid(BufReader::new(File::open(&full)?))?;
                if (nx, ny) != (mesh.nx(), mesh.ny()) {
                    return Err(Error::GridFormat(format!(
                        "{} holds a {nx}x{ny} grid but the scenario mesh is {}x{}",
                        full.display(),
                        mesh.nx(),
                        mesh.ny()
                    )));
                }
                if let Some(node) = (0..values.len()).find(|&n| mesh.is_boundary(n) && values[n] != 0.0) {
                    return Err(Error::NonzeroBoundary { node, value: values[node] });
                }
                Ok(values)
            }
        }
    }
}

fn validate_terms(terms: &[(u32, u32, f64)]) -> Result<()> {
    if terms.is_empty() {
        return Err(Error::invalid("sine-product needs at least one term"));
    }
    if let Some(t) = terms.iter().find(|t| t.0 == 0 || t.1 == 0 || !t.2.is_finite()) {
        return Err(Error::invalid(format!("invalid sine term {t:?}: indices must be positive")));
    }
    Ok(())
}

/// `sum amp sin(m pi x) sin(n pi y)`, exactly zero on the boundary.
pub fn sine_field(mesh: &Mesh, terms: &[(u32, u32, f64)]) -> Vec<f64> {
    mesh.interpolate_interior(|x, y| {
        terms
            .iter()
            .map(|&(m, n, amp)| amp * (m as f64 * PI * x).sin() * (n as f64 * PI * y).sin())
            .sum()
    })
}

/// A perturbation direction `eta` given as sine terms (zero on the boundary).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Direction {
    pub terms: Vec<(u32, u32, f64)>,
}

impl Direction {
    pub fn nodal(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        validate_terms(&self.terms)?;
        Ok(sine_field(mesh, &self.terms))
    }
}
