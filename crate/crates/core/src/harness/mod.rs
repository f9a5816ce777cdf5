//! Scenario configuration, orchestration and report persistence.

pub mod catalog;
pub mod config;
pub mod report;
pub mod run;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::fem::NormContext;
use crate::mesh::Mesh;

pub use config::{parse_config, Scenario};
pub use report::{write_reports, Check, Manifest};
pub use run::{run_scenario, stability_sweep, Mode, RunArtifact};

/// Seeded Gaussian nodal noise, zero on the boundary, scaled so that its
/// H2-surrogate norm equals `level`.
pub fn h2_scaled_noise(mesh: &Mesh, norms: &NormContext, level: f64, seed: u64) -> Result<Vec<f64>> {
    if level == 0.0 {
        return Ok(vec![0.0; mesh.num_nodes()]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..mesh.num_nodes())
        .map(|n| {
            let v: f64 = StandardNormal.sample(&mut rng);
            if mesh.is_boundary(n) {
                0.0
            } else {
                v
            }
        })
        .collect();
    let scale = level / norms.h2_surrogate(&raw)?;
    Ok(raw.into_iter().map(|v| v * scale).collect())
}
