//! Spectral evolution of the heat equation, the correction function
//! `F = du/dt + lambda_hat_1 u`, decay fits and the lower-bound diagnostics.

use crate::error::{Error, Result};
use crate::fem::{assemble_mass, CoefficientField};
use crate::fit::{log_slope_fit, LogFit};
use crate::mesh::{distance_to_boundary, BoundaryBand, Mesh};
use crate::spectral::{decompose, SpectralDecomposition};

#[derive(Debug, Clone, PartialEq)]
pub struct HeatSnapshot {
    pub t: f64,
    pub u: Vec<f64>,
    pub du_dt: Vec<f64>,
    pub modes_used: usize,
    /// `e^{-lambda_K t} |u0 - Pi_K u0|` with `Pi_K` the projector onto the computed span.
    pub truncation_bound: f64,
}

/// Evolves `u0` to time `t` through the computed modes.
pub fn evolve(spec: &SpectralDecomposition, u0: &[f64], t: f64) -> Result<HeatSnapshot> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("time must be nonnegative, got {t}")));
    }
    spec.check_field(u0, "initial condition")?;
    let coeffs = spec.modal_coefficients(u0);
    let clusters = spec.cluster_of_mode();
    let decay: Vec<f64> = clusters
        .iter()
        .map(|&c| (-spec.hat_eigenvalues()[c] * t).exp())
        .collect();
    let u_coeffs: Vec<f64> = coeffs.iter().zip(&decay).map(|(c, e)| c * e).collect();
    let dt_coeffs: Vec<f64> = u_coeffs
        .iter()
        .zip(&clusters)
        .map(|(c, &k)| -spec.hat_eigenvalues()[k] * c)
        .collect();

    let projected = spec.synthesize(&coeffs);
    let tail: Vec<f64> = u0.iter().zip(&projected).map(|(a, b)| a - b).collect();
    let lambda_k = spec.eigenvalues().last().copied().unwrap_or(0.0);
    Ok(HeatSnapshot {
        t,
        u: spec.synthesize(&u_coeffs),
        du_dt: spec.synthesize(&dt_coeffs),
        modes_used: spec.num_modes(),
        truncation_bound: (-lambda_k * t).exp() * spec.l2_norm(&tail),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionF {
    pub t: f64,
    pub values: Vec<f64>,
    /// Nodal max of `|F - (du/dt + lambda_hat_1 u)|` relative to the size of
    /// the two terms being combined.
    pub consistency_error: f64,
}

/// `F(a; ., T) = du/dt + lambda_hat_1 u = -sum_{k >= 2} (lambda_hat_k - lambda_hat_1) e^{-lambda_hat_k T} P_k u0`,
/// evaluated as the series and cross-checked against the snapshot.
pub fn compute_f(spec: &SpectralDecomposition, u0: &[f64], t: f64) -> Result<CorrectionF> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("F requires T > 0, got {t}")));
    }
    let snap = evolve(spec, u0, t)?;
    let coeffs = spec.modal_coefficients(u0);
    let hat = spec.hat_eigenvalues();
    let f_coeffs: Vec<f64> = spec
        .cluster_of_mode()
        .iter()
        .zip(&coeffs)
        .map(|(&k, c)| {
            if k == 0 {
                0.0
            } else {
                (hat[0] - hat[k]) * (-hat[k] * t).exp() * c
            }
        })
        .collect();
    let values = spec.synthesize(&f_coeffs);

    let scale = snap
        .du_dt
        .iter()
        .zip(&snap.u)
        .map(|(d, u)| d.abs() + hat[0] * u.abs())
        .fold(0.0, f64::max);
    let diff = values
        .iter()
        .zip(snap.du_dt.iter().zip(&snap.u))
        .map(|(f, (d, u))| (f - (d + hat[0] * u)).abs())
        .fold(0.0, f64::max);
    Ok(CorrectionF {
        t,
        values,
        consistency_error: if scale > 0.0 { diff / scale } else { diff },
    })
}

/// `d_Omega^T M u0`, the quadrature value of the moment condition.
pub fn check_u0_condition(mesh: &Mesh, u0: &[f64]) -> Result<f64> {
    if u0.len() != mesh.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_nodes(),
            got: u0.len(),
            context: "initial condition",
        });
    }
    Ok(assemble_mass(mesh).bilinear(&distance_to_boundary(mesh), u0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub t: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub rows: Vec<DecayRow>,
    pub fit: LogFit,
    /// The rate the slope is compared against (negative).
    pub expected_slope: f64,
}

impl DecayFit {
    pub fn relative_deviation(&self) -> f64 {
        ((self.fit.slope - self.expected_slope) / self.expected_slope).abs()
    }
}

/// Fits the decay of `|u(., T)|_{L2}`; expected slope `-lambda_hat_1`.
pub fn u_decay_fit(spec: &SpectralDecomposition, u0: &[f64], t_grid: &[f64]) -> Result<DecayFit> {
    let rows = t_grid
        .iter()
        .map(|&t| {
            let snap = evolve(spec, u0, t)?;
            Ok(DecayRow {
                t,
                norm: spec.l2_norm(&snap.u),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    finish_fit(rows, -spec.hat(1))
}

/// Fits the decay of `|F(a; ., T)|_{L2}`; expected slope `-lambda_hat_2`.
pub fn f_decay_fit(spec: &SpectralDecomposition, u0: &[f64], t_grid: &[f64]) -> Result<DecayFit> {
    if spec.num_clusters() < 2 {
        return Err(Error::invalid("F decay needs at least two strict eigenvalues"));
    }
    let rows = t_grid
        .iter()
        .map(|&t| {
            let f = compute_f(spec, u0, t)?;
            Ok(DecayRow {
                t,
                norm: spec.l2_norm(&f.values),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    finish_fit(rows, -spec.hat(2))
}

fn finish_fit(rows: Vec<DecayRow>, expected_slope: f64) -> Result<DecayFit> {
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.norm).collect();
    let fit = log_slope_fit(&t, &y)?;
    Ok(DecayFit {
        rows,
        fit,
        expected_slope,
    })
}

/// Checks `|F(T)| <= C e^{-lambda_hat_2 T}` on the grid with `C` fixed at the
/// first grid point. Returns `C` and the first violating time, if any.
pub fn f_envelope_check(fit: &DecayFit, rel_slack: f64) -> (f64, Option<f64>) {
    let Some(first) = fit.rows.first() else {
        return (0.0, None);
    };
    let rate = -fit.expected_slope;
    let c = first.norm * (rate * first.t).exp();
    let violation = fit
        .rows
        .iter()
        .find(|r| r.norm > c * (-rate * r.t).exp() * (1.0 + rel_slack))
        .map(|r| r.t);
    (c, violation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzRow {
    pub t: f64,
    pub f_diff: f64,
    pub coeff_diff: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzTable {
    pub rows: Vec<LipschitzRow>,
    /// `None` when the coefficients coincide (all numerators zero).
    pub fit: Option<LogFit>,
    /// `-min(lambda_hat_2, lambda_hat~_2)`.
    pub expected_slope: f64,
}

impl LipschitzTable {
    pub fn relative_deviation(&self) -> Option<f64> {
        self.fit
            .map(|f| ((f.slope - self.expected_slope) / self.expected_slope).abs())
    }
}

/// Tabulates `|F(a) - F(a~)| / |a - a~|` over `t_grid`.
pub fn f_lipschitz_experiment(
    mesh: &Mesh,
    a: &CoefficientField,
    a_tilde: &CoefficientField,
    u0: &[f64],
    t_grid: &[f64],
    modes: usize,
    cluster_tol: f64,
) -> Result<LipschitzTable> {
    if let Some(t) = t_grid.iter().find(|&&t| t < 1.0) {
        return Err(Error::invalid(format!("Lipschitz sweep needs T >= 1, got {t}")));
    }
    let spec = decompose(mesh, a, modes, cluster_tol)?;
    let spec_t = decompose(mesh, a_tilde, modes, cluster_tol)?;
    lipschitz_table(&spec, &spec_t, a.values(), a_tilde.values(), u0, t_grid)
}

pub fn lipschitz_table(
    spec: &SpectralDecomposition,
    spec_t: &SpectralDecomposition,
    a: &[f64],
    a_tilde: &[f64],
    u0: &[f64],
    t_grid: &[f64],
) -> Result<LipschitzTable> {
    if spec.num_clusters() < 2 || spec_t.num_clusters() < 2 {
        return Err(Error::invalid("Lipschitz sweep needs at least two strict eigenvalues"));
    }
    let da: Vec<f64> = a.iter().zip(a_tilde).map(|(x, y)| x - y).collect();
    let coeff_diff = spec.l2_norm(&da);
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let f = compute_f(spec, u0, t)?;
        let ft = compute_f(spec_t, u0, t)?;
        let d: Vec<f64> = f.values.iter().zip(&ft.values).map(|(x, y)| x - y).collect();
        let f_diff = spec.l2_norm(&d);
        rows.push(LipschitzRow {
            t,
            f_diff,
            coeff_diff,
            ratio: if coeff_diff > 0.0 { f_diff / coeff_diff } else { 0.0 },
        });
    }
    let fit = if coeff_diff > 0.0 && rows.iter().all(|r| r.ratio > 0.0) {
        let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        Some(log_slope_fit(&t, &y)?)
    } else {
        None
    };
    Ok(LipschitzTable {
        rows,
        fit,
        expected_slope: -spec.hat(2).min(spec_t.hat(2)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundReport {
    pub t: f64,
    pub moment: f64,
    /// min over interior nodes of `u / (e^{-lambda_hat_1 T} phi_1)`.
    pub u_ratio_min: f64,
    /// min over interior nodes of `-du/dt / (e^{-lambda_hat_1 T} phi_1)`.
    pub dt_ratio_min: f64,
    /// min over interior band nodes of `|grad u|^2 / (e^{-2 lambda_hat_1 T} |grad phi_1|^2)`.
    pub grad_ratio_min: f64,
    /// min over interior band nodes of `|grad phi_1|`.
    pub band_grad_min: f64,
    /// min over all nodes of `phi_1^2 + 1_band |grad phi_1|^2`.
    pub coverage_min: f64,
}

impl LowerBoundReport {
    pub fn all_positive(&self) -> bool {
        [
            self.u_ratio_min,
            self.dt_ratio_min,
            self.grad_ratio_min,
            self.band_grad_min,
            self.coverage_min,
        ]
        .iter()
        .all(|&v| v > 0.0)
    }

    /// `(name, value)` pairs in report order.
    pub fn entries(&self) -> [(&'static str, f64); 5] {
        [
            ("u_ratio_min", self.u_ratio_min),
            ("dt_ratio_min", self.dt_ratio_min),
            ("grad_ratio_min", self.grad_ratio_min),
            ("band_grad_min", self.band_grad_min),
            ("coverage_min", self.coverage_min),
        ]
    }
}

/// Evaluates the pointwise lower bounds at time `t`. The moment condition
/// `d_Omega^T M u0 > 0` is checked first.
pub fn lower_bound_check(
    mesh: &Mesh,
    spec: &SpectralDecomposition,
    u0: &[f64],
    t: f64,
    band: &BoundaryBand,
) -> Result<LowerBoundReport> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("lower bounds need T > 0, got {t}")));
    }
    let moment = check_u0_condition(mesh, u0)?;
    let scale = spec.l2_norm(u0) * spec.l2_norm(&distance_to_boundary(mesh));
    if !(moment > 1e-12 * scale) {
        return Err(Error::MomentCondition(moment));
    }
    let snap = evolve(spec, u0, t)?;
    let phi1 = spec.phi(0);
    let e1 = (-spec.hat(1) * t).exp();
    let grad_u = mesh.nodal_gradients(&snap.u);
    let grad_phi = mesh.nodal_gradients(&phi1);
    let sq = |g: [f64; 2]| g[0] * g[0] + g[1] * g[1];

    let mut r = LowerBoundReport {
        t,
        moment,
        u_ratio_min: f64::INFINITY,
        dt_ratio_min: f64::INFINITY,
        grad_ratio_min: f64::INFINITY,
        band_grad_min: f64::INFINITY,
        coverage_min: f64::INFINITY,
    };
    for n in 0..mesh.num_nodes() {
        let in_band = band.contains(n);
        let cover = phi1[n] * phi1[n] + if in_band { sq(grad_phi[n]) } else { 0.0 };
        r.coverage_min = r.coverage_min.min(cover);
        if mesh.is_boundary(n) {
            continue;
        }
        let denom = e1 * phi1[n];
        r.u_ratio_min = r.u_ratio_min.min(snap.u[n] / denom);
        r.dt_ratio_min = r.dt_ratio_min.min(-snap.du_dt[n] / denom);
        if in_band {
            r.grad_ratio_min = r.grad_ratio_min.min(sq(grad_u[n]) / (e1 * e1 * sq(grad_phi[n])));
            r.band_grad_min = r.band_grad_min.min(sq(grad_phi[n]).sqrt());
        }
    }
    Ok(r)
}

/// Smallest grid time at which every lower bound is positive, with the
/// report at that time.
pub fn certify_threshold(
    mesh: &Mesh,
    spec: &SpectralDecomposition,
    u0: &[f64],
    t_grid: &[f64],
    band: &BoundaryBand,
) -> Result<Option<LowerBoundReport>> {
    for &t in t_grid {
        let report = lower_bound_check(mesh, spec, u0, t, band)?;
        if report.all_positive() {
            return Ok(Some(report));
        }
    }
    Ok(None)
}

/// Predicted auxiliary decay rate `theta = delta / (a_plus lambda_1^Omega)`.
pub fn theta(delta: f64, a_plus: f64, lambda1_laplacian: f64) -> f64 {
    delta / (a_plus * lambda1_laplacian)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{boundary_band, build_structured_mesh};
    use crate::spectral::DEFAULT_CLUSTER_TOL;
    use std::f64::consts::PI;

    fn laplace(n: usize, k: usize) -> (Mesh, SpectralDecomposition) {
        let mesh = build_structured_mesh(n, n).unwrap();
        let a = CoefficientField::constant(&mesh, 1.0, 2.0).unwrap();
        let spec = decompose(&mesh, &a, k, DEFAULT_CLUSTER_TOL).unwrap();
        (mesh, spec)
    }

    #[test]
    fn single_mode_evolution() {
        let (_, spec) = laplace(10, 6);
        let phi1 = spec.phi(0);
        let snap = evolve(&spec, &phi1, 0.3).unwrap();
        let e = (-spec.hat(1) * 0.3).exp();
        for (u, p) in snap.u.iter().zip(&phi1) {
            assert!((u - e * p).abs() < 1e-12);
        }
        assert!(snap.truncation_bound < 1e-12);
        let f = compute_f(&spec, &phi1, 0.3).unwrap();
        assert!(f.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_mode_f() {
        let (_, spec) = laplace(10, 6);
        let j = spec.cluster_range(2).unwrap().start;
        let phij = spec.phi(j);
        let u0: Vec<f64> = spec.phi(0).iter().zip(&phij).map(|(a, b)| a + b).collect();
        let t = 0.2;
        let f = compute_f(&spec, &u0, t).unwrap();
        let c = -(spec.hat(2) - spec.hat(1)) * (-spec.hat(2) * t).exp();
        for (v, p) in f.values.iter().zip(&phij) {
            assert!((v - c * p).abs() < 1e-12);
        }
        assert!(f.consistency_error < 1e-12, "{}", f.consistency_error);
    }

    #[test]
    fn sine_initial_condition_decays_at_scalar_rate() {
        let (mesh, spec) = laplace(32, 6);
        let u0 = mesh.interpolate_interior(|x, y| (PI * x).sin() * (PI * y).sin());
        let t = 0.05;
        let snap = evolve(&spec, &u0, t).unwrap();
        let expected = (-spec.hat(1) * t).exp() * spec.l2_norm(&u0);
        assert!((spec.l2_norm(&snap.u) - expected).abs() < 1e-6 * expected, "{} {}", spec.l2_norm(&snap.u), expected);
    }

    #[test]
    fn negative_time_and_boundary_data_rejected() {
        let (mesh, spec) = laplace(6, 3);
        let phi1 = spec.phi(0);
        assert!(evolve(&spec, &phi1, -1.0).is_err());
        assert!(compute_f(&spec, &phi1, 0.0).is_err());
        let bad = mesh.interpolate(|_, _| 1.0);
        assert!(matches!(evolve(&spec, &bad, 1.0), Err(Error::NonzeroBoundary { .. })));
    }

    #[test]
    fn moment_condition_examples() {
        let mesh = build_structured_mesh(16, 16).unwrap();
        let d = distance_to_boundary(&mesh);
        assert!(check_u0_condition(&mesh, &d).unwrap() > 0.0);
        let odd = mesh.interpolate_interior(|x, y| (2.0 * PI * x).sin() * (PI * y).sin());
        assert!(check_u0_condition(&mesh, &odd).unwrap().abs() < 1e-12);
        assert_eq!(check_u0_condition(&mesh, &vec![0.0; mesh.num_nodes()]).unwrap(), 0.0);
    }

    #[test]
    fn lower_bounds_for_first_mode_are_one() {
        let (mesh, spec) = laplace(12, 4);
        let band = boundary_band(&mesh, 0.1).unwrap();
        let r = lower_bound_check(&mesh, &spec, &spec.phi(0), 1.0, &band).unwrap();
        assert!((r.u_ratio_min - 1.0).abs() < 1e-10);
        assert!((r.dt_ratio_min / spec.hat(1) - 1.0).abs() < 1e-10);
        assert!((r.grad_ratio_min - 1.0).abs() < 1e-10);
        assert!(r.all_positive());
    }

    #[test]
    fn lower_bound_rejects_zero_moment() {
        let (mesh, spec) = laplace(12, 4);
        let band = boundary_band(&mesh, 0.1).unwrap();
        let odd = mesh.interpolate_interior(|x, y| (2.0 * PI * x).sin() * (PI * y).sin());
        assert!(matches!(
            lower_bound_check(&mesh, &spec, &odd, 1.0, &band),
            Err(Error::MomentCondition(_))
        ));
    }

    #[test]
    fn identical_coefficients_give_zero_numerator() {
        let (mesh, spec) = laplace(8, 5);
        let ones = vec![1.0; mesh.num_nodes()];
        let u0 = distance_to_boundary(&mesh);
        let table = lipschitz_table(&spec, &spec, &ones, &ones, &u0, &[1.0, 2.0]).unwrap();
        assert!(table.rows.iter().all(|r| r.f_diff == 0.0));
        assert!(table.fit.is_none());
    }
}
