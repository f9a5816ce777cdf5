//! Coefficient reconstruction from one interior snapshot `u(., T)` through the
//! stationary transport identity `div(a grad u_T) = -lambda_hat_1 u_T + F(a; ., T)`.
//!
//! The outer loop freezes `(lambda_hat_1, F)` at the current iterate; the
//! inner step is a Tikhonov-regularized least-squares solve of the weak form,
//! which is linear in `a`.

use crate::error::{Error, Result};
use crate::fem::{assemble_mass, laplacian_stiffness, max_element_gradient, CoefficientField, NormContext, OperatorPair};
use crate::heat::{check_u0_condition, compute_f, evolve};
use crate::fit::{log_slope_fit, LogFit};
use crate::mesh::Mesh;
use crate::sparse::{BandedCholesky, CsrMatrix};
use crate::spectral::{decompose, solve_generalized_eig_with, SpectralDecomposition, DEFAULT_CLUSTER_TOL};
use crate::eigen::EigenOptions;

/// Normal matrices with a condition estimate above this are treated as singular.
const MAX_CONDITION: f64 = 1e15;

/// `G_{ij} = -int psi_j grad u_T . grad phi_i` for interior test functions
/// `phi_i` (rows, in `mesh.interior_nodes()` order) and all coefficient nodes
/// `psi_j` (columns). Uses the same vertex-average quadrature as the
/// stiffness, so `G a = -(A(a) u_T)` on interior rows.
pub fn assemble_transport_operator(mesh: &Mesh, u_t: &[f64]) -> Result<CsrMatrix> {
    if u_t.len() != mesh.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_nodes(),
            got: u_t.len(),
            context: "transport data",
        });
    }
    if let Some(node) = (0..u_t.len()).find(|&n| mesh.is_boundary(n) && u_t[n] != 0.0) {
        return Err(Error::NonzeroBoundary {
            node,
            value: u_t[node],
        });
    }
    let mut row_of = vec![usize::MAX; mesh.num_nodes()];
    for (r, n) in mesh.interior_nodes().into_iter().enumerate() {
        row_of[n] = r;
    }
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    for (e, el) in mesh.elements().iter().enumerate() {
        let area = mesh.signed_area(e).abs();
        let grads = mesh.shape_gradients(e);
        let gu = mesh.element_gradient(e, u_t);
        for (li, &i) in el.iter().enumerate() {
            if row_of[i] == usize::MAX {
                continue;
            }
            let flux = gu[0] * grads[li][0] + gu[1] * grads[li][1];
            for &j in el {
                triplets.push((row_of[i], j, -area / 3.0 * flux));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(mesh.num_interior(), mesh.num_nodes(), &triplets))
}

#[derive(Debug, Clone)]
pub struct TransportSystem {
    pub g: CsrMatrix,
    /// `-lambda_hat_1 (M u_T)_i + (M F)_i` on interior rows.
    pub rhs: Vec<f64>,
    /// Laplacian stiffness on all coefficient nodes.
    pub r: CsrMatrix,
    /// Absolute regularization weight.
    pub alpha: f64,
    /// Nodal field carrying `a0` on boundary nodes (interior entries unused).
    pub boundary_values: Vec<f64>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
}

impl TransportSystem {
    /// `alpha_scale` multiplies the largest diagonal entry of `G^T G`.
    pub fn new(
        mesh: &Mesh,
        u_t: &[f64],
        lambda1: f64,
        f: &[f64],
        boundary_values: Vec<f64>,
        alpha_scale: f64,
    ) -> Result<Self> {
        let g = assemble_transport_operator(mesh, u_t)?;
        let mass = assemble_mass(mesh);
        let interior = mesh.interior_nodes();
        if f.len() != mesh.num_nodes() || boundary_values.len() != mesh.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_nodes(),
                got: if f.len() != mesh.num_nodes() { f.len() } else { boundary_values.len() },
                context: "transport right-hand side",
            });
        }
        let mu = mass.mul_vec(u_t);
        let mf = mass.mul_vec(f);
        let rhs = interior.iter().map(|&n| -lambda1 * mu[n] + mf[n]).collect();
        Self::from_parts(mesh, g, rhs, boundary_values, alpha_scale)
    }

    pub fn from_parts(
        mesh: &Mesh,
        g: CsrMatrix,
        rhs: Vec<f64>,
        boundary_values: Vec<f64>,
        alpha_scale: f64,
    ) -> Result<Self> {
        if !(alpha_scale > 0.0) {
            return Err(Error::invalid(format!("regularization weight must be positive, got {alpha_scale}")));
        }
        let mut diag = vec![0.0; g.ncols()];
        for i in 0..g.nrows() {
            for (c, v) in g.row(i) {
                diag[c] += v * v;
            }
        }
        let scale = diag.iter().copied().fold(0.0, f64::max);
        let alpha = alpha_scale * if scale > 0.0 { scale } else { 1.0 };
        Ok(Self {
            g,
            rhs,
            r: laplacian_stiffness(mesh),
            alpha,
            boundary_values,
            interior: mesh.interior_nodes(),
            boundary: mesh.boundary_nodes(),
        })
    }

    /// `|G a - rhs|` (Euclidean over interior rows).
    pub fn residual_norm(&self, a: &[f64]) -> f64 {
        self.g
            .mul_vec(a)
            .iter()
            .zip(&self.rhs)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// `argmin |G a - rhs|^2 + alpha (a - prior)^T R (a - prior)` subject to
/// `a = a0` on the boundary, via the normal equations in the interior unknowns.
pub fn solve_transport_ls(system: &TransportSystem, a_prior: &[f64]) -> Result<Vec<f64>> {
    let n = system.g.ncols();
    if a_prior.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a_prior.len(),
            context: "coefficient prior",
        });
    }
    let (int, bnd) = (&system.interior, &system.boundary);
    let rows: Vec<usize> = (0..system.g.nrows()).collect();
    let g_i = system.g.submatrix(&rows, int);
    let g_b = system.g.submatrix(&rows, bnd);
    let r_ii = system.r.submatrix(int, int);
    let r_ib = system.r.submatrix(int, bnd);

    let a0_b: Vec<f64> = bnd.iter().map(|&k| system.boundary_values[k]).collect();
    let p_i: Vec<f64> = int.iter().map(|&k| a_prior[k]).collect();
    let shift_b: Vec<f64> = bnd.iter().map(|&k| system.boundary_values[k] - a_prior[k]).collect();

    let gb_a0 = g_b.mul_vec(&a0_b);
    let b: Vec<f64> = system.rhs.iter().zip(&gb_a0).map(|(r, g)| r - g).collect();
    let mut rhs = g_i.transpose_mul_vec(&b);
    let rp = r_ii.mul_vec(&p_i);
    let rs = r_ib.mul_vec(&shift_b);
    for ((v, p), s) in rhs.iter_mut().zip(&rp).zip(&rs) {
        *v += system.alpha * (p - s);
    }

    let normal = g_i.gram().add_scaled(system.alpha, &r_ii);
    let factor = BandedCholesky::factor(&normal).map_err(|_| Error::SingularNormalMatrix {
        condition: f64::INFINITY,
    })?;
    let condition = factor.condition_estimate();
    if condition > MAX_CONDITION {
        return Err(Error::SingularNormalMatrix { condition });
    }
    let a_i = factor.solve(&rhs);

    let mut a = system.boundary_values.clone();
    for (&k, v) in int.iter().zip(a_i) {
        a[k] = v;
    }
    Ok(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub field: CoefficientField,
    pub smoothing_passes: usize,
    /// Set when the gradient bound still fails after the allowed passes.
    pub gradient_flag: bool,
}

pub const MAX_SMOOTHING_PASSES: usize = 5;

/// Clamps to `[1, a_plus]`, re-imposes the boundary trace and, while the
/// elementwise gradient exceeds `a_plus`, applies damped Jacobi smoothing on
/// interior nodes (at most [`MAX_SMOOTHING_PASSES`] passes).
pub fn admissible_projection(mesh: &Mesh, a: &[f64], boundary_values: &[f64], a_plus: f64) -> Result<Projected> {
    if a.len() != mesh.num_nodes() || boundary_values.len() != mesh.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_nodes(),
            got: a.len().min(boundary_values.len()),
            context: "admissible projection",
        });
    }
    if !(a_plus > 1.0) {
        return Err(Error::invalid(format!("a_plus must exceed 1, got {a_plus}")));
    }
    let clamp = |v: &mut Vec<f64>| {
        for (n, x) in v.iter_mut().enumerate() {
            *x = if mesh.is_boundary(n) {
                boundary_values[n]
            } else if x.is_nan() {
                1.0
            } else {
                x.clamp(1.0, a_plus)
            };
        }
    };
    let mut v = a.to_vec();
    clamp(&mut v);
    let neighbours = node_neighbours(mesh);
    let mut passes = 0;
    while max_element_gradient(mesh, &v) > a_plus && passes < MAX_SMOOTHING_PASSES {
        let prev = v.clone();
        for n in mesh.interior_nodes() {
            let nb = &neighbours[n];
            let mean = nb.iter().map(|&k| prev[k]).sum::<f64>() / nb.len() as f64;
            v[n] = prev[n] / 3.0 + 2.0 * mean / 3.0;
        }
        clamp(&mut v);
        passes += 1;
    }
    let trace: Vec<f64> = mesh.boundary_nodes().iter().map(|&n| boundary_values[n]).collect();
    let (field, gradient_flag) = match CoefficientField::with_trace(mesh, v.clone(), a_plus, trace.clone()) {
        Ok(f) => (f, false),
        Err(_) => (CoefficientField::unchecked(v, a_plus, trace), true),
    };
    Ok(Projected {
        field,
        smoothing_passes: passes,
        gradient_flag,
    })
}

fn node_neighbours(mesh: &Mesh) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); mesh.num_nodes()];
    for el in mesh.elements() {
        for &i in el {
            for &j in el {
                if i != j && !nb[i].contains(&j) {
                    nb[i].push(j);
                }
            }
        }
    }
    for list in &mut nb {
        list.sort_unstable();
    }
    nb
}

/// Solves `R_II a_I = -R_IB a0_B`, then clamps below at 1.
pub fn harmonic_extension(mesh: &Mesh, boundary_values: &[f64]) -> Result<Vec<f64>> {
    let r = laplacian_stiffness(mesh);
    let (int, bnd) = (mesh.interior_nodes(), mesh.boundary_nodes());
    let a0_b: Vec<f64> = bnd.iter().map(|&k| boundary_values[k]).collect();
    let rhs: Vec<f64> = r.submatrix(&int, &bnd).mul_vec(&a0_b).iter().map(|v| -v).collect();
    let a_i = BandedCholesky::factor(&r.submatrix(&int, &int))?.solve(&rhs);
    let mut a = boundary_values.to_vec();
    for (&k, v) in int.iter().zip(a_i) {
        a[k] = v.max(1.0);
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionOptions {
    /// Relative to the largest diagonal entry of `G^T G`.
    pub alpha: f64,
    pub tol_fp: f64,
    pub max_iter: usize,
    pub modes: usize,
    pub cluster_tol: f64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            alpha: 1e-8,
            tol_fp: 1e-8,
            max_iter: 50,
            modes: 40,
            cluster_tol: DEFAULT_CLUSTER_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionReport {
    pub a_rec: CoefficientField,
    pub iterations: usize,
    /// `|a^{m+1} - a^m|_{L2}` per iteration.
    pub residual_trace: Vec<f64>,
    /// Relative transport residual `|G a - rhs| / |rhs|` at the final iterate.
    pub data_residual: f64,
    pub rel_error: Option<f64>,
    pub converged: bool,
    /// Set when the step sizes increased after the first iteration.
    pub stalled: bool,
    pub gradient_flags: usize,
    pub lambda1: f64,
}

/// Fixed-point reconstruction of `a` from `(u0, u_T)` at time `t`.
///
/// `boundary_values` carries `a0` on boundary nodes; `a_true`, if given,
/// is only used to report the relative error.
pub fn fixed_point_invert(
    mesh: &Mesh,
    u0: &[f64],
    u_t: &[f64],
    t: f64,
    boundary_values: &[f64],
    a_plus: f64,
    opts: &InversionOptions,
    a_true: Option<&[f64]>,
) -> Result<InversionReport> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("inversion time must be positive, got {t}")));
    }
    let moment = check_u0_condition(mesh, u0)?;
    if !(moment > 0.0) {
        return Err(Error::MomentCondition(moment));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let norms = NormContext::new(mesh)?;
    let g = assemble_transport_operator(mesh, u_t)?;
    let mass = assemble_mass(mesh);
    let mu = mass.mul_vec(u_t);
    let interior = mesh.interior_nodes();

    let start = harmonic_extension(mesh, boundary_values)?;
    let mut a = admissible_projection(mesh, &start, boundary_values, a_plus)?.field;
    let mut trace = Vec::new();
    let mut warm: Option<SpectralDecomposition> = None;
    let mut converged = false;
    let mut flags = 0;
    let mut last_rhs = Vec::new();
    let mut lambda1 = f64::NAN;
    let eig_opts = EigenOptions::default();

    for _ in 0..opts.max_iter {
        let pair = OperatorPair::dirichlet_from_nodal(mesh, a.values())?;
        let spec = solve_generalized_eig_with(&pair, opts.modes, opts.cluster_tol, &eig_opts, warm.as_ref())?;
        lambda1 = spec.hat(1);
        let f = compute_f(&spec, u0, t)?;
        let mf = mass.mul_vec(&f.values);
        let rhs: Vec<f64> = interior.iter().map(|&n| -lambda1 * mu[n] + mf[n]).collect();
        let system = TransportSystem::from_parts(mesh, g.clone(), rhs, boundary_values.to_vec(), opts.alpha)?;
        let solved = solve_transport_ls(&system, a.values())?;
        let projected = admissible_projection(mesh, &solved, boundary_values, a_plus)?;
        flags += projected.gradient_flag as usize;
        let step: Vec<f64> = projected.field.values().iter().zip(a.values()).map(|(x, y)| x - y).collect();
        let step = norms.l2(&step);
        trace.push(step);
        a = projected.field;
        last_rhs = system.rhs;
        warm = Some(spec);
        if step <= opts.tol_fp {
            converged = true;
            break;
        }
    }

    let ga = g.mul_vec(a.values());
    let rnorm = last_rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let data_residual = ga
        .iter()
        .zip(&last_rhs)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
        / if rnorm > 0.0 { rnorm } else { 1.0 };
    let stalled = trace.windows(2).skip(1).any(|w| w[1] > w[0]);
    let rel_error = a_true.map(|truth| {
        let d: Vec<f64> = a.values().iter().zip(truth).map(|(x, y)| x - y).collect();
        norms.l2(&d) / norms.l2(truth)
    });
    Ok(InversionReport {
        a_rec: a,
        iterations: trace.len(),
        residual_trace: trace,
        data_residual,
        rel_error,
        converged,
        stalled,
        gradient_flags: flags,
        lambda1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub t: f64,
    pub coeff_diff: f64,
    pub data_diff_h2: f64,
    pub data_diff_l2: f64,
    /// `coeff_diff / data_diff_h2`; `None` when the data are indistinguishable.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityTable {
    pub rows: Vec<StabilityRow>,
    pub fit: Option<LogFit>,
    pub lambda1: f64,
    pub lambda1_tilde: f64,
    pub lambda2: f64,
    pub lambda2_tilde: f64,
    /// `|1/lambda_hat_1 - 1/lambda_hat~_1|`.
    pub reciprocal_gap: f64,
    /// Smallest `C` with `reciprocal_gap <= C [e^{lambda_1 T} |u - u~| + e^{-(lambda_2 - lambda_1) T} |a - a~|]` on the grid.
    pub reciprocal_constant: f64,
    /// Dirichlet Laplacian `lambda_1` on the same mesh.
    pub lambda1_laplacian: f64,
    pub a_plus: f64,
}

impl StabilityTable {
    /// Fitted growth rate of `rho(T)`.
    pub fn rate(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    /// `[0.8 lambda_hat_1, 1.2 a_plus lambda_1^Omega]`.
    pub fn rate_bracket(&self) -> (f64, f64) {
        (0.8 * self.lambda1, 1.2 * self.a_plus * self.lambda1_laplacian)
    }
}

pub const INDISTINGUISHABLE: f64 = 1e-14;

/// Ratio of coefficient distance to data distance over `t_grid`.
pub fn stability_ratio_experiment(
    mesh: &Mesh,
    a: &CoefficientField,
    a_tilde: &CoefficientField,
    u0: &[f64],
    t_grid: &[f64],
    modes: usize,
    cluster_tol: f64,
) -> Result<StabilityTable> {
    let norms = NormContext::new(mesh)?;
    let da: Vec<f64> = a.values().iter().zip(a_tilde.values()).map(|(x, y)| x - y).collect();
    let coeff_diff = norms.l2(&da);
    let spec = decompose(mesh, a, modes, cluster_tol)?;
    let spec_t = decompose(mesh, a_tilde, modes, cluster_tol)?;
    let ones = CoefficientField::constant(mesh, 1.0, a.a_plus().max(1.0 + f64::EPSILON))?;
    let lap = decompose(mesh, &ones, 1, cluster_tol)?;
    let a_plus = a.a_plus().max(a_tilde.a_plus());

    let mut rows = Vec::new();
    if coeff_diff > 0.0 {
        for &t in t_grid {
            let u = evolve(&spec, u0, t)?.u;
            let ut = evolve(&spec_t, u0, t)?.u;
            let d: Vec<f64> = u.iter().zip(&ut).map(|(x, y)| x - y).collect();
            let h2 = norms.h2_surrogate(&d)?;
            rows.push(StabilityRow {
                t,
                coeff_diff,
                data_diff_h2: h2,
                data_diff_l2: norms.l2(&d),
                rho: (h2 > INDISTINGUISHABLE).then(|| coeff_diff / h2),
            });
        }
    }
    let usable: Vec<&StabilityRow> = rows.iter().filter(|r| r.rho.is_some()).collect();
    let fit = if usable.len() >= 2 {
        let t: Vec<f64> = usable.iter().map(|r| r.t).collect();
        let y: Vec<f64> = usable.iter().filter_map(|r| r.rho).collect();
        Some(log_slope_fit(&t, &y)?)
    } else {
        None
    };
    let (l1, l1t) = (spec.hat(1), spec_t.hat(1));
    let reciprocal_gap = (1.0 / l1 - 1.0 / l1t).abs();
    let l2 = if spec.num_clusters() > 1 { spec.hat(2) } else { f64::NAN };
    let reciprocal_constant = rows
        .iter()
        .map(|r| {
            let bound = (l1 * r.t).exp() * r.data_diff_l2 + (-(l2 - l1) * r.t).exp() * coeff_diff;
            if bound > 0.0 { reciprocal_gap / bound } else { 0.0 }
        })
        .fold(0.0, f64::max);
    Ok(StabilityTable {
        rows,
        fit,
        lambda1: l1,
        lambda1_tilde: l1t,
        lambda2: l2,
        lambda2_tilde: if spec_t.num_clusters() > 1 { spec_t.hat(2) } else { f64::NAN },
        reciprocal_gap,
        reciprocal_constant,
        lambda1_laplacian: lap.hat(1),
        a_plus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble_stiffness_nodal;
    use crate::mesh::{build_structured_mesh, distance_to_boundary};

    fn bump(mesh: &Mesh) -> Vec<f64> {
        mesh.interpolate(|x, y| {
            let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
            let cut = (-0.25f64 / 0.05).exp();
            1.0 + 0.4 * ((-r2 / 0.05).exp() - cut).max(0.0) / (1.0 - cut)
        })
    }

    struct Manufactured {
        mesh: Mesh,
        a: Vec<f64>,
        u_t: Vec<f64>,
        lambda1: f64,
        f: Vec<f64>,
    }

    fn manufactured(n: usize, t: f64) -> Manufactured {
        let mesh = build_structured_mesh(n, n).unwrap();
        let a = bump(&mesh);
        let field = CoefficientField::new(&mesh, a.clone(), 4.0).unwrap();
        let spec = decompose(&mesh, &field, 30, DEFAULT_CLUSTER_TOL).unwrap();
        let u0 = distance_to_boundary(&mesh);
        let u_t = evolve(&spec, &u0, t).unwrap().u;
        let f = compute_f(&spec, &u0, t).unwrap().values;
        Manufactured {
            lambda1: spec.hat(1),
            mesh,
            a,
            u_t,
            f,
        }
    }

    fn rel_l2(mesh: &Mesh, x: &[f64], y: &[f64]) -> f64 {
        let norms = NormContext::new(mesh).unwrap();
        let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        norms.l2(&d) / norms.l2(y)
    }

    #[test]
    fn operator_is_linear_and_zero_for_zero_data() {
        let mesh = build_structured_mesh(6, 6).unwrap();
        let u = distance_to_boundary(&mesh);
        let g = assemble_transport_operator(&mesh, &u).unwrap();
        let g2 = assemble_transport_operator(&mesh, &u.iter().map(|v| 2.0 * v).collect::<Vec<_>>()).unwrap();
        let z = assemble_transport_operator(&mesh, &vec![0.0; mesh.num_nodes()]).unwrap();
        let a = bump(&mesh);
        for ((x, y), w) in g.mul_vec(&a).iter().zip(g2.mul_vec(&a)).zip(z.mul_vec(&a)) {
            assert!((2.0 * x - y).abs() <= 1e-14 * y.abs().max(1.0));
            assert_eq!(w, 0.0);
        }
        assert!(matches!(
            assemble_transport_operator(&mesh, &vec![1.0; mesh.num_nodes()]),
            Err(Error::NonzeroBoundary { .. })
        ));
    }

    #[test]
    fn operator_matches_element_assembly() {
        let mesh = build_structured_mesh(7, 5).unwrap();
        let u = distance_to_boundary(&mesh);
        let a = bump(&mesh);
        let ga = assemble_transport_operator(&mesh, &u).unwrap().mul_vec(&a);
        let ku = assemble_stiffness_nodal(&mesh, &a).unwrap().mul_vec(&u);
        for (r, n) in mesh.interior_nodes().into_iter().enumerate() {
            assert!((ga[r] + ku[n]).abs() < 1e-13, "row {r}");
        }
    }

    #[test]
    fn manufactured_data_are_consistent() {
        let m = manufactured(12, 0.1);
        let sys = TransportSystem::new(&m.mesh, &m.u_t, m.lambda1, &m.f, m.a.clone(), 1e-8).unwrap();
        let rnorm = sys.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(sys.residual_norm(&m.a) <= 1e-10 * rnorm, "{}", sys.residual_norm(&m.a) / rnorm);
    }

    #[test]
    fn exact_pair_makes_truth_stationary() {
        let m = manufactured(12, 0.1);
        let sys = TransportSystem::new(&m.mesh, &m.u_t, m.lambda1, &m.f, m.a.clone(), 1e-8).unwrap();
        let a = solve_transport_ls(&sys, &m.a).unwrap();
        assert!(rel_l2(&m.mesh, &a, &m.a) < 1e-8);
    }

    #[test]
    fn small_alpha_recovers_truth() {
        let m = manufactured(16, 0.1);
        let sys = TransportSystem::new(&m.mesh, &m.u_t, m.lambda1, &m.f, m.a.clone(), 1e-10).unwrap();
        let prior = vec![1.0; m.mesh.num_nodes()];
        let a = solve_transport_ls(&sys, &prior).unwrap();
        assert!(rel_l2(&m.mesh, &a, &m.a) <= 5e-3);
    }

    #[test]
    fn zero_operator_returns_prior() {
        let mesh = build_structured_mesh(8, 8).unwrap();
        let zero = vec![0.0; mesh.num_nodes()];
        let sys = TransportSystem::new(&mesh, &zero, 19.0, &zero, vec![1.0; mesh.num_nodes()], 1e-8).unwrap();
        assert_eq!(sys.alpha, 1e-8);
        let prior = bump(&mesh);
        let a = solve_transport_ls(&sys, &prior).unwrap();
        for (x, p) in a.iter().zip(&prior) {
            assert!((x - p).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_alpha_returns_shifted_prior() {
        let m = manufactured(10, 0.1);
        let sys = TransportSystem::new(&m.mesh, &m.u_t, m.lambda1, &m.f, vec![1.0; m.mesh.num_nodes()], 1e12).unwrap();
        // A constant prior of 1.3 against boundary data 1 shifts down to 1
        // (the harmonic extension of the mismatch is constant).
        let a = solve_transport_ls(&sys, &vec![1.3; m.mesh.num_nodes()]).unwrap();
        assert!(a.iter().all(|v| (v - 1.0).abs() < 1e-8), "{:?}", a.iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs())));
    }

    #[test]
    fn harmonic_extension_of_constant_trace() {
        let mesh = build_structured_mesh(9, 6).unwrap();
        let a = harmonic_extension(&mesh, &vec![1.5; mesh.num_nodes()]).unwrap();
        assert!(a.iter().all(|v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn projection_examples() {
        let mesh = build_structured_mesh(16, 16).unwrap();
        let ones = vec![1.0; mesh.num_nodes()];
        let a = bump(&mesh);
        let p = admissible_projection(&mesh, &a, &ones, 4.0).unwrap();
        assert_eq!(p.field.values(), &a[..]);
        assert_eq!(p.smoothing_passes, 0);
        assert!(!p.gradient_flag);

        let centre = mesh.interior_nodes()[40];
        let mut low = a.clone();
        low[centre] = 0.5;
        let p = admissible_projection(&mesh, &low, &ones, 4.0).unwrap();
        assert_eq!(p.field.values()[centre], 1.0);

        let mut spike = ones.clone();
        spike[centre] = 4.0;
        let p = admissible_projection(&mesh, &spike, &ones, 4.0).unwrap();
        assert!(p.smoothing_passes >= 1 && p.smoothing_passes <= MAX_SMOOTHING_PASSES);
        assert!(p.gradient_flag || max_element_gradient(&mesh, p.field.values()) <= 4.0);
        assert!(p.field.values().iter().all(|v| (1.0..=4.0).contains(v)));
    }

    #[test]
    fn constant_coefficient_is_a_fixed_point() {
        let mesh = build_structured_mesh(12, 12).unwrap();
        let one = CoefficientField::constant(&mesh, 1.0, 2.0).unwrap();
        let spec = decompose(&mesh, &one, 20, DEFAULT_CLUSTER_TOL).unwrap();
        let u0 = distance_to_boundary(&mesh);
        let u_t = evolve(&spec, &u0, 0.15).unwrap().u;
        let opts = InversionOptions {
            modes: 20,
            ..InversionOptions::default()
        };
        let r = fixed_point_invert(&mesh, &u0, &u_t, 0.15, one.values(), 2.0, &opts, Some(one.values())).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2, "{}", r.iterations);
        assert!(r.a_rec.values().iter().all(|v| (v - 1.0).abs() <= 1e-6));
    }

    #[test]
    fn inversion_rejects_bad_inputs() {
        let mesh = build_structured_mesh(6, 6).unwrap();
        let ones = vec![1.0; mesh.num_nodes()];
        let u0 = distance_to_boundary(&mesh);
        let opts = InversionOptions::default();
        assert!(fixed_point_invert(&mesh, &u0, &u0, 0.0, &ones, 2.0, &opts, None).is_err());
        let neg: Vec<f64> = u0.iter().map(|v| -v).collect();
        assert!(matches!(
            fixed_point_invert(&mesh, &neg, &u0, 1.0, &ones, 2.0, &opts, None),
            Err(Error::MomentCondition(_))
        ));
    }

    #[test]
    fn identical_coefficients_give_empty_stability_table() {
        let mesh = build_structured_mesh(8, 8).unwrap();
        let a = CoefficientField::constant(&mesh, 1.0, 2.0).unwrap();
        let u0 = distance_to_boundary(&mesh);
        let table = stability_ratio_experiment(&mesh, &a, &a, &u0, &[0.5, 1.0, 2.0, 3.0], 10, DEFAULT_CLUSTER_TOL).unwrap();
        assert!(table.rows.is_empty());
        assert!(table.rate().is_none());
    }
}
