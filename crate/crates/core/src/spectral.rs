//! Spectrum of the discrete `L_a`: eigenpairs, strictly ordered eigenvalues
//! with multiplicities, spectral projections, the gap property and the
//! eigenvalue/projection perturbation experiments.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::eigen::{residuals, smallest_generalized_eigenpairs, EigenOptions};
use crate::error::{Error, Result};
use crate::fem::{CoefficientField, OperatorPair};
use crate::mesh::Mesh;
use crate::sparse::{dot, CsrMatrix};

pub const DEFAULT_CLUSTER_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    /// Full nodal eigenvectors (zero on the boundary), one per column.
    eigenvectors: DMatrix<f64>,
    hat_eigenvalues: Vec<f64>,
    multiplicities: Vec<usize>,
    /// First eigenvector index of every strict cluster.
    cluster_start: Vec<usize>,
    cluster_tol: f64,
    mass: CsrMatrix,
    boundary: Vec<bool>,
    /// Reduced Ritz block from the iterative solver, kept for warm starts.
    block: Option<DMatrix<f64>>,
    max_residual: f64,
    orthonormality_error: f64,
}

/// `K` smallest eigenpairs of a reduced pair.
///
/// If the `K`-th eigenvalue belongs to a cluster that continues past `K`,
/// the decomposition is extended to include the whole cluster, so every
/// projection `P_k` is complete.
pub fn solve_generalized_eig(
    pair: &OperatorPair,
    k: usize,
    cluster_tol: f64,
) -> Result<SpectralDecomposition> {
    solve_generalized_eig_with(pair, k, cluster_tol, &EigenOptions::default(), None)
}

pub fn solve_generalized_eig_with(
    pair: &OperatorPair,
    k: usize,
    cluster_tol: f64,
    opts: &EigenOptions,
    warm: Option<&SpectralDecomposition>,
) -> Result<SpectralDecomposition> {
    if !pair.is_reduced() {
        return Err(Error::invalid("eigensolve requires the Dirichlet-reduced pair"));
    }
    let n = pair.dim();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "K = {k} modes requested but the pencil has {n} interior nodes"
        )));
    }
    let warm_block = warm.map(|w| match &w.block {
        Some(b) if b.nrows() == n => b.clone(),
        _ => {
            let cols = w.eigenvectors.ncols();
            DMatrix::from_fn(n, cols, |i, j| w.eigenvectors[(pair.index_map[i], j)])
        }
    });
    let pairs = smallest_generalized_eigenpairs(&pair.stiffness, &pair.mass, k, opts, warm_block.as_ref())?;

    let mut keep = k;
    while keep < pairs.values.len()
        && relative_gap(pairs.values[keep - 1], pairs.values[keep]) < cluster_tol
    {
        keep += 1;
    }
    let values = pairs.values[..keep].to_vec();
    let reduced = pairs.vectors.columns(0, keep).into_owned();

    let mut full = DMatrix::zeros(pair.num_nodes, keep);
    for (r, &node) in pair.index_map.iter().enumerate() {
        for j in 0..keep {
            full[(node, j)] = reduced[(r, j)];
        }
    }
    // fix the sign of phi_1 by its M-weighted mean
    let ones = vec![1.0; pair.num_nodes];
    let phi1: Vec<f64> = full.column(0).iter().copied().collect();
    if pair.ambient_mass.bilinear(&ones, &phi1) < 0.0 {
        full.column_mut(0).neg_mut();
    }

    let max_residual = residuals(&pair.stiffness, &pair.mass, &values, &reduced)
        .into_iter()
        .fold(0.0, f64::max);
    let gram = reduced.transpose() * pair.mass.mul_dense(&reduced);
    let orthonormality_error = (gram - DMatrix::identity(keep, keep)).abs().max();

    let mut boundary = vec![true; pair.num_nodes];
    for &node in &pair.index_map {
        boundary[node] = false;
    }
    let (hat, mult) = strictify_spectrum(&values, cluster_tol);
    let mut cluster_start = Vec::with_capacity(mult.len());
    let mut acc = 0;
    for &m in &mult {
        cluster_start.push(acc);
        acc += m;
    }
    Ok(SpectralDecomposition {
        eigenvalues: values,
        eigenvectors: full,
        hat_eigenvalues: hat,
        multiplicities: mult,
        cluster_start,
        cluster_tol,
        mass: pair.ambient_mass.clone(),
        boundary,
        block: pairs.block,
        max_residual,
        orthonormality_error,
    })
}

/// Convenience: assemble, reduce and solve for coefficient `a`.
pub fn decompose(mesh: &Mesh, a: &CoefficientField, k: usize, cluster_tol: f64) -> Result<SpectralDecomposition> {
    solve_generalized_eig(&OperatorPair::dirichlet(mesh, a)?, k, cluster_tol)
}

fn relative_gap(lo: f64, hi: f64) -> f64 {
    (hi - lo) / hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE)
}

/// Merges consecutive eigenvalues whose relative gap is below `cluster_tol`;
/// a merged cluster is represented by its mean.
pub fn strictify_spectrum(eigenvalues: &[f64], cluster_tol: f64) -> (Vec<f64>, Vec<usize>) {
    let mut hat = Vec::new();
    let mut mult: Vec<usize> = Vec::new();
    let mut sum = 0.0;
    for (i, &v) in eigenvalues.iter().enumerate() {
        if i > 0 && relative_gap(eigenvalues[i - 1], v) < cluster_tol {
            *mult.last_mut().expect("cluster open") += 1;
            sum += v;
        } else {
            if let Some(&m) = mult.last() {
                hat.push(sum / m as f64);
            }
            mult.push(1);
            sum = v;
        }
    }
    if let Some(&m) = mult.last() {
        hat.push(sum / m as f64);
    }
    (hat, mult)
}

impl SpectralDecomposition {
    /// Number of computed modes (sum of multiplicities).
    pub fn num_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.hat_eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn hat_eigenvalues(&self) -> &[f64] {
        &self.hat_eigenvalues
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn cluster_tol(&self) -> f64 {
        self.cluster_tol
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn num_nodes(&self) -> usize {
        self.eigenvectors.nrows()
    }

    /// Eigenvector `j` (0-based) as a nodal field.
    pub fn phi(&self, j: usize) -> Vec<f64> {
        self.eigenvectors.column(j).iter().copied().collect()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Fails if `w` has the wrong length or is nonzero on a boundary node.
    pub fn check_field(&self, w: &[f64], context: &'static str) -> Result<()> {
        if w.len() != self.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.num_nodes(),
                got: w.len(),
                context,
            });
        }
        match (0..w.len()).find(|&n| self.boundary[n] && w[n] != 0.0) {
            Some(node) => Err(Error::NonzeroBoundary { node, value: w[node] }),
            None => Ok(()),
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    pub fn orthonormality_error(&self) -> f64 {
        self.orthonormality_error
    }

    /// `lambda_hat_k` for 1-based strict index `k`.
    pub fn hat(&self, k: usize) -> f64 {
        self.hat_eigenvalues[k - 1]
    }

    /// Eigenvector indices (0-based) of the 1-based cluster `k`.
    pub fn cluster_range(&self, k: usize) -> Result<std::ops::Range<usize>> {
        if k == 0 || k > self.num_clusters() {
            return Err(Error::invalid(format!(
                "cluster index {k} outside 1..={}",
                self.num_clusters()
            )));
        }
        let start = self.cluster_start[k - 1];
        Ok(start..start + self.multiplicities[k - 1])
    }

    /// Cluster (0-based) of every eigenvector.
    pub fn cluster_of_mode(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_modes());
        for (c, &m) in self.multiplicities.iter().enumerate() {
            out.extend(std::iter::repeat(c).take(m));
        }
        out
    }

    /// `phi_j^T M w` for every computed mode.
    pub fn modal_coefficients(&self, w: &[f64]) -> Vec<f64> {
        let mw = self.mass.mul_vec(w);
        (0..self.num_modes())
            .map(|j| self.eigenvectors.column(j).iter().zip(&mw).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Nodal field `sum_j c_j phi_j`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_nodes()];
        for (j, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.eigenvectors.column(j).iter()) {
                *o += c * v;
            }
        }
        out
    }

    pub fn l2_norm(&self, w: &[f64]) -> f64 {
        self.mass.quad_form(w).max(0.0).sqrt()
    }
}

/// `P_k w = sum_{j in cluster k} phi_j (phi_j^T M w)`.
pub fn spectral_projection_apply(spec: &SpectralDecomposition, k: usize, w: &[f64]) -> Result<Vec<f64>> {
    if w.len() != spec.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: spec.num_nodes(),
            got: w.len(),
            context: "projection input",
        });
    }
    let range = spec.cluster_range(k)?;
    let mw = spec.mass.mul_vec(w);
    let mut coeffs = vec![0.0; spec.num_modes()];
    for j in range {
        coeffs[j] = spec.eigenvectors.column(j).iter().zip(&mw).map(|(a, b)| a * b).sum();
    }
    Ok(spec.synthesize(&coeffs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub gamma: f64,
    pub delta: f64,
    /// One entry per consecutive pair `(lambda_hat_k, lambda_hat_{k+1})`.
    pub satisfied: Vec<bool>,
    /// `min_k (lambda_hat_{k+1} - lambda_hat_k) lambda_hat_k^gamma`.
    pub delta_max: f64,
    /// Isolation radii `delta / (4 lambda_hat_k^gamma)`.
    pub rho: Vec<f64>,
}

impl GapReport {
    pub fn all_satisfied(&self) -> bool {
        self.satisfied.iter().all(|&s| s)
    }

    pub fn first_violation(&self) -> Option<usize> {
        self.satisfied.iter().position(|&s| !s).map(|i| i + 1)
    }
}

/// Evaluates the gap condition `lambda_hat_{k+1} - lambda_hat_k >= delta lambda_hat_k^-gamma`.
pub fn check_gap_property(hat: &[f64], gamma: f64, delta: f64) -> Result<GapReport> {
    if hat.len() < 2 {
        return Err(Error::invalid("gap check needs at least two strict eigenvalues"));
    }
    if gamma < 0.0 || !(delta > 0.0) {
        return Err(Error::invalid(format!("need gamma >= 0 and delta > 0 (got {gamma}, {delta})")));
    }
    let satisfied = hat
        .windows(2)
        .map(|w| w[1] - w[0] >= delta * w[0].powf(-gamma))
        .collect();
    let delta_max = hat
        .windows(2)
        .map(|w| (w[1] - w[0]) * w[0].powf(gamma))
        .fold(f64::INFINITY, f64::min);
    let rho = hat.iter().map(|l| delta / (4.0 * l.powf(gamma))).collect();
    Ok(GapReport {
        gamma,
        delta,
        satisfied,
        delta_max,
        rho,
    })
}

/// Operator norm of `P_k - P~_k` in `L2(M)`.
///
/// For orthogonal projections `|P - Q| = max(|(I - Q) P|, |(I - P) Q|)`.
/// Each term is the largest singular value of a residual block
/// `R = U - V (V^T M U)` measured in `M`, which stays accurate when the
/// two subspaces nearly coincide.
pub fn projection_difference_norm(
    spec_a: &SpectralDecomposition,
    spec_b: &SpectralDecomposition,
    k: usize,
) -> Result<f64> {
    if spec_a.num_nodes() != spec_b.num_nodes() || spec_a.mass != spec_b.mass {
        return Err(Error::invalid("projection difference requires decompositions on the same mesh"));
    }
    let ra = spec_a.cluster_range(k)?;
    let rb = spec_b.cluster_range(k)?;
    let u = spec_a.eigenvectors.columns(ra.start, ra.len()).into_owned();
    let v = spec_b.eigenvectors.columns(rb.start, rb.len()).into_owned();
    let mass = &spec_a.mass;
    let leak = |x: &DMatrix<f64>, y: &DMatrix<f64>| {
        let r = x - y * (y.transpose() * mass.mul_dense(x));
        let g = r.transpose() * mass.mul_dense(&r);
        let g = (&g + g.transpose()) * 0.5;
        SymmetricEigen::new(g).eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v)).sqrt()
    };
    Ok(leak(&u, &v).max(leak(&v, &u)).min(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichRow {
    pub k: usize,
    pub laplacian: f64,
    pub value: f64,
    pub upper: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
    pub slack: f64,
}

impl SandwichReport {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }

    /// 1-based index of the first violated mode.
    pub fn first_violation(&self) -> Option<usize> {
        self.rows.iter().find(|r| !r.holds).map(|r| r.k)
    }
}

pub const SANDWICH_SLACK: f64 = 1e-8;

/// Checks `lambda_k(Laplacian) <= lambda_k(a) <= a_plus lambda_k(Laplacian)`
/// mode by mode, with relative slack.
pub fn verify_minmax_sandwich(
    spec_a: &SpectralDecomposition,
    spec_1: &SpectralDecomposition,
    a_plus: f64,
) -> Result<SandwichReport> {
    if spec_a.num_nodes() != spec_1.num_nodes() {
        return Err(Error::invalid("sandwich check requires decompositions on the same mesh"));
    }
    let slack = SANDWICH_SLACK;
    let count = spec_a.num_modes().min(spec_1.num_modes());
    let rows = (0..count)
        .map(|j| {
            let lap = spec_1.eigenvalues[j];
            let value = spec_a.eigenvalues[j];
            let upper = a_plus * lap;
            SandwichRow {
                k: j + 1,
                laplacian: lap,
                value,
                upper,
                holds: value >= lap * (1.0 - slack) && value <= upper * (1.0 + slack),
            }
        })
        .collect();
    Ok(SandwichReport { rows, slack })
}

/// One row of the eigenvalue perturbation table.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRow {
    pub k: usize,
    pub s: f64,
    pub lambda: f64,
    pub lambda_tilde: f64,
    pub diff: f64,
    pub l2_coeff_diff: f64,
    /// `diff / (min(lambda, lambda_tilde)^{1 + n/4} * l2_coeff_diff)`, n = 2.
    pub ratio: f64,
}

pub const SPATIAL_DIM: f64 = 2.0;

/// Adds `s * eta` to `a` for each scale and compares the first `k` eigenvalues.
pub fn eigen_perturbation_experiment(
    mesh: &Mesh,
    a: &CoefficientField,
    eta: &[f64],
    scales: &[f64],
    k: usize,
    cluster_tol: f64,
) -> Result<Vec<PerturbationRow>> {
    let base = decompose(mesh, a, k, cluster_tol)?;
    let perturbed = perturbed_decompositions(mesh, a, eta, scales, k, cluster_tol)?;
    let exponent = 1.0 + SPATIAL_DIM / 4.0;
    let mut rows = Vec::new();
    for ((&s, spec), l2) in scales.iter().zip(&perturbed).zip(coefficient_l2_diffs(&base, eta, scales)) {
        for j in 0..k {
            let (lam, lt) = (base.eigenvalues[j], spec.eigenvalues[j]);
            let diff = (lam - lt).abs();
            let ratio = if l2 > 0.0 {
                diff / (lam.min(lt).powf(exponent) * l2)
            } else {
                0.0
            };
            rows.push(PerturbationRow {
                k: j + 1,
                s,
                lambda: lam,
                lambda_tilde: lt,
                diff,
                l2_coeff_diff: l2,
                ratio,
            });
        }
    }
    Ok(rows)
}

fn coefficient_l2_diffs(base: &SpectralDecomposition, eta: &[f64], scales: &[f64]) -> Vec<f64> {
    let eta_norm = base.l2_norm(eta);
    scales.iter().map(|s| s.abs() * eta_norm).collect()
}

fn perturbed_decompositions(
    mesh: &Mesh,
    a: &CoefficientField,
    eta: &[f64],
    scales: &[f64],
    k: usize,
    cluster_tol: f64,
) -> Result<Vec<SpectralDecomposition>> {
    if eta.len() != mesh.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_nodes(),
            got: eta.len(),
            context: "perturbation direction",
        });
    }
    scales
        .iter()
        .map(|&s| {
            let values: Vec<f64> = a.values().iter().zip(eta).map(|(v, e)| v + s * e).collect();
            let perturbed = CoefficientField::new(mesh, values, a.a_plus())?;
            decompose(mesh, &perturbed, k, cluster_tol)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub k: usize,
    pub s: f64,
    pub lambda_max: f64,
    pub proj_diff: f64,
    pub l2_coeff_diff: f64,
    /// Whether cluster `k` of both spectra has the same multiplicities up to
    /// `k` and gaps to its neighbours of at least `delta lambda_hat^-gamma`.
    pub isolated: bool,
    /// `isolated` and `l2_coeff_diff <= eta_hat * lambda_max^{-(1 + gamma + n/4)}`.
    pub gated: bool,
    /// `proj_diff / ((lambda_max^{gamma+1} + 1)^2 * l2_coeff_diff)`.
    pub ratio: f64,
}

/// Projection perturbation sweep over strict clusters `1..=k_max`.
pub fn projection_perturbation_experiment(
    mesh: &Mesh,
    a: &CoefficientField,
    eta: &[f64],
    scales: &[f64],
    k_max: usize,
    gamma: f64,
    delta: f64,
    eta_hat: f64,
    modes: usize,
    cluster_tol: f64,
) -> Result<Vec<ProjectionRow>> {
    let base = decompose(mesh, a, modes, cluster_tol)?;
    let perturbed = perturbed_decompositions(mesh, a, eta, scales, modes, cluster_tol)?;
    let mut rows = Vec::new();
    for ((&s, spec), l2) in scales.iter().zip(&perturbed).zip(coefficient_l2_diffs(&base, eta, scales)) {
        let clusters = k_max.min(base.num_clusters()).min(spec.num_clusters());
        for k in 1..=clusters {
            // a split or merged cluster has no counterpart; the norm is then 1
            let lambda_max = base.hat(k).max(spec.hat(k));
            let proj_diff = projection_difference_norm(&base, spec, k)?;
            let gate = eta_hat * lambda_max.powf(-(1.0 + gamma + SPATIAL_DIM / 4.0));
            let ratio = if l2 > 0.0 {
                proj_diff / ((lambda_max.powf(gamma + 1.0) + 1.0).powi(2) * l2)
            } else {
                0.0
            };
            rows.push(ProjectionRow {
                k,
                s,
                lambda_max,
                proj_diff,
                l2_coeff_diff: l2,
                isolated: isolated(&base, spec, k, gamma, delta),
                gated: l2 <= gate && isolated(&base, spec, k, gamma, delta),
                ratio,
            });
        }
    }
    Ok(rows)
}

fn isolated(a: &SpectralDecomposition, b: &SpectralDecomposition, k: usize, gamma: f64, delta: f64) -> bool {
    let gaps_ok = |s: &SpectralDecomposition| {
        if k >= s.num_clusters() {
            return false;
        }
        let h = s.hat_eigenvalues();
        let left = k < 2 || h[k - 1] - h[k - 2] >= delta * h[k - 2].powf(-gamma);
        left && h[k] - h[k - 1] >= delta * h[k - 1].powf(-gamma)
    };
    a.multiplicities()[..k] == b.multiplicities()[..k] && gaps_ok(a) && gaps_ok(b)
}

/// `max / min` over a set of positive ratios; `None` for an empty set.
pub fn spread(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut any = false;
    for v in values {
        any = true;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    any.then(|| hi / lo)
}

/// `phi^T M psi`.
pub fn m_inner(spec: &SpectralDecomposition, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &spec.mass.mul_vec(y))
}
