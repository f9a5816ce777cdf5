//! Smallest eigenpairs of the symmetric definite pencil `A v = lambda M v`.
//!
//! Small pencils are solved densely (Cholesky reduction to a standard
//! problem). Larger ones use block shift-invert subspace iteration around
//! zero: the banded Cholesky factor of `A` is applied to a block of
//! `max(2k, k + 8)` vectors, followed by `M`-orthonormalization and a
//! Rayleigh-Ritz step. A block method is required because the square carries
//! exactly degenerate eigenvalues that single-vector Krylov methods cannot
//! resolve.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{BandedCholesky, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Relative residual `|A x - mu M x| / (mu |M x|)` required of every
    /// returned pair.
    pub tol: f64,
    pub max_iter: usize,
    /// Pencils of at most this size are solved densely.
    pub dense_threshold: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 2000,
            dense_threshold: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpairs {
    /// Ascending.
    pub values: Vec<f64>,
    /// `M`-orthonormal columns.
    pub vectors: DMatrix<f64>,
    pub iterations: usize,
    pub max_residual: f64,
    /// Final Ritz block of the iterative path (all `p` columns), reusable as
    /// a warm start for a nearby pencil.
    pub block: Option<DMatrix<f64>>,
}

/// All eigenpairs of a dense pencil, ascending, with `M`-orthonormal vectors.
pub fn dense_generalized_eigen(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite {
        pivot: 0,
        value: f64::NAN,
    })?;
    let l = chol.l();
    // C = L^-1 A L^-T
    let linv_a = l
        .solve_lower_triangular(a)
        .expect("Cholesky factor has a positive diagonal");
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .expect("Cholesky factor has a positive diagonal");
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut w = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        w.set_column(dst, &eig.eigenvectors.column(src));
    }
    // v = L^-T w
    let v = l
        .transpose()
        .solve_upper_triangular(&w)
        .expect("Cholesky factor has a positive diagonal");
    Ok((values, v))
}

/// `k` smallest eigenpairs of the sparse pencil `(a, m)`.
///
/// `warm` may supply approximate eigenvectors (for instance from a nearby
/// coefficient) as the leading columns of the starting block.
pub fn smallest_generalized_eigenpairs(
    a: &CsrMatrix,
    m: &CsrMatrix,
    k: usize,
    opts: &EigenOptions,
    warm: Option<&DMatrix<f64>>,
) -> Result<Eigenpairs> {
    let n = a.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("requested {k} eigenpairs of an {n}-dimensional pencil")));
    }
    let p = (2 * k).max(k + 8).min(n);
    if n <= opts.dense_threshold || 3 * p >= n {
        let (values, vectors) = dense_generalized_eigen(&a.to_dense(), &m.to_dense())?;
        let keep = (k + 2).min(n);
        let vectors = vectors.columns(0, keep).into_owned();
        let values: Vec<f64> = values[..keep].to_vec();
        let max_residual = residuals(a, m, &values, &vectors).into_iter().fold(0.0, f64::max);
        return Ok(Eigenpairs {
            values,
            vectors,
            iterations: 0,
            max_residual,
            block: None,
        });
    }

    let factor = BandedCholesky::factor(a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_e16e);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-0.5..0.5));
    if let Some(w) = warm {
        let c = w.ncols().min(p);
        x.columns_mut(0, c).copy_from(&w.columns(0, c));
    }
    let check = (k + 2).min(p);
    let mut mx = m.mul_dense(&x);
    let mut worst = (f64::INFINITY, 0usize);
    for iter in 1..=opts.max_iter {
        let y = factor.solve_dense(&mx);
        let my = m.mul_dense(&y);
        let (y, my) = m_orthonormalize(y, my);
        let ay = a.mul_dense(&y);
        let h = y.transpose() * &ay;
        let h = (&h + h.transpose()) * 0.5;
        let (mu, v) = sorted_symmetric_eigen(h);
        x = &y * &v;
        let ax = &ay * &v;
        mx = &my * &v;

        worst = (0.0, 0);
        for j in 0..check {
            let r = ax.column(j) - mx.column(j) * mu[j];
            let rel = r.norm() / (mu[j].abs() * mx.column(j).norm());
            if rel > worst.0 {
                worst = (rel, j);
            }
        }
        if worst.0 <= opts.tol {
            return Ok(Eigenpairs {
                values: mu[..check].to_vec(),
                vectors: x.columns(0, check).into_owned(),
                iterations: iter,
                max_residual: worst.0,
                block: Some(x),
            });
        }
    }
    Err(Error::EigenNonConvergence {
        iterations: opts.max_iter,
        residual: worst.0,
        mode: worst.1 + 1,
    })
}

/// Relative residual of every pair.
pub fn residuals(a: &CsrMatrix, m: &CsrMatrix, values: &[f64], vectors: &DMatrix<f64>) -> Vec<f64> {
    let ax = a.mul_dense(vectors);
    let mx = m.mul_dense(vectors);
    values
        .iter()
        .enumerate()
        .map(|(j, &mu)| {
            let r = ax.column(j) - mx.column(j) * mu;
            r.norm() / (mu.abs() * mx.column(j).norm()).max(f64::MIN_POSITIVE)
        })
        .collect()
}

fn sorted_symmetric_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut v = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &eig.eigenvectors.column(src));
    }
    (order.iter().map(|&i| eig.eigenvalues[i]).collect(), v)
}

/// One pass of eigenvalue-based `M`-orthonormalization (SVQB), carrying the
/// product `M Y` along.
fn m_orthonormalize(y: DMatrix<f64>, my: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = y.transpose() * &my;
    let g = (&g + g.transpose()) * 0.5;
    let (mu, u) = sorted_symmetric_eigen(g);
    let top = mu.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let mut b = u;
    for (j, &s) in mu.iter().enumerate() {
        let s = s.max(top * 1e-28);
        b.column_mut(j).scale_mut(1.0 / s.sqrt());
    }
    (y * &b, my * b)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1-D Dirichlet Laplacian with lumped identity mass: eigenvalues are
    /// `2 - 2 cos(j pi / (n + 1))`.
    fn chain(n: usize) -> (CsrMatrix, CsrMatrix) {
        let mut t = Vec::new();
        let mut mt = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            mt.push((i, i, 1.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        (CsrMatrix::from_triplets(n, n, &t), CsrMatrix::from_triplets(n, n, &mt))
    }

    #[test]
    fn subspace_iteration_matches_closed_form() {
        let n = 400;
        let (a, m) = chain(n);
        let res = smallest_generalized_eigenpairs(&a, &m, 6, &EigenOptions::default(), None).unwrap();
        for j in 0..6 {
            let exact = 2.0 - 2.0 * ((j + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((res.values[j] - exact).abs() < 1e-12 * exact.max(1.0), "mode {j}");
        }
        assert!(res.iterations > 0);
        let g = res.vectors.transpose() * m.mul_dense(&res.vectors);
        assert!((g - DMatrix::identity(8, 8)).abs().max() < 1e-9);
    }

    #[test]
    fn dense_path_for_small_pencils() {
        let (a, m) = chain(10);
        let res = smallest_generalized_eigenpairs(&a, &m, 3, &EigenOptions::default(), None).unwrap();
        assert_eq!(res.iterations, 0);
        assert!(res.max_residual < 1e-12);
    }

    #[test]
    fn rejects_bad_counts() {
        let (a, m) = chain(5);
        assert!(smallest_generalized_eigenpairs(&a, &m, 0, &EigenOptions::default(), None).is_err());
        assert!(smallest_generalized_eigenpairs(&a, &m, 6, &EigenOptions::default(), None).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let (a, m) = chain(400);
        let opts = EigenOptions {
            max_iter: 1,
            ..EigenOptions::default()
        };
        match smallest_generalized_eigenpairs(&a, &m, 4, &opts, None) {
            Err(Error::EigenNonConvergence { iterations: 1, residual, .. }) => assert!(residual > opts.tol),
            other => panic!("unexpected {other:?}"),
        }
    }
}
