//! P1 finite-element operators for `L_a = -div(a grad .)` with homogeneous
//! Dirichlet conditions, and the discrete norms used by the stability checks.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{dot, BandedCholesky, CsrMatrix};

const ADMISSIBILITY_SLACK: f64 = 1e-12;

/// Nodal diffusivity in the admissible set: `1 <= a <= a_plus`, elementwise
/// gradient bounded by `a_plus`, and a fixed boundary trace.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    values: Vec<f64>,
    a_plus: f64,
    /// Values on `mesh.boundary_nodes()`, in that order.
    boundary_trace: Vec<f64>,
}

impl CoefficientField {
    /// Validates `values` and takes the boundary trace from the field itself.
    pub fn new(mesh: &Mesh, values: Vec<f64>, a_plus: f64) -> Result<Self> {
        let trace = mesh.boundary_nodes().iter().map(|&n| values[n]).collect();
        Self::with_trace(mesh, values, a_plus, trace)
    }

    pub fn with_trace(
        mesh: &Mesh,
        values: Vec<f64>,
        a_plus: f64,
        boundary_trace: Vec<f64>,
    ) -> Result<Self> {
        check_admissible(mesh, &values, a_plus)?;
        let bnodes = mesh.boundary_nodes();
        if boundary_trace.len() != bnodes.len() {
            return Err(Error::DimensionMismatch {
                expected: bnodes.len(),
                got: boundary_trace.len(),
                context: "boundary trace",
            });
        }
        for (&n, &t) in bnodes.iter().zip(&boundary_trace) {
            if (values[n] - t).abs() > ADMISSIBILITY_SLACK {
                let [x, y] = mesh.node(n);
                return Err(Error::NotAdmissible {
                    node: n,
                    x,
                    y,
                    reason: format!("boundary value {} differs from trace {t}", values[n]),
                });
            }
        }
        Ok(Self {
            values,
            a_plus,
            boundary_trace,
        })
    }

    /// Skips validation; used when a projection could not restore the
    /// gradient bound and the result is returned with a flag instead.
    pub(crate) fn unchecked(values: Vec<f64>, a_plus: f64, boundary_trace: Vec<f64>) -> Self {
        Self {
            values,
            a_plus,
            boundary_trace,
        }
    }

    pub fn constant(mesh: &Mesh, c: f64, a_plus: f64) -> Result<Self> {
        Self::new(mesh, vec![c; mesh.num_nodes()], a_plus)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn a_plus(&self) -> f64 {
        self.a_plus
    }

    pub fn boundary_trace(&self) -> &[f64] {
        &self.boundary_trace
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Vertex average of nodal values on every element.
pub fn element_averages(mesh: &Mesh, nodal: &[f64]) -> Vec<f64> {
    mesh.elements()
        .iter()
        .map(|el| (nodal[el[0]] + nodal[el[1]] + nodal[el[2]]) / 3.0)
        .collect()
}

/// Largest elementwise `|grad a_h|`.
pub fn max_element_gradient(mesh: &Mesh, nodal: &[f64]) -> f64 {
    (0..mesh.num_elements())
        .map(|e| {
            let g = mesh.element_gradient(e, nodal);
            g[0].hypot(g[1])
        })
        .fold(0.0, f64::max)
}

/// Checks the discrete admissibility conditions, naming the first violating node.
pub fn check_admissible(mesh: &Mesh, values: &[f64], a_plus: f64) -> Result<()> {
    if values.len() != mesh.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_nodes(),
            got: values.len(),
            context: "coefficient field",
        });
    }
    if !(a_plus > 1.0) {
        return Err(Error::invalid(format!("a_plus must exceed 1, got {a_plus}")));
    }
    for (n, &v) in values.iter().enumerate() {
        let [x, y] = mesh.node(n);
        let reason = if !v.is_finite() {
            Some(format!("value {v} is not finite"))
        } else if v < 1.0 - ADMISSIBILITY_SLACK {
            Some(format!("value {v} below the lower bound 1"))
        } else if v > a_plus + ADMISSIBILITY_SLACK {
            Some(format!("value {v} exceeds a_plus = {a_plus}"))
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(Error::NotAdmissible { node: n, x, y, reason });
        }
    }
    for e in 0..mesh.num_elements() {
        let g = mesh.element_gradient(e, values);
        let norm = g[0].hypot(g[1]);
        if norm > a_plus + ADMISSIBILITY_SLACK {
            let n = mesh.elements()[e][0];
            let [x, y] = mesh.node(n);
            return Err(Error::NotAdmissible {
                node: n,
                x,
                y,
                reason: format!("element {e} gradient {norm:.4} exceeds a_plus = {a_plus}"),
            });
        }
    }
    Ok(())
}

/// Stiffness and mass matrices together with the node numbering of their rows.
#[derive(Debug, Clone)]
pub struct OperatorPair {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    /// Full mesh node index of every row/column.
    pub index_map: Vec<usize>,
    pub num_nodes: usize,
    /// Mass matrix on all mesh nodes, kept after boundary elimination so
    /// that `L2` inner products of arbitrary nodal fields remain available.
    pub ambient_mass: CsrMatrix,
}

impl OperatorPair {
    /// Unreduced pair for coefficient `a`.
    pub fn assemble(mesh: &Mesh, a: &CoefficientField) -> Result<Self> {
        Self::from_nodal(mesh, a.values())
    }

    fn from_nodal(mesh: &Mesh, a: &[f64]) -> Result<Self> {
        let mass = assemble_mass(mesh);
        Ok(Self {
            stiffness: assemble_stiffness_nodal(mesh, a)?,
            ambient_mass: mass.clone(),
            mass,
            index_map: (0..mesh.num_nodes()).collect(),
            num_nodes: mesh.num_nodes(),
        })
    }

    /// Reduced (Dirichlet) pair for `a`.
    pub fn dirichlet(mesh: &Mesh, a: &CoefficientField) -> Result<Self> {
        Ok(apply_dirichlet(&Self::assemble(mesh, a)?, mesh))
    }

    /// Reduced pair built from raw nodal coefficient values, skipping the
    /// admissibility check.
    pub fn dirichlet_from_nodal(mesh: &Mesh, a: &[f64]) -> Result<Self> {
        Ok(apply_dirichlet(&Self::from_nodal(mesh, a)?, mesh))
    }

    pub fn dim(&self) -> usize {
        self.index_map.len()
    }

    pub fn is_reduced(&self) -> bool {
        self.index_map.len() < self.num_nodes
    }

    /// Restricts a full nodal vector to this pair's rows.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.index_map.iter().map(|&n| full[n]).collect()
    }

    /// Extends a reduced vector to all nodes, filling eliminated nodes with zero.
    pub fn extend(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_nodes];
        for (&n, &v) in self.index_map.iter().zip(reduced) {
            out[n] = v;
        }
        out
    }
}

/// Galerkin matrix of `(phi, psi) -> int a grad phi . grad psi`, with `a`
/// taken elementwise as the vertex average.
pub fn assemble_stiffness(mesh: &Mesh, a: &CoefficientField) -> Result<CsrMatrix> {
    assemble_stiffness_nodal(mesh, a.values())
}

pub fn assemble_stiffness_nodal(mesh: &Mesh, a: &[f64]) -> Result<CsrMatrix> {
    if a.len() != mesh.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_nodes(),
            got: a.len(),
            context: "stiffness coefficient",
        });
    }
    Ok(stiffness_from_element_values(mesh, &element_averages(mesh, a)))
}

pub fn stiffness_from_element_values(mesh: &Mesh, a_elem: &[f64]) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    for (e, el) in mesh.elements().iter().enumerate() {
        let area = mesh.signed_area(e);
        let g = mesh.shape_gradients(e);
        for p in 0..3 {
            for q in 0..3 {
                let v = a_elem[e] * area * (g[p][0] * g[q][0] + g[p][1] * g[q][1]);
                triplets.push((el[p], el[q], v));
            }
        }
    }
    let n = mesh.num_nodes();
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Stiffness for `a = 1`.
pub fn laplacian_stiffness(mesh: &Mesh) -> CsrMatrix {
    stiffness_from_element_values(mesh, &vec![1.0; mesh.num_elements()])
}

/// Consistent P1 mass matrix.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    for (e, el) in mesh.elements().iter().enumerate() {
        let w = mesh.signed_area(e) / 12.0;
        for p in 0..3 {
            for q in 0..3 {
                triplets.push((el[p], el[q], if p == q { 2.0 * w } else { w }));
            }
        }
    }
    let n = mesh.num_nodes();
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Removes boundary rows and columns.
pub fn apply_dirichlet(pair: &OperatorPair, mesh: &Mesh) -> OperatorPair {
    let keep: Vec<usize> = (0..pair.dim())
        .filter(|&r| !mesh.is_boundary(pair.index_map[r]))
        .collect();
    OperatorPair {
        stiffness: pair.stiffness.submatrix(&keep, &keep),
        mass: pair.mass.submatrix(&keep, &keep),
        index_map: keep.iter().map(|&r| pair.index_map[r]).collect(),
        num_nodes: pair.num_nodes,
        ambient_mass: pair.ambient_mass.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
    /// `None` when the field does not vanish on the boundary.
    pub h2_surrogate: Option<f64>,
}

/// Cached operators for `compute_norms`: full `M`, full `A(1)`, and the
/// factored interior mass matrix used by the discrete Laplacian.
#[derive(Debug, Clone)]
pub struct NormContext {
    mass: CsrMatrix,
    laplacian: CsrMatrix,
    interior: Vec<usize>,
    boundary: Vec<bool>,
    mass_interior: BandedCholesky,
}

impl NormContext {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let mass = assemble_mass(mesh);
        let interior = mesh.interior_nodes();
        let mass_interior = BandedCholesky::factor(&mass.submatrix(&interior, &interior))?;
        Ok(Self {
            laplacian: laplacian_stiffness(mesh),
            mass,
            interior,
            boundary: mesh.boundary_flags().to_vec(),
            mass_interior,
        })
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    pub fn l2(&self, w: &[f64]) -> f64 {
        self.mass.quad_form(w).max(0.0).sqrt()
    }

    /// Discrete Laplacian `z` with `M_II z = -(A(1) w)_I`, as a full nodal field.
    pub fn discrete_laplacian(&self, w: &[f64]) -> Vec<f64> {
        let aw = self.laplacian.mul_vec(w);
        let mut rhs: Vec<f64> = self.interior.iter().map(|&n| -aw[n]).collect();
        self.mass_interior.solve_in_place(&mut rhs);
        let mut z = vec![0.0; w.len()];
        for (&n, v) in self.interior.iter().zip(rhs) {
            z[n] = v;
        }
        z
    }

    pub fn h2_surrogate(&self, w: &[f64]) -> Result<f64> {
        if let Some((node, &value)) = w
            .iter()
            .enumerate()
            .find(|&(n, v)| self.boundary[n] && *v != 0.0)
        {
            return Err(Error::NonzeroBoundary { node, value });
        }
        let l2sq = self.mass.quad_form(w);
        let semi = self.laplacian.quad_form(w);
        let z = self.discrete_laplacian(w);
        Ok((l2sq + semi + self.mass.quad_form(&z)).max(0.0).sqrt())
    }
}

/// L2, H1 and H2-surrogate norms of a nodal field.
pub fn compute_norms(w: &[f64], ctx: &NormContext) -> Result<Norms> {
    if w.len() != ctx.mass.nrows() {
        return Err(Error::DimensionMismatch {
            expected: ctx.mass.nrows(),
            got: w.len(),
            context: "norm field",
        });
    }
    let l2sq = ctx.mass.quad_form(w).max(0.0);
    let semi = ctx.laplacian.quad_form(w).max(0.0);
    Ok(Norms {
        l2: l2sq.sqrt(),
        h1: (l2sq + semi).sqrt(),
        h2_surrogate: ctx.h2_surrogate(w).ok(),
    })
}

/// `int u d_Omega` style quadrature: `x^T M y`.
pub fn mass_inner(mass: &CsrMatrix, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &mass.mul_vec(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    #[test]
    fn unit_right_triangle_local_stiffness() {
        // cell (0,0) of a 1/2-spaced grid, scaled: gradients scale by 1/h and
        // area by h^2, so the local matrix is mesh-size independent
        let m = build_structured_mesh(2, 2).unwrap();
        // element 0 of cell (1,0) (odd parity) is {(0.5,0),(1,0),(0.5,0.5)}
        let e = 2;
        let el = m.elements()[e];
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        let area = m.signed_area(e);
        let g = m.shape_gradients(e);
        assert_eq!(m.node(el[0]), [0.5, 0.0]);
        for p in 0..3 {
            for q in 0..3 {
                let v = area * (g[p][0] * g[q][0] + g[p][1] * g[q][1]);
                assert!((v - expect[p][q]).abs() < 1e-14, "({p},{q}) = {v}");
            }
        }
    }

    #[test]
    fn mass_sums_to_area() {
        let m = build_structured_mesh(6, 4).unwrap();
        let mass = assemble_mass(&m);
        let total: f64 = mass.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(mass.asymmetry() < 1e-12);
    }

    #[test]
    fn reduced_laplacian_on_two_by_two_grid() {
        let m = build_structured_mesh(2, 2).unwrap();
        let a = CoefficientField::constant(&m, 1.0, 2.0).unwrap();
        let pair = OperatorPair::dirichlet(&m, &a).unwrap();
        assert_eq!(pair.dim(), 1);
        assert!((pair.stiffness.get(0, 0) - 4.0).abs() < 1e-13);
        assert_eq!(pair.index_map, vec![4]);
    }

    #[test]
    fn stiffness_scales_with_constant_coefficient() {
        let m = build_structured_mesh(4, 4).unwrap();
        let a1 = assemble_stiffness(&m, &CoefficientField::constant(&m, 1.0, 5.0).unwrap()).unwrap();
        let a3 = assemble_stiffness(&m, &CoefficientField::constant(&m, 3.0, 5.0).unwrap()).unwrap();
        for (x, y) in a1.values().iter().zip(a3.values()) {
            assert!((3.0 * x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn admissibility_names_offending_node() {
        let m = build_structured_mesh(4, 4).unwrap();
        let mut v = vec![1.0; m.num_nodes()];
        v[12] = 0.9;
        match CoefficientField::new(&m, v, 2.0) {
            Err(Error::NotAdmissible { node, .. }) => assert_eq!(node, 12),
            other => panic!("unexpected {other:?}"),
        }
        let mut v = vec![1.0; m.num_nodes()];
        v[12] = 2.5;
        assert!(CoefficientField::new(&m, v, 2.0).is_err());
        assert!(CoefficientField::constant(&m, 1.0, 1.0).is_err());
    }

    #[test]
    fn gradient_bound_is_enforced() {
        let m = build_structured_mesh(8, 8).unwrap();
        // slope 3 in x exceeds a_plus = 2.8 while the values stay in range
        let v = m.interpolate(|x, y| 1.0 + 0.5 * x * y);
        let steep = m.interpolate(|x, _| 1.0 + 3.0 * x.min(0.5));
        assert!(CoefficientField::new(&m, v, 2.8).is_ok());
        assert!(CoefficientField::new(&m, steep, 2.8).is_err());
    }

    #[test]
    fn norms_of_zero_and_scaling() {
        let m = build_structured_mesh(6, 6).unwrap();
        let ctx = NormContext::new(&m).unwrap();
        let z = compute_norms(&vec![0.0; m.num_nodes()], &ctx).unwrap();
        assert_eq!((z.l2, z.h1, z.h2_surrogate), (0.0, 0.0, Some(0.0)));
        let w = m.interpolate(|x, y| x * (1.0 - x) * y * (1.0 - y));
        let n1 = compute_norms(&w, &ctx).unwrap();
        let w3: Vec<f64> = w.iter().map(|v| -3.0 * v).collect();
        let n3 = compute_norms(&w3, &ctx).unwrap();
        assert!((n3.l2 - 3.0 * n1.l2).abs() < 1e-14);
        assert!((n3.h1 - 3.0 * n1.h1).abs() < 1e-13);
        assert!((n3.h2_surrogate.unwrap() - 3.0 * n1.h2_surrogate.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn h2_surrogate_rejects_boundary_values() {
        let m = build_structured_mesh(4, 4).unwrap();
        let ctx = NormContext::new(&m).unwrap();
        let w = vec![1.0; m.num_nodes()];
        assert!(matches!(ctx.h2_surrogate(&w), Err(Error::NonzeroBoundary { .. })));
        assert!(compute_norms(&w, &ctx).unwrap().h2_surrogate.is_none());
    }
}
