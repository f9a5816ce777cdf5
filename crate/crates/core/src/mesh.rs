//! Structured triangulations of the unit square and boundary geometry.
//!
//! Nodes are numbered row by row: node `(i, j)` sits at `(i / nx, j / ny)`
//! and has index `j * (nx + 1) + i`. Each grid cell is split into two right
//! triangles along a diagonal whose direction alternates in a checkerboard
//! ("union jack") pattern. For even `nx` and `ny` the mesh is invariant under
//! every symmetry of the square, so symmetric eigenspaces of the continuous
//! problem stay exactly degenerate after discretization.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nx: usize,
    ny: usize,
    nodes: Vec<Point>,
    elements: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    h: f64,
}

/// Nodes with `d_Omega < epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryBand {
    pub epsilon: f64,
    pub node_mask: Vec<bool>,
}

impl BoundaryBand {
    pub fn contains(&self, node: usize) -> bool {
        self.node_mask[node]
    }

    pub fn count(&self) -> usize {
        self.node_mask.iter().filter(|&&b| b).count()
    }
}

/// Builds the union-jack triangulation of `[0,1]^2` with `nx * ny` cells.
pub fn build_structured_mesh(nx: usize, ny: usize) -> Result<Mesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::invalid(format!(
            "structured mesh needs nx, ny >= 2 (got {nx} x {ny})"
        )));
    }
    let (dx, dy) = (1.0 / nx as f64, 1.0 / ny as f64);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut boundary = Vec::with_capacity(nodes.capacity());
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([i as f64 * dx, j as f64 * dy]);
            boundary.push(i == 0 || j == 0 || i == nx || j == ny);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (n00, n10, n01, n11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            if (i + j) % 2 == 0 {
                elements.push([n00, n10, n11]);
                elements.push([n00, n11, n01]);
            } else {
                elements.push([n00, n10, n01]);
                elements.push([n10, n11, n01]);
            }
        }
    }
    Ok(Mesh {
        nx,
        ny,
        nodes,
        elements,
        boundary,
        h: dx.hypot(dy),
    })
}

impl Mesh {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Nominal element diameter (cell diagonal).
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.boundary[i]).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| !self.boundary[i]).collect()
    }

    pub fn num_interior(&self) -> usize {
        self.boundary.iter().filter(|&&b| !b).count()
    }

    /// Signed area of element `e` (positive for counterclockwise ordering).
    pub fn signed_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e].map(|n| self.nodes[n]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Gradients of the three P1 hat functions on element `e`.
    pub fn shape_gradients(&self, e: usize) -> [[f64; 2]; 3] {
        let [p0, p1, p2] = self.elements[e].map(|n| self.nodes[n]);
        let area2 = 2.0 * self.signed_area(e);
        [
            [(p1[1] - p2[1]) / area2, (p2[0] - p1[0]) / area2],
            [(p2[1] - p0[1]) / area2, (p0[0] - p2[0]) / area2],
            [(p0[1] - p1[1]) / area2, (p1[0] - p0[0]) / area2],
        ]
    }

    /// Constant gradient of the P1 interpolant of `w` on element `e`.
    pub fn element_gradient(&self, e: usize, w: &[f64]) -> [f64; 2] {
        let g = self.shape_gradients(e);
        let nodes = self.elements[e];
        let mut out = [0.0; 2];
        for (k, &n) in nodes.iter().enumerate() {
            out[0] += g[k][0] * w[n];
            out[1] += g[k][1] * w[n];
        }
        out
    }

    /// Nodal gradients recovered by area-weighted averaging of the
    /// elementwise gradients over each node's patch.
    pub fn nodal_gradients(&self, w: &[f64]) -> Vec<[f64; 2]> {
        assert_eq!(w.len(), self.num_nodes());
        let mut acc = vec![[0.0; 2]; self.num_nodes()];
        let mut weight = vec![0.0; self.num_nodes()];
        for e in 0..self.num_elements() {
            let area = self.signed_area(e);
            let g = self.element_gradient(e, w);
            for &n in &self.elements[e] {
                acc[n][0] += area * g[0];
                acc[n][1] += area * g[1];
                weight[n] += area;
            }
        }
        acc.iter()
            .zip(&weight)
            .map(|(g, &wt)| [g[0] / wt, g[1] / wt])
            .collect()
    }

    /// Number of elements touching each node.
    pub fn node_valence(&self) -> Vec<usize> {
        let mut count = vec![0; self.num_nodes()];
        for el in &self.elements {
            for &n in el {
                count[n] += 1;
            }
        }
        count
    }

    /// Grid index `(i, j)` of a node.
    pub fn grid_index(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    /// Evaluates `f` at every node.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|p| f(p[0], p[1])).collect()
    }

    /// Like [`Mesh::interpolate`] but exactly zero on boundary nodes.
    pub fn interpolate_interior(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.boundary)
            .map(|(p, &b)| if b { 0.0 } else { f(p[0], p[1]) })
            .collect()
    }
}

/// `d_Omega(x, y) = min(x, 1 - x, y, 1 - y)` at every node.
pub fn distance_to_boundary(mesh: &Mesh) -> Vec<f64> {
    // integer arithmetic keeps `1 - x` exact on grid lines
    (0..mesh.num_nodes())
        .map(|n| {
            let (i, j) = mesh.grid_index(n);
            let dx = i.min(mesh.nx - i) as f64 / mesh.nx as f64;
            let dy = j.min(mesh.ny - j) as f64 / mesh.ny as f64;
            dx.min(dy)
        })
        .collect()
}

pub fn boundary_band(mesh: &Mesh, epsilon: f64) -> Result<BoundaryBand> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::invalid(format!(
            "band width must lie in (0, 0.5), got {epsilon}"
        )));
    }
    let node_mask = distance_to_boundary(mesh)
        .into_iter()
        .map(|d| d < epsilon)
        .collect();
    Ok(BoundaryBand {
        epsilon,
        node_mask,
    })
}

/// Writes a nodal field in the grid dump format: a header line `nx ny`
/// followed by `ny + 1` rows of `nx + 1` values each.
pub fn write_grid<W: Write>(mesh: &Mesh, values: &[f64], mut out: W) -> Result<()> {
    if values.len() != mesh.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_nodes(),
            got: values.len(),
            context: "grid dump",
        });
    }
    writeln!(out, "{} {}", mesh.nx, mesh.ny)?;
    for row in values.chunks(mesh.nx + 1) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn grid_to_string(mesh: &Mesh, values: &[f64]) -> String {
    let mut buf = Vec::new();
    write_grid(mesh, values, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("grid dump is ASCII")
}

/// Reads a grid dump; returns `(nx, ny, values)`.
pub fn read_grid<R: BufRead>(input: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::GridFormat("empty input".into()))??;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::GridFormat(format!("bad header '{header}': {e}")))?;
    let [nx, ny] = dims[..] else {
        return Err(Error::GridFormat(format!("header must be 'nx ny', got '{header}'")));
    };
    let mut values = Vec::with_capacity((nx + 1) * (ny + 1));
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::GridFormat(format!("row {row}: {e}")))?;
        if parsed.len() != nx + 1 {
            return Err(Error::GridFormat(format!(
                "row {row} has {} values, expected {}",
                parsed.len(),
                nx + 1
            )));
        }
        values.extend(parsed);
    }
    if values.len() != (nx + 1) * (ny + 1) {
        return Err(Error::GridFormat(format!(
            "expected {} rows, found {}",
            ny + 1,
            values.len() / (nx + 1)
        )));
    }
    Ok((nx, ny, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_counts() {
        let m = build_structured_mesh(2, 2).unwrap();
        assert_eq!(m.num_nodes(), 9);
        assert_eq!(m.num_elements(), 8);
        assert_eq!(m.boundary_nodes().len(), 8);
        // the single interior node is the centre, shared by all 8 triangles
        assert_eq!(m.node_valence()[4], 8);
    }

    #[test]
    fn rejects_coarse_grids() {
        assert!(build_structured_mesh(1, 1).is_err());
        assert!(build_structured_mesh(2, 1).is_err());
    }

    #[test]
    fn uniform_element_area() {
        let m = build_structured_mesh(32, 32).unwrap();
        for e in 0..m.num_elements() {
            assert!((m.signed_area(e) - 4.8828125e-4).abs() < 1e-15);
        }
        let total: f64 = (0..m.num_elements()).map(|e| m.signed_area(e)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interior_nodes_have_three_or_more_elements() {
        let m = build_structured_mesh(5, 4).unwrap();
        let val = m.node_valence();
        for n in m.interior_nodes() {
            assert!(val[n] >= 3);
        }
        for el in m.elements() {
            assert!(el.iter().all(|&n| n < m.num_nodes()));
        }
    }

    #[test]
    fn boundary_nodes_lie_on_the_square() {
        let m = build_structured_mesh(7, 3).unwrap();
        for n in m.boundary_nodes() {
            let [x, y] = m.node(n);
            let d = x.min(1.0 - x).min(y).min(1.0 - y);
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn distance_examples() {
        let m = build_structured_mesh(10, 10).unwrap();
        let d = distance_to_boundary(&m);
        let at = |i: usize, j: usize| d[j * 11 + i];
        assert!((at(3, 5) - 0.3).abs() < 1e-15);
        assert_eq!(at(0, 7), 0.0);
        assert!((at(5, 5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn band_selects_outer_layer() {
        let m = build_structured_mesh(10, 10).unwrap();
        let band = boundary_band(&m, 0.1).unwrap();
        for n in 0..m.num_nodes() {
            let (i, j) = m.grid_index(n);
            let outer = i == 0 || j == 0 || i == 10 || j == 10;
            assert_eq!(band.contains(n), outer, "node ({i},{j})");
        }
        let wide = boundary_band(&m, 0.49).unwrap();
        assert_eq!(wide.count(), m.num_nodes() - 1);
        assert!(!wide.contains(5 * 11 + 5));
        assert!(boundary_band(&m, 0.6).is_err());
        assert!(boundary_band(&m, 0.0).is_err());
    }

    #[test]
    fn shape_gradients_of_unit_triangle() {
        let m = build_structured_mesh(2, 2).unwrap();
        let g = m.shape_gradients(0);
        let sum = [g[0][0] + g[1][0] + g[2][0], g[0][1] + g[1][1] + g[2][1]];
        assert!(sum[0].abs() < 1e-14 && sum[1].abs() < 1e-14);
    }

    #[test]
    fn grid_dump_round_trip() {
        let m = build_structured_mesh(3, 2).unwrap();
        let v = m.interpolate(|x, y| (x * 3.1).sin() + y.powi(3) / 7.0);
        let text = grid_to_string(&m, &v);
        assert!(text.starts_with("3 2\n"));
        assert_eq!(text.lines().count(), 4);
        let (nx, ny, back) = read_grid(text.as_bytes()).unwrap();
        assert_eq!((nx, ny), (3, 2));
        assert_eq!(back, v);
    }

    #[test]
    fn grid_dump_rejects_ragged_rows() {
        assert!(read_grid("2 1\n1 2 3\n1 2\n".as_bytes()).is_err());
        assert!(read_grid("2 1\n1 2 3\n".as_bytes()).is_err());
    }
}
