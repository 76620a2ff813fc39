//! Structured simplicial meshes of the unit square and unit cube.
//!
//! Each grid square is split into two triangles along the diagonal from its
//! lower-left to its upper-right corner; each grid cube is split into the six
//! Kuhn tetrahedra sharing the main diagonal. Both splits are conforming.

use crate::error::{Error, Result};

/// One side of the unit square/cube: the hyperplane `x[axis] == 0` or `== 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

impl Face {
    /// Index in `0..2*dim`, ordered `x1=0, x1=1, x2=0, ...`.
    pub fn index(self) -> usize {
        2 * self.axis + usize::from(self.upper)
    }

    pub fn from_index(k: usize) -> Self {
        Self {
            axis: k / 2,
            upper: k % 2 == 1,
        }
    }

    pub fn outward_normal(self, dim: usize) -> Vec<f64> {
        let mut n = vec![0.0; dim];
        n[self.axis] = if self.upper { 1.0 } else { -1.0 };
        n
    }
}

/// A boundary facet (edge in 2D, triangle in 3D) and the face it lies on.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFacet {
    pub nodes: Vec<usize>,
    pub face: Face,
}

/// P1 geometry of one simplex.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub volume: f64,
    /// Gradients of the `dim + 1` barycentric functions; unused slots are zero.
    pub grads: [[f64; 3]; 4],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    nodes_per_side: usize,
    coords: Vec<f64>,
    elements: Vec<usize>,
    boundary: Vec<BoundaryFacet>,
}

/// Builds the uniform simplicial mesh with `nodes_per_side^dim` nodes.
pub fn build_mesh(dim: usize, nodes_per_side: usize) -> Result<Mesh> {
    if !(2..=3).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    if nodes_per_side < 2 {
        return Err(Error::InvalidArgument(format!(
            "nodes_per_side must be at least 2, got {nodes_per_side}"
        )));
    }
    let n = nodes_per_side;
    let h = 1.0 / (n - 1) as f64;
    let node_count = n.pow(dim as u32);
    let mut coords = Vec::with_capacity(node_count * dim);
    for idx in 0..node_count {
        let mut rem = idx;
        for _ in 0..dim {
            coords.push((rem % n) as f64 * h);
            rem /= n;
        }
    }

    let cells = n - 1;
    let node = |ijk: &[usize]| -> usize { ijk.iter().rev().fold(0, |acc, &i| acc * n + i) };
    let mut elements = Vec::new();
    let mut boundary = Vec::new();

    if dim == 2 {
        for j in 0..cells {
            for i in 0..cells {
                let v00 = node(&[i, j]);
                let v10 = node(&[i + 1, j]);
                let v01 = node(&[i, j + 1]);
                let v11 = node(&[i + 1, j + 1]);
                elements.extend([v00, v10, v11]);
                elements.extend([v00, v11, v01]);
            }
        }
        for axis in 0..2 {
            for upper in [false, true] {
                let fixed = if upper { n - 1 } else { 0 };
                for k in 0..cells {
                    let mut a = [0usize; 2];
                    let mut b = [0usize; 2];
                    a[axis] = fixed;
                    b[axis] = fixed;
                    a[1 - axis] = k;
                    b[1 - axis] = k + 1;
                    boundary.push(BoundaryFacet {
                        nodes: vec![node(&a), node(&b)],
                        face: Face { axis, upper },
                    });
                }
            }
        }
    } else {
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for k in 0..cells {
            for j in 0..cells {
                for i in 0..cells {
                    let base = [i, j, k];
                    for perm in PERMS {
                        let mut cur = base;
                        let mut tet = [node(&cur), 0, 0, 0];
                        for (step, &ax) in perm.iter().enumerate() {
                            cur[ax] += 1;
                            tet[step + 1] = node(&cur);
                        }
                        elements.extend(tet);
                    }
                }
            }
        }
        for axis in 0..3 {
            let (a1, a2) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            for upper in [false, true] {
                let fixed = if upper { n - 1 } else { 0 };
                for q in 0..cells {
                    for p in 0..cells {
                        let at = |dp: usize, dq: usize| {
                            let mut c = [0usize; 3];
                            c[axis] = fixed;
                            c[a1] = p + dp;
                            c[a2] = q + dq;
                            node(&c)
                        };
                        let face = Face { axis, upper };
                        boundary.push(BoundaryFacet {
                            nodes: vec![at(0, 0), at(1, 0), at(1, 1)],
                            face,
                        });
                        boundary.push(BoundaryFacet {
                            nodes: vec![at(0, 0), at(0, 1), at(1, 1)],
                            face,
                        });
                    }
                }
            }
        }
    }

    let mut mesh = Mesh {
        dim,
        nodes_per_side,
        coords,
        elements,
        boundary,
    };
    mesh.orient_elements();
    Ok(mesh)
}

impl Mesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_side(&self) -> usize {
        self.nodes_per_side
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.nodes_per_side - 1) as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.elements[e * k..(e + 1) * k]
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    /// Samples a function at every node.
    pub fn interpolate(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.num_nodes()).map(|i| f(self.node(i))).collect()
    }

    fn signed_volume(&self, nodes: &[usize]) -> f64 {
        let x0 = self.node(nodes[0]);
        let mut jac = [[0.0; 3]; 3];
        for (c, &v) in nodes[1..].iter().enumerate() {
            let x = self.node(v);
            for r in 0..self.dim {
                jac[r][c] = x[r] - x0[r];
            }
        }
        if self.dim == 2 {
            0.5 * (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0])
        } else {
            det3(&jac) / 6.0
        }
    }

    fn orient_elements(&mut self) {
        for e in 0..self.num_elements() {
            if self.signed_volume(self.element(e)) < 0.0 {
                let k = self.dim + 1;
                self.elements.swap(e * k + 1, e * k + 2);
            }
        }
    }

    /// Volume and barycentric gradients of element `e`.
    pub fn element_geometry(&self, e: usize) -> ElementGeometry {
        let nodes = self.element(e);
        let d = self.dim;
        let x0 = self.node(nodes[0]);
        let mut jac = [[0.0; 3]; 3];
        for (c, &v) in nodes[1..].iter().enumerate() {
            let x = self.node(v);
            for r in 0..d {
                jac[r][c] = x[r] - x0[r];
            }
        }
        let mut grads = [[0.0; 3]; 4];
        let volume;
        if d == 2 {
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            volume = 0.5 * det.abs();
            // rows of J^{-1} are the gradients of λ1, λ2
            let inv = [
                [jac[1][1] / det, -jac[0][1] / det],
                [-jac[1][0] / det, jac[0][0] / det],
            ];
            for i in 0..2 {
                grads[i + 1] = [inv[i][0], inv[i][1], 0.0];
            }
        } else {
            let det = det3(&jac);
            volume = det.abs() / 6.0;
            let inv = inv3(&jac, det);
            for i in 0..3 {
                grads[i + 1] = inv[i];
            }
        }
        for c in 0..3 {
            grads[0][c] = -(1..=d).map(|i| grads[i][c]).sum::<f64>();
        }
        ElementGeometry { volume, grads }
    }

    /// Measure of a boundary facet.
    pub fn facet_measure(&self, facet: &BoundaryFacet) -> f64 {
        let a = self.node(facet.nodes[0]);
        let b = self.node(facet.nodes[1]);
        if self.dim == 2 {
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        } else {
            let c = self.node(facet.nodes[2]);
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let cr = [
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ];
            0.5 * (cr[0] * cr[0] + cr[1] * cr[1] + cr[2] * cr[2]).sqrt()
        }
    }

    /// Nodes and P1 weights whose combination gives the value at `point`.
    ///
    /// Points within `1e-10` outside the closed domain are clamped onto it.
    pub fn interpolation_weights(&self, point: &[f64]) -> Result<Vec<(usize, f64)>> {
        const TOL: f64 = 1e-10;
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "point dimension",
                expected: self.dim,
                got: point.len(),
            });
        }
        if point.iter().any(|&x| !(-TOL..=1.0 + TOL).contains(&x)) {
            return Err(Error::OutsideDomain {
                point: point.to_vec(),
            });
        }
        let n = self.nodes_per_side;
        let cells = (n - 1) as f64;
        let mut cell = [0usize; 3];
        let mut local = [0.0f64; 3];
        for k in 0..self.dim {
            let s = point[k].clamp(0.0, 1.0) * cells;
            let c = (s.floor() as usize).min(n - 2);
            cell[k] = c;
            local[k] = (s - c as f64).clamp(0.0, 1.0);
        }
        // Kuhn simplex containing the point: walk axes by decreasing local coordinate
        let mut order: Vec<usize> = (0..self.dim).collect();
        order.sort_by(|&a, &b| local[b].partial_cmp(&local[a]).unwrap().then(a.cmp(&b)));
        let node = |c: &[usize]| -> usize { c[..self.dim].iter().rev().fold(0, |acc, &i| acc * n + i) };
        let mut out = Vec::with_capacity(self.dim + 1);
        let mut cur = cell;
        out.push((node(&cur), 1.0 - local[order[0]]));
        for (step, &ax) in order.iter().enumerate() {
            cur[ax] += 1;
            let next = order.get(step + 1).map_or(0.0, |&a| local[a]);
            out.push((node(&cur), local[ax] - next));
        }
        Ok(out)
    }
}

/// Piecewise-linear evaluation of nodal `coefficients` at `points`.
pub fn evaluate_fem(mesh: &Mesh, coefficients: &[f64], points: &[Vec<f64>]) -> Result<Vec<f64>> {
    if coefficients.len() != mesh.num_nodes() {
        return Err(Error::DimensionMismatch {
            what: "coefficient vector",
            expected: mesh.num_nodes(),
            got: coefficients.len(),
        });
    }
    points
        .iter()
        .map(|p| {
            Ok(mesh
                .interpolation_weights(p)?
                .into_iter()
                .map(|(i, w)| w * coefficients[i])
                .sum())
        })
        .collect()
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inv3(m: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let mut r = [[0.0; 3]; 3];
    r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    r
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    #[test]
    fn element_counts_match_grid_splits() {
        let m = build_mesh(2, 37).unwrap();
        assert_eq!(m.num_nodes(), 1369);
        assert_eq!(m.num_elements(), 2592);
        let m = build_mesh(3, 26).unwrap();
        assert_eq!(m.num_nodes(), 17576);
        assert_eq!(m.num_elements(), 93750);
        let m = build_mesh(2, 2).unwrap();
        assert_eq!((m.num_nodes(), m.num_elements(), m.boundary_facets().len()), (4, 2, 4));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(build_mesh(1, 4), Err(Error::UnsupportedDimension(1))));
        assert!(matches!(build_mesh(4, 4), Err(Error::UnsupportedDimension(4))));
        assert!(build_mesh(2, 1).is_err());
    }

    #[test]
    fn volumes_are_positive_and_sum_to_one() {
        for (dim, n) in [(2, 2), (2, 7), (3, 2), (3, 5)] {
            let m = build_mesh(dim, n).unwrap();
            let mut total = 0.0;
            for e in 0..m.num_elements() {
                let s = m.signed_volume(m.element(e));
                assert!(s > 0.0);
                total += s;
            }
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_facets_tile_the_boundary_once() {
        for (dim, n) in [(2, 5), (3, 4)] {
            let m = build_mesh(dim, n).unwrap();
            let area: f64 = m.boundary_facets().iter().map(|f| m.facet_measure(f)).sum();
            assert!((area - 2.0 * dim as f64).abs() < 1e-12);

            // every boundary facet is a face of exactly one element
            let mut faces: HashMap<Vec<usize>, usize> = HashMap::new();
            for e in 0..m.num_elements() {
                let el = m.element(e);
                for skip in 0..=dim {
                    let mut f: Vec<usize> =
                        el.iter().enumerate().filter(|&(k, _)| k != skip).map(|(_, &v)| v).collect();
                    f.sort_unstable();
                    *faces.entry(f).or_default() += 1;
                }
            }
            for facet in m.boundary_facets() {
                let mut f = facet.nodes.clone();
                f.sort_unstable();
                assert_eq!(faces.get(&f), Some(&1), "{facet:?}");
                for &v in &facet.nodes {
                    let x = m.node(v)[facet.face.axis];
                    assert_eq!(x, if facet.face.upper { 1.0 } else { 0.0 });
                }
            }
            let faces_on_hull = faces.values().filter(|&&c| c == 1).count();
            assert_eq!(faces_on_hull, m.boundary_facets().len());
        }
    }

    #[test]
    fn barycentric_gradients_reproduce_linears() {
        let m = build_mesh(3, 3).unwrap();
        for e in 0..m.num_elements() {
            let g = m.element_geometry(e);
            let nodes = m.element(e);
            // gradient of x_k interpolated must be e_k
            for k in 0..3 {
                for c in 0..3 {
                    let v: f64 = (0..4).map(|a| g.grads[a][c] * m.node(nodes[a])[k]).sum();
                    let want = if c == k { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn evaluation_reproduces_linear_functions() {
        for dim in [2, 3] {
            let m = build_mesh(dim, 4).unwrap();
            let u = m.interpolate(|x| 1.0 + x[0] - 0.5 * x[dim - 1]);
            let pts: Vec<Vec<f64>> = (0..50)
                .map(|k| (0..dim).map(|c| ((k * (7 + 3 * c) + c) % 37) as f64 / 36.0).collect())
                .collect();
            let vals = evaluate_fem(&m, &u, &pts).unwrap();
            for (p, v) in pts.iter().zip(vals) {
                assert!((v - (1.0 + p[0] - 0.5 * p[dim - 1])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn evaluation_at_nodes_and_edge_midpoints() {
        let m = build_mesh(2, 5).unwrap();
        let u: Vec<f64> = (0..m.num_nodes()).map(|i| (i as f64 * 0.37).sin()).collect();
        for i in 0..m.num_nodes() {
            let v = evaluate_fem(&m, &u, &[m.node(i).to_vec()]).unwrap()[0];
            assert_eq!(v, u[i]);
        }
        // horizontal edge between nodes 6 and 7
        let mid: Vec<f64> = m.node(6).iter().zip(m.node(7)).map(|(a, b)| 0.5 * (a + b)).collect();
        let v = evaluate_fem(&m, &u, &[mid]).unwrap()[0];
        assert!((v - 0.5 * (u[6] + u[7])).abs() < 1e-15);
    }

    #[test]
    fn points_outside_are_rejected() {
        let m = build_mesh(2, 3).unwrap();
        let u = vec![0.0; 9];
        assert!(matches!(
            evaluate_fem(&m, &u, &[vec![1.01, 0.5]]),
            Err(Error::OutsideDomain { .. })
        ));
        assert!(evaluate_fem(&m, &u, &[vec![1.0 + 1e-12, 0.5]]).is_ok());
    }
}
