//! P1 finite element assembly on [`Mesh`]es.

use std::fmt;

use crate::error::{Error, Result};
use crate::mesh::{Face, Mesh};
use crate::quadrature::{gauss_legendre_on, SimplexRule};
use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::splines::SplineBasis;

/// Neumann data `g` on the boundary.
pub enum BoundaryFlux {
    Zero,
    /// `g = rates[face.index()] * t`, constant in space on each face.
    LinearInTime { rates: Vec<f64> },
    General(Box<dyn Fn(&[f64], Face, f64) -> f64 + Send + Sync>),
}

impl BoundaryFlux {
    pub fn value(&self, x: &[f64], face: Face, t: f64) -> f64 {
        match self {
            BoundaryFlux::Zero => 0.0,
            BoundaryFlux::LinearInTime { rates } => rates.get(face.index()).copied().unwrap_or(0.0) * t,
            BoundaryFlux::General(g) => g(x, face, t),
        }
    }

    /// Heating on `x1 = 1` and cooling on `x1 = 0` at `rate * t`; other faces insulated.
    pub fn opposing_faces(dim: usize, rate: f64) -> Self {
        let mut rates = vec![0.0; 2 * dim];
        rates[0] = -rate;
        rates[1] = rate;
        BoundaryFlux::LinearInTime { rates }
    }
}

impl fmt::Debug for BoundaryFlux {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryFlux::Zero => write!(f, "Zero"),
            BoundaryFlux::LinearInTime { rates } => f.debug_struct("LinearInTime").field("rates", rates).finish(),
            BoundaryFlux::General(_) => write!(f, "General(..)"),
        }
    }
}

pub type SourceFn = Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type InitialFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Data of the parabolic problem (everything except the diffusivity and mesh).
pub struct ProblemSpec {
    /// Initial temperature; `None` means zero.
    pub initial: Option<InitialFn>,
    /// Interior source `f(x, t)`; `None` means zero.
    pub source: Option<SourceFn>,
    pub flux: BoundaryFlux,
    pub final_time: f64,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("initial", &self.initial.is_some())
            .field("source", &self.source.is_some())
            .field("flux", &self.flux)
            .field("final_time", &self.final_time)
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(flux: BoundaryFlux, final_time: f64) -> Result<Self> {
        if !(final_time > 0.0) {
            return Err(Error::InvalidArgument(format!("final time must be positive, got {final_time}")));
        }
        Ok(Self {
            initial: None,
            source: None,
            flux,
            final_time,
        })
    }

    /// Zero initial data and source, `∓rate·t` on the two `x1` faces.
    pub fn balanced_fluxes(dim: usize, rate: f64, final_time: f64) -> Result<Self> {
        Self::new(BoundaryFlux::opposing_faces(dim, rate), final_time)
    }

    pub fn with_initial(mut self, u0: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.initial = Some(Box::new(u0));
        self
    }

    pub fn with_source(mut self, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.source = Some(Box::new(f));
        self
    }

    /// Nodal interpolant of the initial condition.
    pub fn initial_nodal(&self, mesh: &Mesh) -> Vec<f64> {
        match &self.initial {
            Some(u0) => mesh.interpolate(u0),
            None => vec![0.0; mesh.num_nodes()],
        }
    }
}

/// Consistent mass matrix `(φ_i, φ_k)`.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let d = mesh.dim();
    let k = d + 1;
    let denom = ((d + 1) * (d + 2)) as f64;
    let mut b = TripletBuilder::with_capacity(mesh.num_nodes(), mesh.num_nodes(), mesh.num_elements() * k * k);
    for e in 0..mesh.num_elements() {
        let vol = mesh.element_geometry(e).volume;
        let nodes = mesh.element(e);
        for (a, &na) in nodes.iter().enumerate() {
            for (c, &nc) in nodes.iter().enumerate() {
                let f = if a == c { 2.0 } else { 1.0 };
                b.push(na, nc, vol * f / denom);
            }
        }
    }
    b.build(true)
}

fn push_stiffness(b: &mut TripletBuilder, nodes: &[usize], grads: &[[f64; 3]; 4], scale: f64) {
    for (a, &na) in nodes.iter().enumerate() {
        for (c, &nc) in nodes.iter().enumerate() {
            let dot = grads[a][0] * grads[c][0] + grads[a][1] * grads[c][1] + grads[a][2] * grads[c][2];
            b.push(na, nc, scale * dot);
        }
    }
}

fn quad_point(mesh: &Mesh, nodes: &[usize], bary: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (a, &na) in nodes.iter().enumerate() {
        for (o, x) in out.iter_mut().zip(mesh.node(na)) {
            *o += bary[a] * x;
        }
    }
}

/// Weighted stiffness matrix `(w ∇φ_i, ∇φ_k)`, integrating `w` with a rule
/// exact to `quad_degree` on every simplex.
pub fn assemble_stiffness(mesh: &Mesh, weight: impl Fn(&[f64]) -> f64, quad_degree: usize) -> CsrMatrix {
    let d = mesh.dim();
    let k = d + 1;
    let rule = SimplexRule::new(d, quad_degree);
    let mut b = TripletBuilder::with_capacity(mesh.num_nodes(), mesh.num_nodes(), mesh.num_elements() * k * k);
    let mut x = vec![0.0; d];
    for e in 0..mesh.num_elements() {
        let g = mesh.element_geometry(e);
        let nodes = mesh.element(e);
        let mut integral = 0.0;
        for q in 0..rule.len() {
            quad_point(mesh, nodes, rule.point(q), &mut x);
            integral += rule.weights[q] * weight(&x);
        }
        push_stiffness(&mut b, nodes, &g.grads, integral * g.volume);
    }
    b.build(true)
}

/// Unweighted stiffness matrix `(∇φ_i, ∇φ_k)`.
pub fn assemble_laplace(mesh: &Mesh) -> CsrMatrix {
    assemble_stiffness(mesh, |_| 1.0, 0)
}

/// `A^(p) = (ψ_p ∇φ_i, ∇φ_k)` for every spline.
///
/// Each matrix only holds entries of elements where `ψ_p` has nonzero
/// integral. The quadrature is exact for the tensor-product polynomial
/// pieces whenever knot lines coincide with mesh lines.
pub fn assemble_spline_stiffness(mesh: &Mesh, basis: &SplineBasis) -> Result<Vec<CsrMatrix>> {
    if basis.dim() != mesh.dim() {
        return Err(Error::DimensionMismatch {
            what: "spline dimension",
            expected: mesh.dim(),
            got: basis.dim(),
        });
    }
    let d = mesh.dim();
    let m = mesh.num_nodes();
    let rule = SimplexRule::new(d, (d * basis.degree()).max(1));
    let mut builders: Vec<TripletBuilder> = (0..basis.len()).map(|_| TripletBuilder::new(m, m)).collect();
    let mut x = vec![0.0; d];
    let mut integrals: Vec<(usize, f64)> = Vec::new();
    for e in 0..mesh.num_elements() {
        let g = mesh.element_geometry(e);
        let nodes = mesh.element(e);
        integrals.clear();
        for q in 0..rule.len() {
            quad_point(mesh, nodes, rule.point(q), &mut x);
            let w = rule.weights[q];
            for (p, v) in basis.evaluate_nonzero(&x) {
                match integrals.iter_mut().find(|(pp, _)| *pp == p) {
                    Some(slot) => slot.1 += w * v,
                    None => integrals.push((p, w * v)),
                }
            }
        }
        for &(p, integral) in &integrals {
            if integral != 0.0 {
                push_stiffness(&mut builders[p], nodes, &g.grads, integral * g.volume);
            }
        }
    }
    Ok(builders.into_iter().map(|b| b.build(true)).collect())
}

/// `⟨g(t), φ_k⟩` assembled facet by facet.
pub fn assemble_boundary_load(mesh: &Mesh, flux: &BoundaryFlux, t: f64) -> Vec<f64> {
    boundary_load_with(mesh, |x, face| flux.value(x, face, t))
}

/// Boundary load of a time-independent flux given as a function of position and face.
pub fn boundary_load_with(mesh: &Mesh, g: impl Fn(&[f64], Face) -> f64) -> Vec<f64> {
    let d = mesh.dim();
    let mut out = vec![0.0; mesh.num_nodes()];
    // facet rules in barycentric form, weights summing to one
    let (bary, weights): (Vec<Vec<f64>>, Vec<f64>) = if d == 2 {
        let (x, w) = gauss_legendre_on(2, 0.0, 1.0);
        (x.iter().map(|&s| vec![1.0 - s, s]).collect(), w)
    } else {
        let a = 2.0 / 3.0;
        let b = 1.0 / 6.0;
        (vec![vec![a, b, b], vec![b, a, b], vec![b, b, a]], vec![1.0 / 3.0; 3])
    };
    let mut x = vec![0.0; d];
    for facet in mesh.boundary_facets() {
        let meas = mesh.facet_measure(facet);
        for (lam, w) in bary.iter().zip(&weights) {
            quad_point(mesh, &facet.nodes, lam, &mut x);
            let gv = g(&x, facet.face);
            if gv == 0.0 {
                continue;
            }
            for (a, &na) in facet.nodes.iter().enumerate() {
                out[na] += meas * w * gv * lam[a];
            }
        }
    }
    out
}

/// `(f(t), φ_k)` with a degree-2 simplex rule.
pub fn assemble_source_load(mesh: &Mesh, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let d = mesh.dim();
    let rule = SimplexRule::new(d, 2);
    let mut out = vec![0.0; mesh.num_nodes()];
    let mut x = vec![0.0; d];
    for e in 0..mesh.num_elements() {
        let vol = mesh.element_geometry(e).volume;
        let nodes = mesh.element(e);
        for q in 0..rule.len() {
            let lam = rule.point(q);
            quad_point(mesh, nodes, lam, &mut x);
            let fv = f(&x) * rule.weights[q] * vol;
            for (a, &na) in nodes.iter().enumerate() {
                out[na] += fv * lam[a];
            }
        }
    }
    out
}

/// `η = Σ_p nnz(A^(p)) / nnz(A•)`.
pub fn compute_eta(stiffness: &[CsrMatrix], laplace: &CsrMatrix) -> Result<f64> {
    for a in stiffness {
        if a.nrows() != laplace.nrows() {
            return Err(Error::DimensionMismatch {
                what: "stiffness matrix",
                expected: laplace.nrows(),
                got: a.nrows(),
            });
        }
    }
    let total: usize = stiffness.iter().map(CsrMatrix::nnz).sum();
    Ok(total as f64 / laplace.nnz() as f64)
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::mesh::build_mesh;
    use crate::splines::build_partition;

    #[test]
    fn mass_entries_sum_to_domain_volume() {
        for (dim, n) in [(2, 2), (2, 6), (3, 4)] {
            let mesh = build_mesh(dim, n).unwrap();
            let b = assemble_mass(&mesh);
            let total: f64 = b.values().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(b.values().iter().all(|&v| v >= 0.0));
            assert!(b.asymmetry() == 0.0);
        }
    }

    #[test]
    fn single_triangle_mass_entries() {
        let mesh = build_mesh(2, 2).unwrap();
        // node 1 = (1,0) only belongs to the first triangle (area 1/2)
        let b = assemble_mass(&mesh);
        assert!((b.get(1, 1) - 0.5 / 6.0).abs() < 1e-15);
        assert!((b.get(1, 0) - 0.5 / 12.0).abs() < 1e-15);
        assert!((b.get(1, 3) - 0.5 / 12.0).abs() < 1e-15);
        assert_eq!(b.get(1, 2), 0.0);
    }

    #[test]
    fn mass_rows_sum_to_lumped_volume() {
        let mesh = build_mesh(2, 5).unwrap();
        let b = assemble_mass(&mesh);
        let mut lumped = vec![0.0; mesh.num_nodes()];
        for e in 0..mesh.num_elements() {
            let v = mesh.element_geometry(e).volume;
            for &n in mesh.element(e) {
                lumped[n] += v / 3.0;
            }
        }
        for (r, l) in b.row_sums().iter().zip(&lumped) {
            assert!((r - l).abs() < 1e-15);
        }
    }

    #[test]
    fn mass_is_positive_definite() {
        let mesh = build_mesh(2, 5).unwrap();
        let b = assemble_mass(&mesh);
        let n = b.nrows();
        let dense = DMatrix::from_row_slice(n, n, &b.to_dense());
        let min = dense.symmetric_eigen().eigenvalues.min();
        assert!(min > 0.0, "{min}");
    }

    #[test]
    fn stiffness_row_sums_vanish_and_scale_linearly() {
        for (dim, n) in [(2, 7), (3, 4)] {
            let mesh = build_mesh(dim, n).unwrap();
            let a = assemble_laplace(&mesh);
            assert!(a.row_sums().iter().all(|s| s.abs() < 1e-12));
            let a2 = assemble_stiffness(&mesh, |_| 2.0, 0);
            assert_eq!(a2.col_idx(), a.col_idx());
            for (x, y) in a2.values().iter().zip(a.values()) {
                assert!((x - 2.0 * y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn spline_stiffness_sums_to_laplace() {
        let mesh = build_mesh(2, 13).unwrap();
        let basis = build_partition(2, 5, 2).unwrap();
        let parts = assemble_spline_stiffness(&mesh, &basis).unwrap();
        let lap = assemble_laplace(&mesh);
        let mut sum = CsrMatrix::zeros(lap.nrows(), lap.ncols());
        for p in &parts {
            sum = sum.linear_combination(1.0, p, 1.0).unwrap();
        }
        let diff = sum.linear_combination(1.0, &lap, -1.0).unwrap();
        assert!(diff.frobenius_norm() <= 1e-12 * lap.frobenius_norm());
        let eta = compute_eta(&parts, &lap).unwrap();
        assert!(eta >= 1.0 && eta <= basis.len() as f64);
    }

    #[test]
    fn eta_limits() {
        let mesh = build_mesh(2, 4).unwrap();
        let lap = assemble_laplace(&mesh);
        assert_eq!(compute_eta(std::slice::from_ref(&lap), &lap).unwrap(), 1.0);
        assert_eq!(compute_eta(&vec![lap.clone(); 5], &lap).unwrap(), 5.0);
    }

    #[test]
    fn boundary_load_examples() {
        let mesh = build_mesh(2, 9).unwrap();
        let zero = assemble_boundary_load(&mesh, &BoundaryFlux::Zero, 0.3);
        assert!(zero.iter().all(|&v| v == 0.0));

        let ones = boundary_load_with(&mesh, |_, _| 1.0);
        assert!((ones.iter().sum::<f64>() - 4.0).abs() < 1e-12);

        let mesh3 = build_mesh(3, 4).unwrap();
        let ones = boundary_load_with(&mesh3, |_, _| 2.5);
        assert!((ones.iter().sum::<f64>() - 15.0).abs() < 1e-12);

        let flux = BoundaryFlux::opposing_faces(2, 20.0);
        let load = assemble_boundary_load(&mesh, &flux, 0.1);
        assert!(load.iter().sum::<f64>().abs() < 1e-12);
        let left: f64 = (0..mesh.num_nodes())
            .filter(|&i| mesh.node(i)[0] == 0.0)
            .map(|i| load[i])
            .sum();
        assert!((left + 2.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_load_integrates_linear_flux_exactly() {
        // g = x2 on the face x1 = 0: ∫ g φ_k summed = ∫_0^1 s ds = 1/2,
        // first moment ∫ g x2 = 1/3 is reproduced by nodal weights
        let mesh = build_mesh(2, 6).unwrap();
        let load = boundary_load_with(&mesh, |x, f| if f.index() == 0 { x[1] } else { 0.0 });
        assert!((load.iter().sum::<f64>() - 0.5).abs() < 1e-14);
        let moment: f64 = (0..mesh.num_nodes()).map(|i| load[i] * mesh.node(i)[1]).sum();
        assert!((moment - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn source_load_of_constant() {
        let mesh = build_mesh(3, 3).unwrap();
        let load = assemble_source_load(&mesh, |_| 3.0);
        assert!((load.iter().sum::<f64>() - 3.0).abs() < 1e-13);
    }
}
