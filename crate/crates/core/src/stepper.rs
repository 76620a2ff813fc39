//! Time stepping for the parametric Galerkin system and for single,
//! fixed-coefficient problems.
//!
//! The parametric state is an `M x N` table stored column-major: column `j`
//! holds the finite element coefficients multiplying the `j`-th polynomial.
//! The coupled matrices never get formed; the block-diagonal part
//! `B• + δμA•` is factored once and the off-diagonal coupling `S` is applied
//! as a sum of Kronecker products.

use crate::error::{Error, Result};
use crate::fem::{assemble_boundary_load, assemble_mass, assemble_laplace, assemble_source_load, assemble_spline_stiffness, assemble_stiffness, BoundaryFlux, ProblemSpec};
use crate::mesh::Mesh;
use crate::sparse::{BandCholesky, CsrMatrix, TripletBuilder};
use crate::spectral::{assemble_all_y, DegreeMatrix, ParameterInterval, TripleProductMatrix};
use crate::splines::SplineBasis;

/// Sparse matrix keeping only its nonempty rows, for fast repeated products.
#[derive(Debug, Clone)]
struct CompactRows {
    rows: Vec<usize>,
    ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CompactRows {
    fn new(a: &CsrMatrix) -> Self {
        let mut rows = Vec::new();
        let mut ptr = vec![0];
        let mut cols = Vec::with_capacity(a.nnz());
        let mut vals = Vec::with_capacity(a.nnz());
        for i in 0..a.nrows() {
            let (c, v) = a.row(i);
            if c.is_empty() {
                continue;
            }
            rows.push(i);
            cols.extend_from_slice(c);
            vals.extend_from_slice(v);
            ptr.push(cols.len());
        }
        Self { rows, ptr, cols, vals }
    }

    /// `out += alpha * A x`
    #[inline]
    fn mul_add(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        for (k, &i) in self.rows.iter().enumerate() {
            let mut s = 0.0;
            for t in self.ptr[k]..self.ptr[k + 1] {
                s += self.vals[t] * x[self.cols[t]];
            }
            out[i] += alpha * s;
        }
    }
}

/// Kronecker-structured Galerkin operator of the parametric heat equation.
pub struct ParametricOperator {
    mass: CsrMatrix,
    laplace: CsrMatrix,
    parts: Vec<CsrMatrix>,
    compact: Vec<CompactRows>,
    couplings: Vec<TripleProductMatrix>,
    mu: f64,
    nbasis: usize,
}

impl std::fmt::Debug for ParametricOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParametricOperator")
            .field("M", &self.mass.nrows())
            .field("N", &self.nbasis)
            .field("P", &self.parts.len())
            .field("mu", &self.mu)
            .finish()
    }
}

impl ParametricOperator {
    /// Assembles every piece for a mesh, spline basis and polynomial space.
    pub fn assemble(mesh: &Mesh, basis: &SplineBasis, lambda: &DegreeMatrix, interval: &ParameterInterval) -> Result<Self> {
        if lambda.nvars() != basis.len() {
            return Err(Error::DimensionMismatch {
                what: "number of parameters",
                expected: basis.len(),
                got: lambda.nvars(),
            });
        }
        let mass = assemble_mass(mesh);
        let laplace = assemble_laplace(mesh);
        let parts = assemble_spline_stiffness(mesh, basis)?;
        let couplings = assemble_all_y(lambda, interval);
        Self::from_parts(mass, laplace, parts, couplings, interval.midpoint(), lambda.len())
    }

    /// Builds from already assembled matrices.
    pub fn from_parts(
        mass: CsrMatrix,
        laplace: CsrMatrix,
        parts: Vec<CsrMatrix>,
        couplings: Vec<TripleProductMatrix>,
        mu: f64,
        nbasis: usize,
    ) -> Result<Self> {
        let m = mass.nrows();
        if laplace.nrows() != m {
            return Err(Error::DimensionMismatch {
                what: "stiffness matrix",
                expected: m,
                got: laplace.nrows(),
            });
        }
        if parts.len() != couplings.len() {
            return Err(Error::DimensionMismatch {
                what: "coupling matrices",
                expected: parts.len(),
                got: couplings.len(),
            });
        }
        for (a, y) in parts.iter().zip(&couplings) {
            if a.nrows() != m {
                return Err(Error::DimensionMismatch {
                    what: "spline stiffness matrix",
                    expected: m,
                    got: a.nrows(),
                });
            }
            if y.size != nbasis {
                return Err(Error::DimensionMismatch {
                    what: "coupling matrix",
                    expected: nbasis,
                    got: y.size,
                });
            }
        }
        let compact = parts.iter().map(CompactRows::new).collect();
        Ok(Self {
            mass,
            laplace,
            parts,
            compact,
            couplings,
            mu,
            nbasis,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.mass.nrows()
    }

    pub fn num_basis(&self) -> usize {
        self.nbasis
    }

    pub fn num_params(&self) -> usize {
        self.parts.len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn laplace(&self) -> &CsrMatrix {
        &self.laplace
    }

    pub fn parts(&self) -> &[CsrMatrix] {
        &self.parts
    }

    pub fn couplings(&self) -> &[TripleProductMatrix] {
        &self.couplings
    }

    /// `out += alpha * S x` for column-major `M x N` tables.
    pub fn apply_coupling(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        let m = self.num_nodes();
        assert_eq!(x.len(), m * self.nbasis);
        assert_eq!(out.len(), x.len());
        for (a, y) in self.compact.iter().zip(&self.couplings) {
            for &(j, l, v) in &y.offdiag {
                let w = alpha * v;
                a.mul_add(w, &x[l * m..(l + 1) * m], &mut out[j * m..(j + 1) * m]);
                a.mul_add(w, &x[j * m..(j + 1) * m], &mut out[l * m..(l + 1) * m]);
            }
        }
    }

    /// Structural `nnz(S) = Σ_p nnz(offdiag Y^(p)) · nnz(A^(p))`.
    pub fn coupling_nnz(&self) -> usize {
        self.parts
            .iter()
            .zip(&self.couplings)
            .map(|(a, y)| y.offdiag_nnz() * a.nnz())
            .sum()
    }

    /// `S` as an explicit `MN x MN` sparse matrix; only sensible for small cases.
    pub fn coupling_to_csr(&self) -> CsrMatrix {
        let m = self.num_nodes();
        let dim = m * self.nbasis;
        let mut b = TripletBuilder::with_capacity(dim, dim, self.coupling_nnz());
        for (a, y) in self.parts.iter().zip(&self.couplings) {
            for &(j, l, v) in &y.offdiag {
                for (i, k, aik) in a.triplets() {
                    b.push(j * m + i, l * m + k, v * aik);
                    b.push(l * m + i, j * m + k, v * aik);
                }
            }
        }
        b.build(true)
    }

    /// Factorization of `B• + δμA•`.
    pub fn factor(&self, delta: f64) -> Result<BandCholesky> {
        let system = self.mass.linear_combination(1.0, &self.laplace, delta * self.mu)?;
        BandCholesky::factor(&system)
    }
}

/// Snapshot times converted to step indices; errors when off the grid.
pub fn snapshot_steps(times: &[f64], delta: f64, final_time: f64) -> Result<Vec<usize>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {delta}")));
    }
    times
        .iter()
        .map(|&t| {
            let k = (t / delta).round();
            if !(t >= 0.0) || t > final_time * (1.0 + 1e-12) || (k * delta - t).abs() > 1e-9 * delta.max(t) {
                Err(Error::OffGridTime(t))
            } else {
                Ok(k as usize)
            }
        })
        .collect()
}

/// Time-averaged right-hand side `(1/δ)∫ r dt` over step `[kδ, (k+1)δ]`.
///
/// Exact for fluxes linear in time (evaluated at the midpoint), otherwise by
/// 3-point Gauss quadrature in time.
pub fn rhs_mean(mesh: &Mesh, problem: &ProblemSpec, k: usize, delta: f64) -> Vec<f64> {
    let t0 = k as f64 * delta;
    let linear = matches!(problem.flux, BoundaryFlux::Zero | BoundaryFlux::LinearInTime { .. });
    if linear && problem.source.is_none() {
        return rhs_at(mesh, problem, t0 + 0.5 * delta);
    }
    let (nodes, weights) = crate::quadrature::gauss_legendre_on(3, t0, t0 + delta);
    let mut out = vec![0.0; mesh.num_nodes()];
    for (t, w) in nodes.iter().zip(&weights) {
        for (o, v) in out.iter_mut().zip(rhs_at(mesh, problem, *t)) {
            *o += w / delta * v;
        }
    }
    out
}

/// `r(t) = (f(t), φ_k) + ⟨g(t), φ_k⟩`.
pub fn rhs_at(mesh: &Mesh, problem: &ProblemSpec, t: f64) -> Vec<f64> {
    let mut r = assemble_boundary_load(mesh, &problem.flux, t);
    if let Some(f) = &problem.source {
        for (o, v) in r.iter_mut().zip(assemble_source_load(mesh, |x| f(x, t))) {
            *o += v;
        }
    }
    r
}

/// Right-hand side provider that avoids reassembly for the common linear-flux case.
struct RhsCache<'a> {
    mesh: &'a Mesh,
    problem: &'a ProblemSpec,
    unit: Option<Vec<f64>>,
}

impl<'a> RhsCache<'a> {
    fn new(mesh: &'a Mesh, problem: &'a ProblemSpec) -> Self {
        let unit = match (&problem.flux, &problem.source) {
            (BoundaryFlux::LinearInTime { .. } | BoundaryFlux::Zero, None) => Some(rhs_at(mesh, problem, 1.0)),
            _ => None,
        };
        Self { mesh, problem, unit }
    }

    fn mean(&self, k: usize, delta: f64) -> Vec<f64> {
        match &self.unit {
            Some(u) => {
                let t = (k as f64 + 0.5) * delta;
                u.iter().map(|v| v * t).collect()
            }
            None => rhs_mean(self.mesh, self.problem, k, delta),
        }
    }

    fn at(&self, t: f64) -> Vec<f64> {
        match &self.unit {
            Some(u) => u.iter().map(|v| v * t).collect(),
            None => rhs_at(self.mesh, self.problem, t),
        }
    }
}

/// Stored parametric snapshots (`M x N` column-major tables).
#[derive(Debug, Clone)]
pub struct SolutionSnapshots {
    pub times: Vec<f64>,
    pub num_nodes: usize,
    pub num_basis: usize,
    pub states: Vec<Vec<f64>>,
}

impl SolutionSnapshots {
    pub fn state(&self, t: f64) -> Result<&[f64]> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
            .map(|k| self.states[k].as_slice())
            .ok_or(Error::MissingSnapshot(t))
    }

    /// Column `j` of the snapshot at index `k`.
    pub fn column(&self, k: usize, j: usize) -> &[f64] {
        &self.states[k][j * self.num_nodes..(j + 1) * self.num_nodes]
    }
}

/// Semi-implicit Euler propagation that hands each requested snapshot to `observe`.
///
/// Per step: `Ξ = B• X`, `ξ = Ξ − δ S X + δ r̂` (load in the constant column
/// only), then `(B• + δμA•) X⁺ = ξ` column by column.
pub fn semi_implicit_run(
    op: &ParametricOperator,
    mesh: &Mesh,
    problem: &ProblemSpec,
    delta: f64,
    times: &[f64],
    mut observe: impl FnMut(usize, f64, &[f64]) -> Result<()>,
) -> Result<()> {
    let steps = snapshot_steps(times, delta, problem.final_time)?;
    let m = op.num_nodes();
    if mesh.num_nodes() != m {
        return Err(Error::DimensionMismatch {
            what: "mesh nodes",
            expected: m,
            got: mesh.num_nodes(),
        });
    }
    let n = op.num_basis();
    let factor = op.factor(delta)?;
    let rhs = RhsCache::new(mesh, problem);
    let mut state = vec![0.0; m * n];
    state[..m].copy_from_slice(&problem.initial_nodal(mesh));
    let mut scratch = vec![0.0; m * n];
    let last = steps.iter().copied().max().unwrap_or(0);
    emit(&steps, times, 0, &state, &mut observe)?;
    for k in 0..last {
        for j in 0..n {
            op.mass.mul_vec(&state[j * m..(j + 1) * m], &mut scratch[j * m..(j + 1) * m]);
        }
        op.apply_coupling(-delta, &state, &mut scratch);
        for (o, r) in scratch[..m].iter_mut().zip(rhs.mean(k, delta)) {
            *o += delta * r;
        }
        factor.solve_columns(&mut scratch, n);
        std::mem::swap(&mut state, &mut scratch);
        emit(&steps, times, k + 1, &state, &mut observe)?;
    }
    Ok(())
}

fn emit(
    steps: &[usize],
    times: &[f64],
    k: usize,
    state: &[f64],
    observe: &mut impl FnMut(usize, f64, &[f64]) -> Result<()>,
) -> Result<()> {
    for (idx, &s) in steps.iter().enumerate() {
        if s == k {
            observe(idx, times[idx], state)?;
        }
    }
    Ok(())
}

/// Semi-implicit solve keeping full snapshots in memory.
pub fn semi_implicit_solve(
    op: &ParametricOperator,
    mesh: &Mesh,
    problem: &ProblemSpec,
    delta: f64,
    times: &[f64],
) -> Result<SolutionSnapshots> {
    let mut states = vec![Vec::new(); times.len()];
    semi_implicit_run(op, mesh, problem, delta, times, |idx, _, s| {
        states[idx] = s.to_vec();
        Ok(())
    })?;
    Ok(SolutionSnapshots {
        times: times.to_vec(),
        num_nodes: op.num_nodes(),
        num_basis: op.num_basis(),
        states,
    })
}

/// Max-norm of the parametric state after every step up to the final time.
pub fn stability_probe(op: &ParametricOperator, mesh: &Mesh, problem: &ProblemSpec, delta: f64) -> Result<Vec<f64>> {
    let steps = (problem.final_time / delta).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * delta).collect();
    let mut norms = Vec::with_capacity(steps + 1);
    semi_implicit_run(op, mesh, problem, delta, &times, |_, _, s| {
        norms.push(s.iter().fold(0.0f64, |a, &v| a.max(v.abs())));
        Ok(())
    })?;
    Ok(norms)
}

/// Time discretization for a single, non-parametric diffusivity.
#[derive(Debug, Clone, Copy)]
pub enum TimeScheme<'a> {
    ImplicitEuler,
    CrankNicolson,
    /// Same splitting as the parametric scheme: `(B + δμA_ref)u⁺ = (B − δ(A − μA_ref))u + δr̂`.
    SemiImplicit { mu: f64, reference: &'a CsrMatrix },
}

/// Nodal snapshots of a fixed-coefficient problem with stiffness matrix `stiffness`.
pub fn fixed_coefficient_solve(
    mesh: &Mesh,
    mass: &CsrMatrix,
    stiffness: &CsrMatrix,
    problem: &ProblemSpec,
    delta: f64,
    times: &[f64],
    scheme: TimeScheme<'_>,
) -> Result<Vec<Vec<f64>>> {
    let steps = snapshot_steps(times, delta, problem.final_time)?;
    let m = mesh.num_nodes();
    let rhs = RhsCache::new(mesh, problem);
    let (lhs, explicit) = match scheme {
        TimeScheme::ImplicitEuler => (mass.linear_combination(1.0, stiffness, delta)?, None),
        TimeScheme::CrankNicolson => (
            mass.linear_combination(1.0, stiffness, 0.5 * delta)?,
            Some(mass.linear_combination(1.0, stiffness, -0.5 * delta)?),
        ),
        TimeScheme::SemiImplicit { mu, reference } => {
            let rest = stiffness.linear_combination(1.0, reference, -mu)?;
            (
                mass.linear_combination(1.0, reference, delta * mu)?,
                Some(mass.linear_combination(1.0, &rest, -delta)?),
            )
        }
    };
    let factor = BandCholesky::factor(&lhs)?;
    let mut u = problem.initial_nodal(mesh);
    let mut next = vec![0.0; m];
    let mut out = vec![Vec::new(); times.len()];
    let last = steps.iter().copied().max().unwrap_or(0);
    let store = |k: usize, u: &[f64], out: &mut Vec<Vec<f64>>| {
        for (idx, &s) in steps.iter().enumerate() {
            if s == k {
                out[idx] = u.to_vec();
            }
        }
    };
    store(0, &u, &mut out);
    let mut r_prev = rhs.at(0.0);
    for k in 0..last {
        match &explicit {
            Some(e) => e.mul_vec(&u, &mut next),
            None => mass.mul_vec(&u, &mut next),
        }
        if let TimeScheme::CrankNicolson = scheme {
            let r_next = rhs.at((k + 1) as f64 * delta);
            for i in 0..m {
                next[i] += 0.5 * delta * (r_prev[i] + r_next[i]);
            }
            r_prev = r_next;
        } else {
            for (o, r) in next.iter_mut().zip(rhs.mean(k, delta)) {
                *o += delta * r;
            }
        }
        factor.solve_in_place(&mut next);
        std::mem::swap(&mut u, &mut next);
        store(k + 1, &u, &mut out);
    }
    Ok(out)
}

/// Crank–Nicolson reference solve with a diffusivity given as a function.
pub fn crank_nicolson_solve(
    mesh: &Mesh,
    diffusivity: impl Fn(&[f64]) -> f64,
    problem: &ProblemSpec,
    delta: f64,
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_positive(mesh, &diffusivity)?;
    let mass = assemble_mass(mesh);
    let stiffness = assemble_stiffness(mesh, diffusivity, 2);
    fixed_coefficient_solve(mesh, &mass, &stiffness, problem, delta, times, TimeScheme::CrankNicolson)
}

/// Rejects diffusivities that are not positive at every mesh node.
pub fn check_positive(mesh: &Mesh, diffusivity: impl Fn(&[f64]) -> f64) -> Result<()> {
    for i in 0..mesh.num_nodes() {
        let x = mesh.node(i);
        let v = diffusivity(x);
        if !(v > 0.0) {
            return Err(Error::NonPositiveDiffusivity { point: x.to_vec(), value: v });
        }
    }
    Ok(())
}

/// Stiffness matrix of `a(·; θ)` assembled from precomputed spline parts.
pub fn combine_parts(parts: &[CsrMatrix], theta: &[f64]) -> Result<CsrMatrix> {
    if parts.len() != theta.len() || parts.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "parameter vector",
            expected: parts.len(),
            got: theta.len(),
        });
    }
    let m = parts[0].nrows();
    let mut b = TripletBuilder::with_capacity(m, m, parts.iter().map(CsrMatrix::nnz).sum());
    for (a, &t) in parts.iter().zip(theta) {
        for (i, k, v) in a.triplets() {
            b.push(i, k, t * v);
        }
    }
    Ok(b.build(true))
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::mesh::build_mesh;
    use crate::spectral::total_degree_indices;
    use crate::splines::build_partition;

    fn small_operator(nodes: usize, m: usize, s: usize, n: usize) -> (Mesh, ParametricOperator) {
        let mesh = build_mesh(2, nodes).unwrap();
        let basis = build_partition(2, m, s).unwrap();
        let lambda = total_degree_indices(basis.len(), n).unwrap();
        let e = ParameterInterval::new(0.5, 2.0).unwrap();
        let op = ParametricOperator::assemble(&mesh, &basis, &lambda, &e).unwrap();
        (mesh, op)
    }

    fn to_dense(a: &CsrMatrix) -> DMatrix<f64> {
        DMatrix::from_row_slice(a.nrows(), a.ncols(), &a.to_dense())
    }

    fn kron(y: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
        y.kronecker(a)
    }

    #[test]
    fn coupling_matches_dense_kronecker_sum() {
        let (_, op) = small_operator(2, 2, 1, 1);
        let mut dense = DMatrix::zeros(4 * 5, 4 * 5);
        for (a, y) in op.parts().iter().zip(op.couplings()) {
            dense += kron(&to_dense(&y.offdiag_csr()), &to_dense(a));
        }
        let explicit = to_dense(&op.coupling_to_csr());
        assert!((&dense - &explicit).abs().max() < 1e-14);
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; 20];
        op.apply_coupling(1.0, &x, &mut y);
        let want = &dense * DVector::from_vec(x);
        for i in 0..20 {
            assert!((y[i] - want[i]).abs() < 1e-14);
        }
        assert_eq!(op.coupling_nnz(), op.coupling_to_csr().nnz());
    }

    #[test]
    fn constant_only_space_has_no_coupling() {
        let (_, op) = small_operator(4, 2, 1, 0);
        assert_eq!(op.coupling_nnz(), 0);
        assert_eq!(op.coupling_to_csr().nnz(), 0);
    }

    fn dense_reference(op: &ParametricOperator, mesh: &Mesh, problem: &ProblemSpec, delta: f64, steps: usize) -> Vec<DVector<f64>> {
        let m = op.num_nodes();
        let n = op.num_basis();
        let eye = DMatrix::<f64>::identity(n, n);
        let b = eye.kronecker(&to_dense(op.mass()));
        let d = eye.kronecker(&to_dense(op.laplace())) * op.mu();
        let s = to_dense(&op.coupling_to_csr());
        let lhs = &b + &d * delta;
        let rhs_mat = &b - &s * delta;
        let lu = lhs.lu();
        let mut u = DVector::zeros(m * n);
        let u0 = problem.initial_nodal(mesh);
        for i in 0..m {
            u[i] = u0[i];
        }
        let mut out = vec![u.clone()];
        for k in 0..steps {
            let mut r = &rhs_mat * &u;
            for (i, v) in rhs_mean(mesh, problem, k, delta).into_iter().enumerate() {
                r[i] += delta * v;
            }
            u = lu.solve(&r).unwrap();
            out.push(u.clone());
        }
        out
    }

    #[test]
    fn kronecker_step_matches_dense_formulation() {
        for (nodes, m, n) in [(3, 2, 1), (3, 2, 2), (4, 3, 1)] {
            let (mesh, op) = small_operator(nodes, m, 1, n);
            let delta = 1e-2;
            let problem = ProblemSpec::balanced_fluxes(2, 20.0, 0.1)
                .unwrap()
                .with_initial(|x| (3.0 * x[0]).cos() + x[1]);
            let times: Vec<f64> = (0..=10).map(|k| k as f64 * delta).collect();
            let snaps = semi_implicit_solve(&op, &mesh, &problem, delta, &times).unwrap();
            let dense = dense_reference(&op, &mesh, &problem, delta, 10);
            for k in 0..=10 {
                let want = &dense[k];
                let got = DVector::from_column_slice(&snaps.states[k]);
                let rel = (&got - want).norm() / want.norm();
                assert!(rel < 1e-12, "step {k}: {rel}");
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_snapshots() {
        let (mesh, op) = small_operator(5, 2, 1, 2);
        let problem = ProblemSpec::new(BoundaryFlux::Zero, 0.05).unwrap();
        let snaps = semi_implicit_solve(&op, &mesh, &problem, 0.01, &[0.0, 0.02, 0.05]).unwrap();
        assert!(snaps.states.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn off_grid_times_rejected() {
        let (mesh, op) = small_operator(3, 2, 1, 1);
        let problem = ProblemSpec::new(BoundaryFlux::Zero, 0.1).unwrap();
        assert!(matches!(
            semi_implicit_solve(&op, &mesh, &problem, 0.01, &[0.015]),
            Err(Error::OffGridTime(_))
        ));
        assert!(semi_implicit_solve(&op, &mesh, &problem, 0.01, &[0.2]).is_err());
    }

    #[test]
    fn balanced_fluxes_conserve_mean() {
        let (mesh, op) = small_operator(9, 3, 1, 2);
        let problem = ProblemSpec::balanced_fluxes(2, 20.0, 0.5).unwrap();
        let ones = vec![1.0; mesh.num_nodes()];
        let mut bones = vec![0.0; mesh.num_nodes()];
        op.mass().mul_vec(&ones, &mut bones);
        let times: Vec<f64> = (0..=50).map(|k| k as f64 * 0.01).collect();
        let snaps = semi_implicit_solve(&op, &mesh, &problem, 0.01, &times).unwrap();
        let mut peak = 0.0f64;
        for k in 0..times.len() {
            let mean: f64 = snaps.column(k, 0).iter().zip(&bones).map(|(a, b)| a * b).sum();
            assert!(mean.abs() <= 1e-8, "t={} mean={mean}", times[k]);
            peak = peak.max(snaps.column(k, 0).iter().fold(0.0, |a: f64, &v| a.max(v.abs())));
        }
        assert!(peak > 0.1);
    }

    #[test]
    fn rhs_mean_of_linear_and_quadratic_flux() {
        let mesh = build_mesh(2, 5).unwrap();
        let lin = ProblemSpec::balanced_fluxes(2, 20.0, 1.0).unwrap();
        let r = rhs_mean(&mesh, &lin, 0, 1e-3);
        let want = assemble_boundary_load(&mesh, &lin.flux, 0.5e-3);
        assert!(r.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-15));

        let quad = ProblemSpec::new(BoundaryFlux::General(Box::new(|_, f, t| if f.index() == 0 { t * t } else { 0.0 })), 1.0).unwrap();
        let delta = 0.1;
        let r = rhs_mean(&mesh, &quad, 0, delta);
        let want = crate::fem::boundary_load_with(&mesh, |_, f| if f.index() == 0 { delta * delta / 3.0 } else { 0.0 });
        assert!(r.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn dissipative_without_forcing() {
        let (mesh, op) = small_operator(7, 3, 1, 2);
        let problem = ProblemSpec::new(BoundaryFlux::Zero, 0.5).unwrap().with_initial(|x| (std::f64::consts::PI * x[0]).cos() * (2.0 * x[1]).sin());
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.05).collect();
        let snaps = semi_implicit_solve(&op, &mesh, &problem, 0.05, &times).unwrap();
        let m = op.num_nodes();
        let mut prev = f64::INFINITY;
        for s in &snaps.states {
            let mut e = 0.0;
            let mut bx = vec![0.0; m];
            for j in 0..op.num_basis() {
                op.mass().mul_vec(&s[j * m..(j + 1) * m], &mut bx);
                e += bx.iter().zip(&s[j * m..(j + 1) * m]).map(|(a, b)| a * b).sum::<f64>();
            }
            assert!(e <= prev * (1.0 + 1e-12));
            prev = e;
        }
    }

    #[test]
    fn fixed_schemes_agree_with_parametric_constant_case() {
        // with only the constant polynomial, the parametric scheme reduces to the fixed one at a ≡ μ
        let (mesh, op) = small_operator(6, 2, 1, 0);
        let problem = ProblemSpec::balanced_fluxes(2, 20.0, 0.1).unwrap();
        let times = [0.05, 0.1];
        let snaps = semi_implicit_solve(&op, &mesh, &problem, 0.01, &times).unwrap();
        let a = op.laplace().scaled(op.mu());
        let fixed = fixed_coefficient_solve(&mesh, op.mass(), &a, &problem, 0.01, &times, TimeScheme::ImplicitEuler).unwrap();
        for k in 0..2 {
            for (x, y) in snaps.states[k].iter().zip(&fixed[k]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn combine_parts_reproduces_direct_assembly() {
        let mesh = build_mesh(2, 7).unwrap();
        let basis = build_partition(2, 3, 1).unwrap();
        let parts = assemble_spline_stiffness(&mesh, &basis).unwrap();
        let theta: Vec<f64> = (0..9).map(|p| 0.6 + 0.15 * p as f64).collect();
        let combined = combine_parts(&parts, &theta).unwrap();
        let direct = assemble_stiffness(&mesh, |x| basis.evaluate_diffusivity(&theta, x), 2);
        let diff = combined.linear_combination(1.0, &direct, -1.0).unwrap();
        assert!(diff.frobenius_norm() < 1e-12 * direct.frobenius_norm());
    }

    #[test]
    fn non_positive_diffusivity_rejected() {
        let mesh = build_mesh(2, 4).unwrap();
        let problem = ProblemSpec::new(BoundaryFlux::Zero, 0.1).unwrap();
        assert!(matches!(
            crank_nicolson_solve(&mesh, |x| x[0] - 0.5, &problem, 0.01, &[0.1]),
            Err(Error::NonPositiveDiffusivity { .. })
        ));
    }
}
