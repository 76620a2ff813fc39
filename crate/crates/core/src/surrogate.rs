//! Boundary-trace surrogate `U(θ) = V φ(θ)` and its Jacobian.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fem::ProblemSpec;
use crate::mesh::Mesh;
use crate::spectral::{eval_basis_jacobian, eval_phi, DegreeMatrix, ParameterInterval};
use crate::stepper::{semi_implicit_run, ParametricOperator, SolutionSnapshots};

/// Measurement coordinates: spatial points crossed with times, rows time-major
/// (`q = time_index * Q_s + space_index`).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLayout {
    pub points: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

impl MeasurementLayout {
    pub fn new(points: Vec<Vec<f64>>, times: Vec<f64>) -> Result<Self> {
        if points.is_empty() || times.is_empty() {
            return Err(Error::InvalidArgument("measurement layout needs points and times".into()));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::InvalidArgument("measurement points of mixed dimension".into()));
        }
        Ok(Self { points, times })
    }

    /// Equally spaced perimeter points and the standard time grid (2D), or
    /// the boundary nodes of a 6x6x6 lattice (3D).
    pub fn standard(dim: usize) -> Result<Self> {
        let points = match dim {
            2 => perimeter_points(36)?,
            3 => lattice_boundary_points(6)?,
            d => return Err(Error::UnsupportedDimension(d)),
        };
        Self::new(points, standard_times())
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    /// `Q = Q_s · Q_t`.
    pub fn len(&self) -> usize {
        self.points.len() * self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point and time of row `q`.
    pub fn coordinate(&self, q: usize) -> (&[f64], f64) {
        let qs = self.points.len();
        (&self.points[q % qs], self.times[q / qs])
    }

    /// Largest coordinate difference to another layout.
    pub fn distance(&self, other: &Self) -> f64 {
        if self.points.len() != other.points.len() || self.times.len() != other.times.len() || self.dim() != other.dim() {
            return f64::INFINITY;
        }
        let dp = self
            .points
            .iter()
            .zip(&other.points)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        let dt = self.times.iter().zip(&other.times).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        dp.max(dt)
    }
}

/// `{0.01, 0.05, …, 0.49}`.
pub fn standard_times() -> Vec<f64> {
    (0..13).map(|k| (1 + 4 * k) as f64 / 100.0).collect()
}

/// `count` points at equal arc length around the unit square, starting at the
/// origin and running counterclockwise. A multiple of 4 puts a point on every corner.
pub fn perimeter_points(count: usize) -> Result<Vec<Vec<f64>>> {
    if count < 4 || !count.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!("perimeter point count must be a positive multiple of 4, got {count}")));
    }
    let per_side = count / 4;
    let mut out = Vec::with_capacity(count);
    for side in 0..4 {
        for k in 0..per_side {
            let s = k as f64 / per_side as f64;
            out.push(match side {
                0 => vec![s, 0.0],
                1 => vec![1.0, s],
                2 => vec![1.0 - s, 1.0],
                _ => vec![0.0, 1.0 - s],
            });
        }
    }
    Ok(out)
}

/// Boundary nodes of a `k x k x k` lattice on the unit cube, axis 1 fastest.
pub fn lattice_boundary_points(k: usize) -> Result<Vec<Vec<f64>>> {
    if k < 2 {
        return Err(Error::InvalidArgument("lattice needs at least 2 points per axis".into()));
    }
    let h = 1.0 / (k - 1) as f64;
    let mut out = Vec::new();
    for i3 in 0..k {
        for i2 in 0..k {
            for i1 in 0..k {
                let on_boundary = [i1, i2, i3].iter().any(|&i| i == 0 || i == k - 1);
                if on_boundary {
                    out.push(vec![i1 as f64 * h, i2 as f64 * h, i3 as f64 * h]);
                }
            }
        }
    }
    Ok(out)
}

/// Spline parametrization and discretization a surrogate was built with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateMetadata {
    pub dim: usize,
    pub per_axis: usize,
    pub degree: usize,
    pub nodes_per_side: usize,
    pub delta: f64,
    pub final_time: f64,
}

/// Precomputed linear point evaluation of nodal vectors at the layout points.
#[derive(Debug, Clone)]
pub struct TraceOperator {
    weights: Vec<Vec<(usize, f64)>>,
}

impl TraceOperator {
    pub fn new(mesh: &Mesh, points: &[Vec<f64>]) -> Result<Self> {
        let weights = points.iter().map(|p| mesh.interpolation_weights(p)).collect::<Result<_>>()?;
        Ok(Self { weights })
    }

    pub fn apply(&self, nodal: &[f64]) -> Vec<f64> {
        self.weights.iter().map(|w| w.iter().map(|&(i, v)| v * nodal[i]).sum()).collect()
    }

    /// Time-major trace of nodal snapshots given per layout time.
    pub fn stack(&self, snapshots: &[Vec<f64>]) -> Vec<f64> {
        snapshots.iter().flat_map(|s| self.apply(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricSurrogate {
    /// `Q x N`, row-major.
    v: Vec<f64>,
    lambda: DegreeMatrix,
    interval: ParameterInterval,
    layout: MeasurementLayout,
    meta: SurrogateMetadata,
}

impl ParametricSurrogate {
    pub fn from_parts(
        v: Vec<f64>,
        lambda: DegreeMatrix,
        interval: ParameterInterval,
        layout: MeasurementLayout,
        meta: SurrogateMetadata,
    ) -> Result<Self> {
        let expected = layout.len() * lambda.len();
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "surrogate matrix entries",
                expected,
                got: v.len(),
            });
        }
        Ok(Self {
            v,
            lambda,
            interval,
            layout,
            meta,
        })
    }

    /// Runs the parametric forward solve and fills `V` on the fly.
    pub fn build(
        op: &ParametricOperator,
        mesh: &Mesh,
        problem: &ProblemSpec,
        delta: f64,
        layout: MeasurementLayout,
        lambda: DegreeMatrix,
        interval: ParameterInterval,
        meta: SurrogateMetadata,
    ) -> Result<Self> {
        let trace = TraceOperator::new(mesh, &layout.points)?;
        let n = lambda.len();
        let m = mesh.num_nodes();
        if op.num_basis() != n {
            return Err(Error::DimensionMismatch {
                what: "polynomial basis size",
                expected: op.num_basis(),
                got: n,
            });
        }
        let qs = layout.num_points();
        let mut v = vec![0.0; layout.len() * n];
        semi_implicit_run(op, mesh, problem, delta, &layout.times, |tk, _, state| {
            fill_rows(&mut v[tk * qs * n..(tk + 1) * qs * n], &trace, state, m, n);
            Ok(())
        })?;
        Self::from_parts(v, lambda, interval, layout, meta)
    }

    /// `V` from stored snapshots.
    pub fn extract(
        snapshots: &SolutionSnapshots,
        mesh: &Mesh,
        layout: MeasurementLayout,
        lambda: DegreeMatrix,
        interval: ParameterInterval,
        meta: SurrogateMetadata,
    ) -> Result<Self> {
        let trace = TraceOperator::new(mesh, &layout.points)?;
        let n = lambda.len();
        let m = mesh.num_nodes();
        if snapshots.num_basis != n || snapshots.num_nodes != m {
            return Err(Error::DimensionMismatch {
                what: "snapshot table",
                expected: m * n,
                got: snapshots.num_nodes * snapshots.num_basis,
            });
        }
        let qs = layout.num_points();
        let mut v = vec![0.0; layout.len() * n];
        for (tk, &t) in layout.times.iter().enumerate() {
            let state = snapshots.state(t)?;
            fill_rows(&mut v[tk * qs * n..(tk + 1) * qs * n], &trace, state, m, n);
        }
        Self::from_parts(v, lambda, interval, layout, meta)
    }

    /// Number of measurements `Q`.
    pub fn num_rows(&self) -> usize {
        self.layout.len()
    }

    /// Number of polynomial basis functions `N`.
    pub fn num_basis(&self) -> usize {
        self.lambda.len()
    }

    /// Number of parameters `P`.
    pub fn num_params(&self) -> usize {
        self.lambda.nvars()
    }

    pub fn matrix(&self) -> &[f64] {
        &self.v
    }

    pub fn degree_matrix(&self) -> &DegreeMatrix {
        &self.lambda
    }

    pub fn interval(&self) -> &ParameterInterval {
        &self.interval
    }

    pub fn layout(&self) -> &MeasurementLayout {
        &self.layout
    }

    pub fn metadata(&self) -> &SurrogateMetadata {
        &self.meta
    }

    /// Whether `θ` leaves the parameter box (the polynomials still evaluate there).
    pub fn extrapolates(&self, theta: &[f64]) -> bool {
        theta.iter().any(|&t| !self.interval.contains(t))
    }

    /// `U(θ) = V φ(θ)`.
    pub fn eval_u(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let phi = eval_phi(&self.lambda, &self.interval, theta)?;
        let n = phi.len();
        Ok(self
            .v
            .chunks_exact(n)
            .map(|row| row.iter().zip(&phi).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `J_U(θ) = V J_φ(θ)` as a dense `Q x P` matrix.
    pub fn eval_ju(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let jac = eval_basis_jacobian(&self.lambda, &self.interval, theta)?;
        let n = self.lambda.len();
        let p = self.lambda.nvars();
        let q = self.num_rows();
        let offsets = self.lambda.offsets();
        let vars = self.lambda.raw_vars();
        let vals = jac.values();
        let mut out = DMatrix::zeros(q, p);
        let mut acc = vec![0.0; p];
        for (qi, row) in self.v.chunks_exact(n).enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (j, &vqj) in row.iter().enumerate() {
                for k in offsets[j]..offsets[j + 1] {
                    acc[vars[k] as usize] += vqj * vals[k];
                }
            }
            for (c, &a) in acc.iter().enumerate() {
                out[(qi, c)] = a;
            }
        }
        Ok(out)
    }

    /// Euclidean norm of every column of `V`.
    pub fn column_norms(&self) -> Vec<f64> {
        let n = self.num_basis();
        let mut out = vec![0.0; n];
        for row in self.v.chunks_exact(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x * x;
            }
        }
        out.into_iter().map(f64::sqrt).collect()
    }

    /// Keeps the `keep` columns of largest norm (and always the constant one).
    pub fn truncate(&self, keep: usize) -> Result<Self> {
        let n = self.num_basis();
        if keep == 0 || keep > n {
            return Err(Error::InvalidArgument(format!("keep must be in 1..={n}, got {keep}")));
        }
        let norms = self.column_norms();
        let mut order: Vec<usize> = (1..n).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        let mut kept: Vec<usize> = std::iter::once(0).chain(order.into_iter().take(keep - 1)).collect();
        kept.sort_unstable();
        let v = self
            .v
            .chunks_exact(n)
            .flat_map(|row| kept.iter().map(move |&j| row[j]))
            .collect();
        Self::from_parts(v, self.lambda.select_rows(&kept), self.interval, self.layout.clone(), self.meta)
    }
}

fn fill_rows(rows: &mut [f64], trace: &TraceOperator, state: &[f64], m: usize, n: usize) {
    for (s, w) in trace.weights.iter().enumerate() {
        let row = &mut rows[s * n..(s + 1) * n];
        for (j, r) in row.iter_mut().enumerate() {
            let col = &state[j * m..(j + 1) * m];
            *r = w.iter().map(|&(i, v)| v * col[i]).sum();
        }
    }
}

/// Observed data with its noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub layout: MeasurementLayout,
    pub values: Vec<f64>,
    pub sigma: f64,
    pub sigma0: f64,
    pub seed: u64,
}

/// Adds i.i.d. Gaussian noise of standard deviation `σ = σ0 · max_j Ũ_j`.
pub fn add_noise(values: &[f64], sigma0: f64, seed: u64) -> Result<(Vec<f64>, f64)> {
    if !(sigma0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("relative noise level must be nonnegative, got {sigma0}")));
    }
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let sigma = sigma0 * peak;
    if sigma == 0.0 {
        return Ok((values.to_vec(), 0.0));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok((values.iter().map(|v| v + normal.sample(&mut rng)).collect(), sigma))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::spectral::total_degree_indices;

    fn meta() -> SurrogateMetadata {
        SurrogateMetadata {
            dim: 2,
            per_axis: 2,
            degree: 1,
            nodes_per_side: 3,
            delta: 0.01,
            final_time: 0.5,
        }
    }

    fn random_surrogate(p: usize, n: usize, seed: u64) -> ParametricSurrogate {
        let lambda = total_degree_indices(p, n).unwrap();
        let layout = MeasurementLayout::new(perimeter_points(8).unwrap(), vec![0.1, 0.2]).unwrap();
        let cols = lambda.len();
        let mut state = seed;
        let v = (0..layout.len() * cols)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        ParametricSurrogate::from_parts(v, lambda, ParameterInterval::new(0.5, 2.0).unwrap(), layout, meta()).unwrap()
    }

    #[test]
    fn standard_layout_sizes() {
        assert_eq!(MeasurementLayout::standard(2).unwrap().len(), 468);
        assert_eq!(MeasurementLayout::standard(3).unwrap().len(), 1976);
        let pts = perimeter_points(36).unwrap();
        for corner in [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]] {
            assert!(pts.iter().any(|p| p[0] == corner[0] && p[1] == corner[1]));
        }
        assert!(perimeter_points(10).is_err());
        let t = standard_times();
        assert_eq!(t.len(), 13);
        assert_eq!(t[0], 0.01);
        assert_eq!(t[12], 0.49);
    }

    #[test]
    fn zero_matrix_gives_zero_trace() {
        let mut s = random_surrogate(3, 2, 1);
        s.v.iter_mut().for_each(|x| *x = 0.0);
        assert!(s.eval_u(&[1.0, 1.5, 0.7]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn eval_u_matches_explicit_product() {
        let s = random_surrogate(4, 2, 7);
        let theta = [0.6, 1.1, 1.9, 1.25];
        let phi = eval_phi(s.degree_matrix(), s.interval(), &theta).unwrap();
        let u = s.eval_u(&theta).unwrap();
        let n = s.num_basis();
        for q in 0..s.num_rows() {
            let want: f64 = (0..n).map(|j| s.v[q * n + j] * phi[j]).sum();
            assert!((u[q] - want).abs() < 1e-14);
        }
        assert!(s.eval_u(&[1.0; 3]).is_err());
    }

    #[test]
    fn jacobian_locality() {
        let lambda = total_degree_indices(3, 2).unwrap();
        let layout = MeasurementLayout::new(perimeter_points(4).unwrap(), vec![0.1]).unwrap();
        let n = lambda.len();
        let mut v = vec![0.0; layout.len() * n];
        // column 2 is the degree-one polynomial in the second parameter
        v[2] = 1.0;
        let s = ParametricSurrogate::from_parts(v, lambda, ParameterInterval::new(0.5, 2.0).unwrap(), layout, meta()).unwrap();
        let j = s.eval_ju(&[0.9, 1.4, 1.7]).unwrap();
        for (r, c) in (0..j.nrows()).flat_map(|r| (0..3).map(move |c| (r, c))) {
            if r == 0 && c == 1 {
                assert!(j[(r, c)] != 0.0);
            } else {
                assert_eq!(j[(r, c)], 0.0);
            }
        }
    }

    #[test]
    fn linear_surrogate_has_constant_jacobian() {
        let s = random_surrogate(5, 1, 3);
        let a = s.eval_ju(&[0.7, 1.0, 1.3, 1.6, 1.9]).unwrap();
        let b = s.eval_ju(&[1.9, 0.6, 1.1, 0.8, 1.2]).unwrap();
        assert_eq!(a, b);
        let x = [0.7, 1.0, 1.3, 1.6, 1.9];
        let y = [1.9, 0.6, 1.1, 0.8, 1.2];
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.25 * a + 0.75 * b).collect();
        let (ux, uy, um) = (s.eval_u(&x).unwrap(), s.eval_u(&y).unwrap(), s.eval_u(&mid).unwrap());
        for q in 0..ux.len() {
            assert!((um[q] - (0.25 * ux[q] + 0.75 * uy[q])).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_edge_cases() {
        let s = random_surrogate(3, 2, 11);
        assert_eq!(s.truncate(s.num_basis()).unwrap(), s);
        let one = s.truncate(1).unwrap();
        assert_eq!(one.num_basis(), 1);
        assert_eq!(one.eval_u(&[0.6, 0.7, 0.8]).unwrap(), one.eval_u(&[1.9, 1.0, 1.2]).unwrap());
        assert!(s.truncate(0).is_err());

        let mut z = s.clone();
        let n = z.num_basis();
        for row in z.v.chunks_exact_mut(n) {
            row[4] = 0.0;
        }
        let dropped = z.truncate(n - 1).unwrap();
        assert_eq!(dropped.num_basis(), n - 1);
        let th = [0.8, 1.3, 1.8];
        let (a, b) = (z.eval_u(&th).unwrap(), dropped.eval_u(&th).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn noise_is_deterministic_and_calibrated() {
        let clean: Vec<f64> = (0..468).map(|k| (k as f64 * 0.01).sin() + 1.0).collect();
        let (same, sigma) = add_noise(&clean, 0.0, 5).unwrap();
        assert_eq!(same, clean);
        assert_eq!(sigma, 0.0);
        let (a, sa) = add_noise(&clean, 0.02, 42).unwrap();
        let (b, _) = add_noise(&clean, 0.02, 42).unwrap();
        assert_eq!(a, b);
        let max = clean.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(sa, 0.02 * max);
        let diffs: Vec<f64> = a.iter().zip(&clean).map(|(x, y)| x - y).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
        assert!((sd / sa - 1.0).abs() < 0.15);
        assert!(add_noise(&clean, -1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(seed in any::<u64>(), raw in prop::collection::vec(0.0f64..1.0, 6)) {
            let s = random_surrogate(6, 2, seed);
            let theta: Vec<f64> = raw.iter().map(|r| 0.55 + 1.4 * r).collect();
            let j = s.eval_ju(&theta).unwrap();
            let h = 1e-5 * s.interval().half_width();
            let scale = j.abs().max().max(1e-12);
            for p in 0..6 {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[p] += h;
                tm[p] -= h;
                let (up, um) = (s.eval_u(&tp).unwrap(), s.eval_u(&tm).unwrap());
                for q in 0..up.len() {
                    let fd = (up[q] - um[q]) / (2.0 * h);
                    prop_assert!((fd - j[(q, p)]).abs() <= 1e-6 * scale);
                }
            }
        }

        #[test]
        fn truncation_error_bound_shrinks_with_keep(seed in any::<u64>(), raw in prop::collection::vec(0.0f64..1.0, 4)) {
            let s = random_surrogate(4, 2, seed);
            let theta: Vec<f64> = raw.iter().map(|r| 0.5 + 1.5 * r).collect();
            let full = s.eval_u(&theta).unwrap();
            let phi = eval_phi(s.degree_matrix(), s.interval(), &theta).unwrap();
            let norms = s.column_norms();
            let mut prev_bound = f64::INFINITY;
            for keep in 1..=s.num_basis() {
                let t = s.truncate(keep).unwrap();
                let err = full.iter().zip(&t.eval_u(&theta).unwrap()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                // kept columns are the first `keep` of the norm ordering, so the
                // triangle-inequality bound over dropped columns is nested
                let kept: std::collections::HashSet<Vec<u32>> =
                    (0..t.num_basis()).map(|j| t.degree_matrix().dense_row(j)).collect();
                let bound: f64 = (0..s.num_basis())
                    .filter(|&j| !kept.contains(&s.degree_matrix().dense_row(j)))
                    .map(|j| norms[j] * phi[j].abs())
                    .sum();
                prop_assert!(err <= bound * (1.0 + 1e-12) + 1e-14);
                prop_assert!(bound <= prev_bound * (1.0 + 1e-12) + 1e-14);
                prev_bound = bound;
            }
            prop_assert!(prev_bound == 0.0);
        }
    }
}
