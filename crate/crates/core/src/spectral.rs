//! Orthonormal Legendre polynomials on a parameter interval, total-degree
//! multi-index sets and the parameter-side Galerkin matrices.
//!
//! The weight on `E` is the uniform probability density `1/|E|`, so the
//! degree-zero polynomial is identically one and a multivariate basis
//! function is just the product of its non-constant factors.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Parameter interval `E = (lo, hi)` with `0 < lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterInterval {
    lo: f64,
    hi: f64,
}

impl ParameterInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0) || !(hi > lo) || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "parameter interval needs 0 < lo < hi, got ({lo}, {hi})"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Interval without the positivity requirement, for polynomial checks on
    /// symmetric intervals such as `(-1, 1)`.
    pub fn unchecked(lo: f64, hi: f64) -> Self {
        assert!(hi > lo);
        Self { lo, hi }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Off-diagonal coefficient `b_r` of the three-term recurrence.
    pub fn recurrence(&self, r: usize) -> f64 {
        if r == 0 {
            return 0.0;
        }
        let r = r as f64;
        self.half_width() * r / (4.0 * r * r - 1.0).sqrt()
    }
}

/// Value and derivative of the orthonormal polynomial of degree `r` at `x`.
pub fn legendre_eval(interval: &ParameterInterval, r: usize, x: f64) -> (f64, f64) {
    let table = legendre_table(interval, r, x);
    table[r]
}

/// `(φ̄_k(x), φ̄'_k(x))` for `k = 0..=n`.
pub fn legendre_table(interval: &ParameterInterval, n: usize, x: f64) -> Vec<(f64, f64)> {
    let c = interval.midpoint();
    let mut out = Vec::with_capacity(n + 1);
    out.push((1.0, 0.0));
    if n == 0 {
        return out;
    }
    let (mut v_prev, mut d_prev) = (0.0, 0.0);
    let (mut v, mut d) = (1.0, 0.0);
    for k in 0..n {
        // x φ_k = b_{k+1} φ_{k+1} + c φ_k + b_k φ_{k-1}
        let bk = interval.recurrence(k);
        let bk1 = interval.recurrence(k + 1);
        let v_next = ((x - c) * v - bk * v_prev) / bk1;
        let d_next = (v + (x - c) * d - bk * d_prev) / bk1;
        v_prev = v;
        d_prev = d;
        v = v_next;
        d = d_next;
        out.push((v, d));
    }
    out
}

/// Table of multi-indices, stored row-compressed (only nonzero degrees).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeMatrix {
    nvars: usize,
    total_degree: usize,
    offsets: Vec<usize>,
    vars: Vec<u32>,
    degs: Vec<u32>,
}

impl DegreeMatrix {
    /// Builds from sparse rows of `(variable, degree)` pairs, sorted by variable.
    pub fn from_sparse_rows(nvars: usize, rows: &[Vec<(usize, u32)>]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut vars = Vec::new();
        let mut degs = Vec::new();
        let mut total_degree = 0;
        offsets.push(0);
        for row in rows {
            let mut sum = 0usize;
            let mut last = None;
            for &(v, d) in row {
                if v >= nvars || d == 0 || last.is_some_and(|l| l >= v) {
                    return Err(Error::InvalidArgument(format!("malformed multi-index row {row:?}")));
                }
                last = Some(v);
                vars.push(v as u32);
                degs.push(d);
                sum += d as usize;
            }
            total_degree = total_degree.max(sum);
            offsets.push(vars.len());
        }
        Ok(Self {
            nvars,
            total_degree,
            offsets,
            vars,
            degs,
        })
    }

    pub fn from_parts(nvars: usize, offsets: Vec<usize>, vars: Vec<u32>, degs: Vec<u32>) -> Result<Self> {
        if offsets.first() != Some(&0)
            || offsets.windows(2).any(|w| w[0] > w[1])
            || offsets.last() != Some(&vars.len())
            || vars.len() != degs.len()
        {
            return Err(Error::Format("inconsistent multi-index offsets".into()));
        }
        let rows: Vec<Vec<(usize, u32)>> = offsets
            .windows(2)
            .map(|w| (w[0]..w[1]).map(|k| (vars[k] as usize, degs[k])).collect())
            .collect();
        Self::from_sparse_rows(nvars, &rows)
    }

    /// Number of rows `N`.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of variables `P`.
    pub fn nvars(&self) -> usize {
        self.nvars
    }

    /// Largest row sum.
    pub fn total_degree(&self) -> usize {
        self.total_degree
    }

    /// Number of nonzero entries.
    pub fn nnz(&self) -> usize {
        self.vars.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn raw_vars(&self) -> &[u32] {
        &self.vars
    }

    pub fn raw_degs(&self) -> &[u32] {
        &self.degs
    }

    /// Variables and degrees of the nonzero entries of row `j`.
    pub fn row(&self, j: usize) -> (&[u32], &[u32]) {
        let r = self.offsets[j]..self.offsets[j + 1];
        (&self.vars[r.clone()], &self.degs[r])
    }

    pub fn row_sum(&self, j: usize) -> usize {
        self.row(j).1.iter().map(|&d| d as usize).sum()
    }

    pub fn dense_row(&self, j: usize) -> Vec<u32> {
        let mut out = vec![0; self.nvars];
        let (v, d) = self.row(j);
        for (&v, &d) in v.iter().zip(d) {
            out[v as usize] = d;
        }
        out
    }

    /// Degree of variable `p` in row `j`.
    pub fn degree(&self, j: usize, p: usize) -> u32 {
        let (v, d) = self.row(j);
        v.iter().position(|&x| x as usize == p).map_or(0, |k| d[k])
    }

    /// Keeps the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut offsets = vec![0];
        let mut vars = Vec::new();
        let mut degs = Vec::new();
        for &j in rows {
            let (v, d) = self.row(j);
            vars.extend_from_slice(v);
            degs.extend_from_slice(d);
            offsets.push(vars.len());
        }
        let total_degree = rows.iter().map(|&j| self.row_sum(j)).max().unwrap_or(0);
        Self {
            nvars: self.nvars,
            total_degree,
            offsets,
            vars,
            degs,
        }
    }

    fn key(&self, j: usize) -> Vec<u32> {
        let (v, d) = self.row(j);
        v.iter().zip(d).flat_map(|(&a, &b)| [a, b]).collect()
    }

    fn lookup(&self) -> HashMap<Vec<u32>, usize> {
        (0..self.len()).map(|j| (self.key(j), j)).collect()
    }
}

/// `C(a, b)` with overflow detection.
pub fn binomial(a: usize, b: usize) -> Option<usize> {
    if b > a {
        return Some(0);
    }
    let b = b.min(a - b);
    let mut acc: u128 = 1;
    for i in 0..b {
        acc = acc.checked_mul((a - i) as u128)? / (i as u128 + 1);
    }
    usize::try_from(acc).ok()
}

/// All multi-indices of `P` variables with degree sum at most `n`, ordered by
/// total degree and then descending lexicographically.
pub fn total_degree_indices(nvars: usize, n: usize) -> Result<DegreeMatrix> {
    if nvars == 0 {
        return Err(Error::InvalidArgument("need at least one parameter".into()));
    }
    let count = nvars
        .checked_add(n)
        .and_then(|s| binomial(s, n))
        .ok_or(Error::IndexOverflow { vars: nvars, degree: n })?;
    let mut offsets = Vec::with_capacity(count + 1);
    offsets.push(0);
    let mut vars = Vec::new();
    let mut degs = Vec::new();
    let mut cur: Vec<(u32, u32)> = Vec::with_capacity(n);

    fn gen(
        start: usize,
        rem: u32,
        nvars: usize,
        cur: &mut Vec<(u32, u32)>,
        offsets: &mut Vec<usize>,
        vars: &mut Vec<u32>,
        degs: &mut Vec<u32>,
    ) {
        if rem == 0 {
            for &(v, d) in cur.iter() {
                vars.push(v);
                degs.push(d);
            }
            offsets.push(vars.len());
            return;
        }
        for q in start..nvars {
            for e in (1..=rem).rev() {
                cur.push((q as u32, e));
                gen(q + 1, rem - e, nvars, cur, offsets, vars, degs);
                cur.pop();
            }
        }
    }

    for d in 0..=n as u32 {
        gen(0, d, nvars, &mut cur, &mut offsets, &mut vars, &mut degs);
    }
    debug_assert_eq!(offsets.len(), count + 1);
    Ok(DegreeMatrix {
        nvars,
        total_degree: n,
        offsets,
        vars,
        degs,
    })
}

/// Closed form `nnz(Λ) = P·C(P+n-1, n-1)` for the full total-degree set.
pub fn nnz_lambda(nvars: usize, n: usize) -> Option<usize> {
    if n == 0 {
        return Some(0);
    }
    binomial(nvars + n - 1, n - 1)?.checked_mul(nvars)
}

/// Closed form `N = C(P+n, n)`.
pub fn total_degree_count(nvars: usize, n: usize) -> Option<usize> {
    binomial(nvars.checked_add(n)?, n)
}

/// Parameter-side matrix `Y^(p)_{jl} = (ι_p φ_j, φ_l)`.
///
/// The diagonal is the constant interval midpoint; the off-diagonal part is
/// stored once per unordered pair `(j, l)` with `j < l`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleProductMatrix {
    pub p: usize,
    pub size: usize,
    pub diagonal: f64,
    pub offdiag: Vec<(usize, usize, f64)>,
}

impl TripleProductMatrix {
    /// `nnz(offdiag(Y^(p)))`, counting both triangles.
    pub fn offdiag_nnz(&self) -> usize {
        2 * self.offdiag.len()
    }

    pub fn get(&self, j: usize, l: usize) -> f64 {
        if j == l {
            return self.diagonal;
        }
        let (a, b) = if j < l { (j, l) } else { (l, j) };
        self.offdiag
            .iter()
            .find(|&&(x, y, _)| x == a && y == b)
            .map_or(0.0, |e| e.2)
    }

    /// Off-diagonal part as a symmetric CSR matrix.
    pub fn offdiag_csr(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.size, self.size, 2 * self.offdiag.len());
        for &(j, l, v) in &self.offdiag {
            b.push(j, l, v);
            b.push(l, j, v);
        }
        b.build(true)
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.size, self.size, self.size + 2 * self.offdiag.len());
        for j in 0..self.size {
            b.push(j, j, self.diagonal);
        }
        for &(j, l, v) in &self.offdiag {
            b.push(j, l, v);
            b.push(l, j, v);
        }
        b.build(true)
    }
}

/// `Y^(p)` for a single (zero-based) parameter index.
pub fn assemble_y(p: usize, lambda: &DegreeMatrix, interval: &ParameterInterval) -> Result<TripleProductMatrix> {
    if p >= lambda.nvars() {
        return Err(Error::InvalidArgument(format!(
            "parameter index {p} out of range for P = {}",
            lambda.nvars()
        )));
    }
    let lookup = lambda.lookup();
    Ok(y_from_lookup(p, lambda, interval, &lookup))
}

/// `Y^(p)` for every parameter.
pub fn assemble_all_y(lambda: &DegreeMatrix, interval: &ParameterInterval) -> Vec<TripleProductMatrix> {
    let lookup = lambda.lookup();
    let n = lambda.len();
    let mut out: Vec<TripleProductMatrix> = (0..lambda.nvars())
        .map(|p| TripleProductMatrix {
            p,
            size: n,
            diagonal: interval.midpoint(),
            offdiag: Vec::new(),
        })
        .collect();
    for j in 0..n {
        let key = lambda.key(j);
        for (p, y) in out.iter_mut().enumerate() {
            if let Some((l, r)) = raised_neighbor(&key, p, &lookup) {
                y.offdiag.push((j, l, interval.recurrence(r as usize + 1)));
            }
        }
    }
    for y in &mut out {
        y.offdiag.sort_by_key(|&(j, l, _)| (j.min(l), j.max(l)));
        for e in &mut y.offdiag {
            if e.0 > e.1 {
                std::mem::swap(&mut e.0, &mut e.1);
            }
        }
    }
    out
}

fn y_from_lookup(
    p: usize,
    lambda: &DegreeMatrix,
    interval: &ParameterInterval,
    lookup: &HashMap<Vec<u32>, usize>,
) -> TripleProductMatrix {
    let mut offdiag = Vec::new();
    for j in 0..lambda.len() {
        let key = lambda.key(j);
        if let Some((l, r)) = raised_neighbor(&key, p, lookup) {
            let (a, b) = if j < l { (j, l) } else { (l, j) };
            offdiag.push((a, b, interval.recurrence(r as usize + 1)));
        }
    }
    offdiag.sort_by_key(|&(a, b, _)| (a, b));
    TripleProductMatrix {
        p,
        size: lambda.len(),
        diagonal: interval.midpoint(),
        offdiag,
    }
}

/// Row reached by raising the degree of variable `p` by one, and the original degree.
fn raised_neighbor(key: &[u32], p: usize, lookup: &HashMap<Vec<u32>, usize>) -> Option<(usize, u32)> {
    let p32 = p as u32;
    let mut raised = Vec::with_capacity(key.len() + 2);
    let mut r = 0;
    let mut placed = false;
    for pair in key.chunks_exact(2) {
        if !placed && pair[0] >= p32 {
            if pair[0] == p32 {
                r = pair[1];
                raised.extend([p32, pair[1] + 1]);
                placed = true;
                continue;
            }
            raised.extend([p32, 1]);
            placed = true;
        }
        raised.extend_from_slice(pair);
    }
    if !placed {
        raised.extend([p32, 1]);
    }
    lookup.get(&raised).map(|&l| (l, r))
}

fn univariate_table(lambda: &DegreeMatrix, interval: &ParameterInterval, theta: &[f64]) -> Vec<(f64, f64)> {
    let n = lambda.total_degree();
    let mut table = Vec::with_capacity(theta.len() * (n + 1));
    for &t in theta {
        table.extend(legendre_table(interval, n, t));
    }
    table
}

/// `φ(θ)`: all multivariate basis functions at `θ`.
pub fn eval_phi(lambda: &DegreeMatrix, interval: &ParameterInterval, theta: &[f64]) -> Result<Vec<f64>> {
    check_theta(lambda, theta)?;
    let stride = lambda.total_degree() + 1;
    let table = univariate_table(lambda, interval, theta);
    Ok((0..lambda.len())
        .map(|j| {
            let (v, d) = lambda.row(j);
            v.iter()
                .zip(d)
                .map(|(&p, &r)| table[p as usize * stride + r as usize].0)
                .product()
        })
        .collect())
}

fn check_theta(lambda: &DegreeMatrix, theta: &[f64]) -> Result<()> {
    if theta.len() != lambda.nvars() {
        return Err(Error::DimensionMismatch {
            what: "parameter vector",
            expected: lambda.nvars(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// Sparse `N x P` Jacobian of `φ`, with the sparsity pattern of `Λ`.
#[derive(Debug, Clone)]
pub struct BasisJacobian<'a> {
    lambda: &'a DegreeMatrix,
    values: Vec<f64>,
}

impl<'a> BasisJacobian<'a> {
    /// Values aligned with the nonzero entries of `Λ`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn degree_matrix(&self) -> &DegreeMatrix {
        self.lambda
    }

    /// Number of numerically nonzero entries.
    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// Entries `(p, ∂φ_j/∂θ_p)` of row `j`.
    pub fn row(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let o = self.lambda.offsets();
        let (v, _) = self.lambda.row(j);
        v.iter().zip(&self.values[o[j]..o[j + 1]]).map(|(&p, &x)| (p as usize, x))
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.lambda.len(), self.lambda.nvars(), self.values.len());
        for j in 0..self.lambda.len() {
            for (p, v) in self.row(j) {
                b.push(j, p, v);
            }
        }
        b.build(false)
    }
}

/// `J_φ(θ)` with entries `φ̄'_{Λjp}(θ_p) ∏_{q≠p} φ̄_{Λjq}(θ_q)`.
pub fn eval_basis_jacobian<'a>(
    lambda: &'a DegreeMatrix,
    interval: &ParameterInterval,
    theta: &[f64],
) -> Result<BasisJacobian<'a>> {
    check_theta(lambda, theta)?;
    let stride = lambda.total_degree() + 1;
    let table = univariate_table(lambda, interval, theta);
    let mut values = vec![0.0; lambda.nnz()];
    let offsets = lambda.offsets();
    let mut vals = Vec::new();
    for j in 0..lambda.len() {
        let (v, d) = lambda.row(j);
        vals.clear();
        vals.extend(v.iter().zip(d).map(|(&p, &r)| table[p as usize * stride + r as usize]));
        for k in 0..vals.len() {
            let mut prod = vals[k].1;
            for (i, val) in vals.iter().enumerate() {
                if i != k {
                    prod *= val.0;
                }
            }
            values[offsets[j] + k] = prod;
        }
    }
    Ok(BasisJacobian { lambda, values })
}
