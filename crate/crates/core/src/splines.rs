//! Tensor-product B-spline partitions of unity on `[0, 1]^d`.
//!
//! Each axis carries `m` B-splines of degree `s` on a clamped uniform knot
//! vector (end knots repeated `s + 1` times), so the `P = m^d` products are
//! nonnegative, locally supported and sum to one everywhere on the closed cube.
//! Multi-index `(i1, i2, i3)` maps to the flat index `i1 + m*i2 + m^2*i3`.

use crate::error::{Error, Result};

/// Value of the standard uniform B-spline `b_s` with integer knots `0..=s+1`.
pub fn bspline_value(s: usize, x: f64) -> f64 {
    if s == 0 {
        return if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 };
    }
    if x <= 0.0 || x >= (s + 1) as f64 {
        return 0.0;
    }
    let sf = s as f64;
    (x * bspline_value(s - 1, x) + (sf + 1.0 - x) * bspline_value(s - 1, x - 1.0)) / sf
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    dim: usize,
    degree: usize,
    per_axis: usize,
    knots: Vec<f64>,
}

/// Clamped uniform tensor-product basis with `m` functions of degree `s` per axis.
pub fn build_partition(dim: usize, m: usize, s: usize) -> Result<SplineBasis> {
    if !(1..=3).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    if m < s + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least s+1 = {} splines per axis, got {m}",
            s + 1
        )));
    }
    let spans = m - s;
    let mut knots = Vec::with_capacity(m + s + 1);
    knots.extend(std::iter::repeat_n(0.0, s + 1));
    knots.extend((1..spans).map(|i| i as f64 / spans as f64));
    knots.extend(std::iter::repeat_n(1.0, s + 1));
    Ok(SplineBasis {
        dim,
        degree: s,
        per_axis: m,
        knots,
    })
}

impl SplineBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    /// Total number of functions `P = m^dim`.
    pub fn len(&self) -> usize {
        self.per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Splits a flat index into per-axis indices.
    pub fn multi_index(&self, p: usize) -> [usize; 3] {
        let m = self.per_axis;
        let mut out = [0; 3];
        let mut rem = p;
        for o in out.iter_mut().take(self.dim) {
            *o = rem % m;
            rem /= m;
        }
        out
    }

    /// Closed support interval of univariate function `i` on one axis.
    pub fn axis_support(&self, i: usize) -> (f64, f64) {
        (self.knots[i], self.knots[i + self.degree + 1])
    }

    /// Knot span `k` with `knots[k] <= x < knots[k+1]` (last nonempty span at `x = 1`).
    fn span(&self, x: f64) -> usize {
        let s = self.degree;
        let m = self.per_axis;
        if x >= self.knots[m] {
            return m - 1;
        }
        if x <= self.knots[s] {
            return s;
        }
        // knots[s..=m] is sorted and strictly increasing
        let k = self.knots[s..=m].partition_point(|&t| t <= x);
        s + k - 1
    }

    /// Cox–de Boor: index of the first nonzero univariate function at `x` and
    /// the values of the `s + 1` functions starting there.
    pub fn axis_nonzero(&self, x: f64) -> (usize, Vec<f64>) {
        let s = self.degree;
        let x = x.clamp(0.0, 1.0);
        let k = self.span(x);
        let t = &self.knots;
        let mut n = vec![0.0; s + 1];
        let mut left = vec![0.0; s + 1];
        let mut right = vec![0.0; s + 1];
        n[0] = 1.0;
        for j in 1..=s {
            left[j] = x - t[k + 1 - j];
            right[j] = t[k + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (k - s, n)
    }

    /// Value of univariate function `i` at `x` on one axis.
    pub fn axis_value(&self, i: usize, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        let (first, vals) = self.axis_nonzero(x);
        if i >= first && i <= first + self.degree {
            vals[i - first]
        } else {
            0.0
        }
    }

    /// All `(p, ψ_p(x))` for functions whose support contains `x`.
    pub fn evaluate_nonzero(&self, x: &[f64]) -> Vec<(usize, f64)> {
        assert_eq!(x.len(), self.dim);
        let m = self.per_axis;
        let per_axis: Vec<(usize, Vec<f64>)> = x.iter().map(|&xi| self.axis_nonzero(xi)).collect();
        let mut out = vec![(0usize, 1.0f64)];
        let mut stride = 1;
        for (first, vals) in &per_axis {
            let mut next = Vec::with_capacity(out.len() * vals.len());
            for &(p, v) in &out {
                for (o, &w) in vals.iter().enumerate() {
                    next.push((p + (first + o) * stride, v * w));
                }
            }
            out = next;
            stride *= m;
        }
        out
    }

    /// `ψ_p(x)`.
    pub fn value(&self, p: usize, x: &[f64]) -> f64 {
        let idx = self.multi_index(p);
        x.iter()
            .enumerate()
            .map(|(a, &xa)| self.axis_value(idx[a], xa))
            .product()
    }

    /// `a(x; θ) = Σ_p θ_p ψ_p(x)`.
    pub fn evaluate_diffusivity(&self, theta: &[f64], x: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.len());
        self.evaluate_nonzero(x).into_iter().map(|(p, v)| theta[p] * v).sum()
    }

    /// Regular sample grid with `per_axis` points per axis including the endpoints.
    pub fn sample_grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        sample_grid(self.dim, per_axis)
    }
}

/// Regular grid on `[0,1]^dim`, axis 1 fastest.
pub fn sample_grid(dim: usize, per_axis: usize) -> Vec<Vec<f64>> {
    assert!(per_axis >= 2);
    let h = 1.0 / (per_axis - 1) as f64;
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            (0..dim)
                .map(|_| {
                    let c = k % per_axis;
                    k /= per_axis;
                    c as f64 * h
                })
                .collect()
        })
        .collect()
}

/// Relative discrete L² distance between `a(·; θ)` and `target` over `grid`.
pub fn sample_field_error(
    basis: &SplineBasis,
    theta: &[f64],
    target: impl Fn(&[f64]) -> f64,
    grid: &[Vec<f64>],
) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for x in grid {
        let t = target(x);
        let d = basis.evaluate_diffusivity(theta, x) - t;
        num += d * d;
        den += t * t;
    }
    (num / den).sqrt()
}
