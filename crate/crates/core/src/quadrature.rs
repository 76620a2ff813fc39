//! Gauss–Legendre rules on intervals and collapsed-coordinate rules on simplices.

/// Gauss–Legendre nodes and weights on `[-1, 1]` with `n` points (exact to degree `2n - 1`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|&t| mid + half * t).collect(),
        w.iter().map(|&v| v * half).collect(),
    )
}

/// Quadrature rule on the reference simplex in barycentric form.
///
/// Weights sum to one, so a physical integral is `volume * sum(w_k f(x_k))`.
#[derive(Debug, Clone)]
pub struct SimplexRule {
    pub dim: usize,
    /// `dim + 1` barycentric coordinates per point, flattened.
    pub bary: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SimplexRule {
    /// Conical-product rule exact for polynomials of total degree `degree`.
    pub fn new(dim: usize, degree: usize) -> Self {
        assert!((1..=3).contains(&dim));
        let q = (degree + dim).div_ceil(2).max(1);
        let (x, w) = gauss_legendre_on(q, 0.0, 1.0);
        let mut bary = Vec::new();
        let mut weights = Vec::new();
        match dim {
            1 => {
                for (u, wu) in x.iter().zip(&w) {
                    bary.extend([1.0 - u, *u]);
                    weights.push(*wu);
                }
            }
            2 => {
                for (u, wu) in x.iter().zip(&w) {
                    for (v, wv) in x.iter().zip(&w) {
                        let px = *u;
                        let py = v * (1.0 - u);
                        bary.extend([1.0 - px - py, px, py]);
                        // reference area 1/2, normalized to 1
                        weights.push(2.0 * wu * wv * (1.0 - u));
                    }
                }
            }
            _ => {
                for (u, wu) in x.iter().zip(&w) {
                    for (v, wv) in x.iter().zip(&w) {
                        for (s, ws) in x.iter().zip(&w) {
                            let px = *u;
                            let py = v * (1.0 - u);
                            let pz = s * (1.0 - u) * (1.0 - v);
                            bary.extend([1.0 - px - py - pz, px, py, pz]);
                            weights.push(6.0 * wu * wv * ws * (1.0 - u) * (1.0 - u) * (1.0 - v));
                        }
                    }
                }
            }
        }
        Self { dim, bary, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.bary[k * (self.dim + 1)..(k + 1) * (self.dim + 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_monomials() {
        for n in 1..=8 {
            let (x, w) = gauss_legendre(n);
            for k in 0..2 * n {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn simplex_rules_match_dirichlet_integrals() {
        // ∫ λ^a over the unit simplex, normalized by volume: d! ∏a_i! / (d + Σa)!
        for dim in 2..=3 {
            for degree in 0..=6 {
                let rule = SimplexRule::new(dim, degree);
                let wsum: f64 = rule.weights.iter().sum();
                assert!((wsum - 1.0).abs() < 1e-14);
                for a in 0..=degree {
                    for b in 0..=(degree - a) {
                        let approx: f64 = (0..rule.len())
                            .map(|k| {
                                let p = rule.point(k);
                                rule.weights[k] * p[1].powi(a as i32) * p[2].powi(b as i32)
                            })
                            .sum();
                        let exact = factorial(dim) * factorial(a) * factorial(b)
                            / factorial(dim + a + b);
                        assert!((approx - exact).abs() < 1e-13, "dim={dim} a={a} b={b}");
                    }
                }
            }
        }
    }
}
