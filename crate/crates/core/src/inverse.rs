//! Regularized Gauss–Newton reconstruction of spline coefficients from
//! boundary data, and discrepancy-based choice of the regularization weight.
//!
//! The objective is `‖U(θ) − Ũ‖² + λ²‖Gθ‖²`, minimized over the box of
//! admissible coefficients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::ProblemSpec;
use crate::mesh::build_mesh;
use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::splines::SplineBasis;
use crate::stepper::crank_nicolson_solve;
use crate::surrogate::{ParametricSurrogate, TraceOperator};

/// Discrete Laplacian on the coefficient grid: sum over axes of the plain
/// `(−1, 2, −1)` tridiagonal matrix.
pub fn build_laplacian(dims: &[usize]) -> Result<CsrMatrix> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("invalid coefficient grid {dims:?}")));
    }
    let total: usize = dims.iter().product();
    let mut b = TripletBuilder::new(total, total);
    let mut stride = 1;
    for &m in dims {
        for i in 0..total {
            let c = (i / stride) % m;
            b.push(i, i, 2.0);
            if c > 0 {
                b.push(i, i - stride, -1.0);
            }
            if c + 1 < m {
                b.push(i, i + stride, -1.0);
            }
        }
        stride *= m;
    }
    Ok(b.build(true))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regularizer {
    pub matrix: CsrMatrix,
    pub lambda: f64,
}

impl Regularizer {
    pub fn new(matrix: CsrMatrix, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("regularization weight must be nonnegative, got {lambda}")));
        }
        Ok(Self { matrix, lambda })
    }

    /// Laplacian on a `per_axis^dim` spline grid.
    pub fn laplacian(dim: usize, per_axis: usize, lambda: f64) -> Result<Self> {
        Self::new(build_laplacian(&vec![per_axis; dim])?, lambda)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.matrix.clone(), lambda)
    }

    fn apply(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; theta.len()];
        self.matrix.mul_vec(theta, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussNewtonOptions {
    pub max_iterations: usize,
    /// Absolute step-norm tolerance; `None` means `1e-8·√P`.
    pub step_tolerance: Option<f64>,
    pub relative_decrease: f64,
    pub max_halvings: usize,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tolerance: None,
            relative_decrease: 1e-10,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    StepTolerance,
    ObjectiveStalled,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub theta: Vec<f64>,
    /// Objective value before the first step and after every accepted step.
    pub objective_history: Vec<f64>,
    /// Data misfit `‖U(θ) − Ũ‖` at the same points as `objective_history`.
    pub misfit_history: Vec<f64>,
    pub misfit: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub approximation_error: Option<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Evaluation {
    residual: Vec<f64>,
    penalty: Vec<f64>,
    objective: f64,
}

fn evaluate(s: &ParametricSurrogate, data: &[f64], reg: &Regularizer, theta: &[f64]) -> Result<Evaluation> {
    let u = s.eval_u(theta)?;
    let residual: Vec<f64> = u.iter().zip(data).map(|(a, b)| a - b).collect();
    let penalty: Vec<f64> = reg.apply(theta).into_iter().map(|v| reg.lambda * v).collect();
    let objective = residual.iter().chain(&penalty).map(|x| x * x).sum();
    Ok(Evaluation {
        residual,
        penalty,
        objective,
    })
}

/// Solves `min ‖[J; λG]Δ + [r; λGθ]‖` by Householder QR of the stacked matrix.
pub fn gauss_newton_step(
    jacobian: &DMatrix<f64>,
    residual: &[f64],
    reg: &Regularizer,
    penalty: &[f64],
) -> Result<Vec<f64>> {
    let q = jacobian.nrows();
    let p = jacobian.ncols();
    let mut stacked = DMatrix::zeros(q + p, p);
    stacked.view_mut((0, 0), (q, p)).copy_from(jacobian);
    for (i, k, v) in reg.matrix.triplets() {
        stacked[(q + i, k)] = reg.lambda * v;
    }
    solve_stacked(stacked, residual, penalty, reg.lambda)
}

/// Gauss–Newton step with coordinates pinned at the box where the
/// unconstrained step would push them outward.
///
/// Pinned coordinates get a zero step and the least-squares problem is
/// re-solved over the free ones until no new coordinate gets pinned.
pub fn constrained_step(
    jacobian: &DMatrix<f64>,
    residual: &[f64],
    reg: &Regularizer,
    penalty: &[f64],
    theta: &[f64],
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>> {
    let p = theta.len();
    let mut free: Vec<usize> = (0..p).collect();
    loop {
        let step = if free.len() == p {
            gauss_newton_step(jacobian, residual, reg, penalty)?
        } else {
            let jac = jacobian.select_columns(&free);
            // penalty rows stay complete: pinned coordinates only lose their columns
            let mut sub = DMatrix::zeros(jacobian.nrows() + p, free.len());
            sub.view_mut((0, 0), (jacobian.nrows(), free.len())).copy_from(&jac);
            let q = jacobian.nrows();
            for (c, &k) in free.iter().enumerate() {
                for i in 0..p {
                    sub[(q + i, c)] = reg.lambda * reg.matrix.get(i, k);
                }
            }
            let reduced = solve_stacked(sub, residual, penalty, reg.lambda)?;
            let mut full = vec![0.0; p];
            for (c, &k) in free.iter().enumerate() {
                full[k] = reduced[c];
            }
            full
        };
        let before = free.len();
        free.retain(|&k| !((theta[k] <= lo && step[k] < 0.0) || (theta[k] >= hi && step[k] > 0.0)));
        if free.len() == before || free.is_empty() {
            if free.is_empty() {
                return Ok(vec![0.0; p]);
            }
            return Ok(step);
        }
    }
}

fn solve_stacked(stacked: DMatrix<f64>, residual: &[f64], penalty: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let rows = stacked.nrows();
    let cols = stacked.ncols();
    let mut rhs = DVector::zeros(rows);
    for (i, r) in residual.iter().chain(penalty).enumerate() {
        rhs[i] = -r;
    }
    let qr = stacked.qr();
    let r = qr.r();
    let diag_max = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let rank_tol = diag_max * f64::EPSILON * rows as f64;
    if (0..cols).any(|i| r[(i, i)].abs() <= rank_tol) {
        return Err(Error::IllPosedStep(lambda));
    }
    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, cols).into_owned();
    let step = r.solve_upper_triangular(&top).ok_or(Error::IllPosedStep(lambda))?;
    Ok(step.iter().copied().collect())
}

/// Box-projected Gauss–Newton with backtracking on the regularized objective.
pub fn gauss_newton(
    surrogate: &ParametricSurrogate,
    data: &[f64],
    reg: &Regularizer,
    theta0: &[f64],
    options: &GaussNewtonOptions,
) -> Result<ReconstructionResult> {
    let p = surrogate.num_params();
    if data.len() != surrogate.num_rows() {
        return Err(Error::DimensionMismatch {
            what: "measurement vector",
            expected: surrogate.num_rows(),
            got: data.len(),
        });
    }
    if reg.matrix.nrows() != p || theta0.len() != p {
        return Err(Error::DimensionMismatch {
            what: "parameter count",
            expected: p,
            got: if theta0.len() != p { theta0.len() } else { reg.matrix.nrows() },
        });
    }
    let interval = *surrogate.interval();
    let step_tol = options.step_tolerance.unwrap_or(1e-8 * (p as f64).sqrt());
    let mut theta: Vec<f64> = theta0.iter().map(|&t| interval.clamp(t)).collect();
    let mut current = evaluate(surrogate, data, reg, &theta)?;
    let mut objective_history = vec![current.objective];
    let mut misfit_history = vec![norm(&current.residual)];
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;

    while iterations < options.max_iterations {
        if current.objective == 0.0 {
            stop = StopReason::StepTolerance;
            break;
        }
        let jac = surrogate.eval_ju(&theta)?;
        let step = constrained_step(&jac, &current.residual, reg, &current.penalty, &theta, interval.lo(), interval.hi())?;
        if norm(&step) < step_tol {
            stop = StopReason::StepTolerance;
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let trial: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(t, d)| interval.clamp(t + alpha * d))
                .collect();
            let eval = evaluate(surrogate, data, reg, &trial)?;
            if eval.objective < current.objective {
                accepted = Some((trial, eval));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, eval)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        let moved: f64 = norm(&theta.iter().zip(&trial).map(|(a, b)| a - b).collect::<Vec<_>>());
        let decrease = (current.objective - eval.objective) / current.objective;
        theta = trial;
        current = eval;
        iterations += 1;
        objective_history.push(current.objective);
        misfit_history.push(norm(&current.residual));
        if moved < step_tol {
            stop = StopReason::StepTolerance;
            break;
        }
        if decrease < options.relative_decrease {
            stop = StopReason::ObjectiveStalled;
            break;
        }
    }
    Ok(ReconstructionResult {
        misfit: norm(&current.residual),
        theta,
        objective_history,
        misfit_history,
        lambda: reg.lambda,
        iterations,
        converged: matches!(stop, StopReason::StepTolerance | StopReason::ObjectiveStalled),
        stop,
        approximation_error: None,
    })
}

/// One probe of the discrepancy search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorozovProbe {
    pub lambda: f64,
    pub misfit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorozovSelection {
    pub lambda: f64,
    pub target: f64,
    pub result: ReconstructionResult,
    pub probes: Vec<MorozovProbe>,
    /// Whether the accepted misfit lies within `[0.9, 1.1]·√Q·σ`.
    pub accepted: bool,
    /// Whether misfits were non-decreasing in `λ` over all probes.
    pub monotone: bool,
    pub warnings: Vec<String>,
}

/// Discrepancy principle: `λ` with `‖U(θ*) − Ũ‖ ≈ √Q·σ`, searched by a
/// decade scan and bisection on `log10 λ ∈ [−6, 2]`.
pub fn morozov_select(
    surrogate: &ParametricSurrogate,
    data: &[f64],
    sigma: f64,
    reg: &Regularizer,
    theta0: &[f64],
    options: &GaussNewtonOptions,
) -> Result<MorozovSelection> {
    if !(sigma > 0.0) {
        return Err(Error::ZeroNoise);
    }
    let target = (data.len() as f64).sqrt() * sigma;
    let (lo_band, hi_band) = (0.9 * target, 1.1 * target);
    let mut probes = Vec::new();
    let run = |log_lambda: f64, probes: &mut Vec<MorozovProbe>| -> Result<ReconstructionResult> {
        let lambda = 10f64.powf(log_lambda);
        let r = gauss_newton(surrogate, data, &reg.with_lambda(lambda)?, theta0, options)?;
        probes.push(MorozovProbe { lambda, misfit: r.misfit });
        Ok(r)
    };
    let in_band = |m: f64| (lo_band..=hi_band).contains(&m);

    // Scan decades downward from the heavily regularized end: the discrepancy
    // principle wants the largest admissible λ, and tiny λ are unreliable
    // because the nearly unregularized problem has poor local minima.
    let mut warnings = Vec::new();
    let mut above: Option<(f64, ReconstructionResult)> = None;
    let mut below: Option<(f64, ReconstructionResult)> = None;
    let mut hit = None;
    for decade in (-6..=2).rev() {
        let ll = decade as f64;
        let r = run(ll, &mut probes)?;
        if in_band(r.misfit) {
            hit = Some(r);
            break;
        }
        if r.misfit > target {
            above = Some((ll, r));
        } else {
            below = Some((ll, r));
            break;
        }
    }
    let closest = |a: &ReconstructionResult, b: &ReconstructionResult| {
        if (a.misfit - target).abs() <= (b.misfit - target).abs() {
            a.clone()
        } else {
            b.clone()
        }
    };
    let (result, accepted) = match (hit, above, below) {
        (Some(r), _, _) => (r, true),
        (None, Some((mut hi, r_hi)), Some((mut lo, r_lo))) => {
            let mut best = closest(&r_lo, &r_hi);
            let mut found = false;
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                let r = run(mid, &mut probes)?;
                if in_band(r.misfit) {
                    best = r;
                    found = true;
                    break;
                }
                best = closest(&best, &r);
                if r.misfit < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-6 {
                    break;
                }
            }
            if !found {
                warnings.push(format!(
                    "bisection ended outside the acceptance band; returning closest probe (misfit {:.4e}, target {target:.4e})",
                    best.misfit
                ));
            }
            (best, found)
        }
        (None, None, Some((_, r))) => {
            warnings.push(format!(
                "discrepancy not bracketed: misfit {:.4e} at λ=1e2 is already below the target {target:.4e}",
                r.misfit
            ));
            (r, false)
        }
        (None, Some((_, r)), None) => {
            warnings.push(format!(
                "discrepancy not bracketed: misfit {:.4e} at λ=1e-6 is still above the target {target:.4e}",
                r.misfit
            ));
            (r, false)
        }
        (None, None, None) => unreachable!("at least one decade is probed"),
    };

    let mut sorted = probes.clone();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let monotone = sorted
        .windows(2)
        .all(|w| w[1].misfit >= w[0].misfit * (1.0 - 1e-6) - 1e-12);
    if !monotone {
        warnings.push("misfit was not monotone in λ across the probes".into());
    }
    Ok(MorozovSelection {
        lambda: result.lambda,
        target,
        result,
        probes,
        accepted,
        monotone,
        warnings,
    })
}

/// Fine-grid reference controls for the approximation-error diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceControls {
    pub nodes_per_side: usize,
    pub delta: f64,
}

/// `‖U(θ*) − Ũ_θ*‖`, where `Ũ_θ*` is a noiseless Crank–Nicolson solve with
/// `a(·; θ*)` on a fine mesh sampled at the measurement coordinates.
pub fn approximation_error(
    surrogate: &ParametricSurrogate,
    basis: &SplineBasis,
    theta: &[f64],
    problem: &ProblemSpec,
    controls: ReferenceControls,
) -> Result<f64> {
    let reference = reference_trace(surrogate, |x| basis.evaluate_diffusivity(theta, x), problem, controls)?;
    let u = surrogate.eval_u(theta)?;
    Ok(norm(&u.iter().zip(&reference).map(|(a, b)| a - b).collect::<Vec<_>>()))
}

/// Noiseless time-major boundary data of a fixed diffusivity at the surrogate's coordinates.
pub fn reference_trace(
    surrogate: &ParametricSurrogate,
    diffusivity: impl Fn(&[f64]) -> f64,
    problem: &ProblemSpec,
    controls: ReferenceControls,
) -> Result<Vec<f64>> {
    let layout = surrogate.layout();
    let mesh = build_mesh(layout.dim(), controls.nodes_per_side)?;
    let snaps = crank_nicolson_solve(&mesh, diffusivity, problem, controls.delta, &layout.times)?;
    Ok(TraceOperator::new(&mesh, &layout.points)?.stack(&snaps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{total_degree_indices, ParameterInterval};
    use crate::surrogate::{perimeter_points, MeasurementLayout, SurrogateMetadata};

    fn surrogate(p: usize, n: usize, q_times: usize, seed: u64) -> ParametricSurrogate {
        let lambda = total_degree_indices(p, n).unwrap();
        let times: Vec<f64> = (1..=q_times).map(|k| k as f64 * 0.1).collect();
        let layout = MeasurementLayout::new(perimeter_points(8).unwrap(), times).unwrap();
        let cols = lambda.len();
        let mut state = seed;
        let v = (0..layout.len() * cols)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let meta = SurrogateMetadata {
            dim: 2,
            per_axis: 2,
            degree: 1,
            nodes_per_side: 3,
            delta: 0.1,
            final_time: 1.0,
        };
        ParametricSurrogate::from_parts(v, lambda, ParameterInterval::new(0.5, 2.0).unwrap(), layout, meta).unwrap()
    }

    #[test]
    fn laplacian_examples() {
        let g = build_laplacian(&[4]).unwrap();
        let dense = g.to_dense();
        let want = [2.0, -1.0, 0.0, 0.0, -1.0, 2.0, -1.0, 0.0, 0.0, -1.0, 2.0, -1.0, 0.0, 0.0, -1.0, 2.0];
        assert_eq!(dense, want);
        let ones = vec![1.0; 4];
        let mut out = vec![0.0; 4];
        g.mul_vec(&ones, &mut out);
        assert_eq!(out, vec![1.0, 0.0, 0.0, 1.0]);

        // 2D m=3 against a direct 5-point assembly
        let g2 = build_laplacian(&[3, 3]).unwrap();
        for i in 0..9 {
            for k in 0..9 {
                let (xi, yi): (usize, usize) = (i % 3, i / 3);
                let (xk, yk): (usize, usize) = (k % 3, k / 3);
                let want = if i == k {
                    4.0
                } else if (xi == xk && yi.abs_diff(yk) == 1) || (yi == yk && xi.abs_diff(xk) == 1) {
                    -1.0
                } else {
                    0.0
                };
                assert_eq!(g2.get(i, k), want);
            }
        }
        assert!(g2.asymmetry() == 0.0);
    }

    #[test]
    fn linear_model_recovered_in_one_step() {
        let s = surrogate(4, 1, 2, 3);
        let truth = [0.8, 1.7, 1.1, 1.4];
        let data = s.eval_u(&truth).unwrap();
        let reg = Regularizer::laplacian(2, 2, 0.0).unwrap();
        let r = gauss_newton(&s, &data, &reg, &[1.25; 4], &GaussNewtonOptions::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
        for (a, b) in r.theta.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn stationary_start_takes_no_step() {
        let s = surrogate(4, 2, 2, 5);
        let theta0 = [1.25; 4];
        let data = s.eval_u(&theta0).unwrap();
        let reg = Regularizer::laplacian(2, 2, 0.0).unwrap();
        let r = gauss_newton(&s, &data, &reg, &theta0, &GaussNewtonOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
        assert_eq!(r.theta, theta0);
    }

    #[test]
    fn qr_step_equals_normal_equations() {
        let s = surrogate(4, 1, 2, 9);
        let theta = [1.0, 1.2, 0.9, 1.6];
        let data: Vec<f64> = (0..s.num_rows()).map(|q| (q as f64 * 0.7).cos()).collect();
        let u = s.eval_u(&theta).unwrap();
        let res: Vec<f64> = u.iter().zip(&data).map(|(a, b)| a - b).collect();
        let j = s.eval_ju(&theta).unwrap();
        let reg = Regularizer::laplacian(2, 2, 0.0).unwrap();
        let step = gauss_newton_step(&j, &res, &reg, &[0.0; 4]).unwrap();
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * DVector::from_vec(res);
        let oracle = jtj.cholesky().unwrap().solve(&(-jtr));
        for (a, b) in step.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn rank_deficiency_without_regularization_is_an_error() {
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let reg = Regularizer::new(build_laplacian(&[2]).unwrap(), 0.0).unwrap();
        assert!(matches!(
            gauss_newton_step(&j, &[1.0, 0.0, 0.0], &reg, &[0.0, 0.0]),
            Err(Error::IllPosedStep(_))
        ));
        let reg = reg.with_lambda(0.1).unwrap();
        assert!(gauss_newton_step(&j, &[1.0, 0.0, 0.0], &reg, &[0.0, 0.0]).is_ok());
    }

    #[test]
    fn iterates_stay_in_box_and_objective_decreases() {
        let s = surrogate(4, 2, 3, 21);
        let data: Vec<f64> = (0..s.num_rows()).map(|q| 3.0 * (q as f64).sin()).collect();
        let reg = Regularizer::laplacian(2, 2, 0.05).unwrap();
        let r = gauss_newton(&s, &data, &reg, &[1.25; 4], &GaussNewtonOptions::default()).unwrap();
        assert!(r.theta.iter().all(|&t| (0.5..=2.0).contains(&t)));
        assert!(r.objective_history.windows(2).all(|w| w[1] <= w[0]));
        let again = gauss_newton(&s, &data, &reg, &[1.25; 4], &GaussNewtonOptions::default()).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn morozov_rejects_zero_noise() {
        let s = surrogate(4, 1, 2, 1);
        let data = s.eval_u(&[1.0; 4]).unwrap();
        let reg = Regularizer::laplacian(2, 2, 0.0).unwrap();
        assert!(matches!(
            morozov_select(&s, &data, 0.0, &reg, &[1.25; 4], &GaussNewtonOptions::default()),
            Err(Error::ZeroNoise)
        ));
    }
}
