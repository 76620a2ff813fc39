//! End-to-end building blocks: surrogate construction, synthetic data and
//! reconstruction, shared by the command-line driver, examples and checks.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::fem::{compute_eta, ProblemSpec};
use crate::inverse::{gauss_newton, morozov_select, GaussNewtonOptions, ReconstructionResult, Regularizer};
use crate::mesh::build_mesh;
use crate::spectral::{total_degree_indices, ParameterInterval};
use crate::splines::{build_partition, sample_field_error, sample_grid, SplineBasis};
use crate::stepper::{crank_nicolson_solve, ParametricOperator};
use crate::surrogate::{add_noise, MeasurementLayout, MeasurementSet, ParametricSurrogate, SurrogateMetadata, TraceOperator};

/// Everything needed to build a surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSetup {
    pub dim: usize,
    pub per_axis: usize,
    pub degree: usize,
    pub total_degree: usize,
    pub interval: ParameterInterval,
    pub keep: Option<usize>,
    pub nodes_per_side: usize,
    pub delta: f64,
    pub final_time: f64,
    pub flux_rate: f64,
    pub layout: MeasurementLayout,
}

impl ForwardSetup {
    /// Default 2D experiment: 14x14 quadratic splines, quadratic chaos, 37² mesh.
    pub fn standard_2d() -> Self {
        Self {
            dim: 2,
            per_axis: 14,
            degree: 2,
            total_degree: 2,
            interval: ParameterInterval::new(0.5, 2.0).expect("valid interval"),
            keep: None,
            nodes_per_side: 37,
            delta: 1e-3,
            final_time: 0.5,
            flux_rate: 20.0,
            layout: MeasurementLayout::standard(2).expect("standard layout"),
        }
    }

    /// Default 3D experiment: 6x6x6 trilinear splines, quadratic chaos, 26³ mesh.
    pub fn standard_3d() -> Self {
        Self {
            dim: 3,
            per_axis: 6,
            degree: 1,
            total_degree: 2,
            interval: ParameterInterval::new(0.5, 2.0).expect("valid interval"),
            keep: None,
            nodes_per_side: 26,
            delta: 1e-3,
            final_time: 0.5,
            flux_rate: 40.0,
            layout: MeasurementLayout::standard(3).expect("standard layout"),
        }
    }

    pub fn basis(&self) -> Result<SplineBasis> {
        build_partition(self.dim, self.per_axis, self.degree)
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        ProblemSpec::balanced_fluxes(self.dim, self.flux_rate, self.final_time)
    }

    pub fn metadata(&self) -> SurrogateMetadata {
        SurrogateMetadata {
            dim: self.dim,
            per_axis: self.per_axis,
            degree: self.degree,
            nodes_per_side: self.nodes_per_side,
            delta: self.delta,
            final_time: self.final_time,
        }
    }
}

/// Sizes and timings reported by a forward build.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardStats {
    pub num_nodes: usize,
    pub num_params: usize,
    pub num_basis: usize,
    pub lambda_nnz: usize,
    pub coupling_nnz: usize,
    pub eta: f64,
    pub assembly_time: Duration,
    pub stepping_time: Duration,
}

/// Assembles the parametric operator, steps it and extracts the surrogate.
pub fn build_surrogate(setup: &ForwardSetup) -> Result<(ParametricSurrogate, ForwardStats)> {
    let start = Instant::now();
    let mesh = build_mesh(setup.dim, setup.nodes_per_side)?;
    let basis = setup.basis()?;
    let lambda = total_degree_indices(basis.len(), setup.total_degree)?;
    let op = ParametricOperator::assemble(&mesh, &basis, &lambda, &setup.interval)?;
    let eta = compute_eta(op.parts(), op.laplace())?;
    let assembly_time = start.elapsed();
    let lambda_nnz = lambda.nnz();
    let coupling_nnz = op.coupling_nnz();
    let problem = setup.problem()?;
    let start = Instant::now();
    let surrogate = ParametricSurrogate::build(
        &op,
        &mesh,
        &problem,
        setup.delta,
        setup.layout.clone(),
        lambda,
        setup.interval,
        setup.metadata(),
    )?;
    let stepping_time = start.elapsed();
    let surrogate = match setup.keep {
        Some(k) => surrogate.truncate(k)?,
        None => surrogate,
    };
    let stats = ForwardStats {
        num_nodes: mesh.num_nodes(),
        num_params: basis.len(),
        num_basis: surrogate.num_basis(),
        lambda_nnz,
        coupling_nnz,
        eta,
        assembly_time,
        stepping_time,
    };
    Ok((surrogate, stats))
}

/// Named target diffusivities, or an arithmetic expression in `x1, x2, x3`.
pub enum Target {
    Smooth2d,
    Piecewise2d,
    Smooth3d,
    Expression(String, Box<dyn Fn(f64, f64, f64) -> f64>),
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Target({})", self.name())
    }
}

impl Target {
    /// Parses `smooth-2d`, `piecewise-2d`, `smooth-3d` or an expression such as `1 + x1*x2`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.trim() {
            "smooth-2d" => Ok(Target::Smooth2d),
            "piecewise-2d" => Ok(Target::Piecewise2d),
            "smooth-3d" => Ok(Target::Smooth3d),
            expr => {
                let parsed: meval::Expr = expr.parse().map_err(|e| Error::Expression(format!("{expr}: {e}")))?;
                let f = parsed
                    .bind3("x1", "x2", "x3")
                    .map_err(|e| Error::Expression(format!("{expr}: {e}")))?;
                Ok(Target::Expression(expr.to_string(), Box::new(f)))
            }
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Target::Smooth2d => "smooth-2d",
            Target::Piecewise2d => "piecewise-2d",
            Target::Smooth3d => "smooth-3d",
            Target::Expression(s, _) => s,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let c = |k: usize| x.get(k).copied().unwrap_or(0.0);
        match self {
            Target::Smooth2d => 1.25 + 0.5 * (6.0 * c(0)).sin() * (4.0 * c(1)).cos(),
            Target::Piecewise2d => piecewise_inclusion(c(0), c(1)),
            Target::Smooth3d => 1.25 + (0.5 - c(2)) * (6.0 * c(0)).sin() * (4.0 * c(1)).cos(),
            Target::Expression(_, f) => f(c(0), c(1), c(2)),
        }
    }
}

/// Background 1/2 with a 3/2 disc of radius 0.2 at (0.35, 0.6) and a 3/2
/// square `[0.6, 0.85] x [0.15, 0.4]`.
pub fn piecewise_inclusion(x1: f64, x2: f64) -> f64 {
    let disc = (x1 - 0.35).powi(2) + (x2 - 0.6).powi(2) <= 0.04;
    let square = (0.6..=0.85).contains(&x1) && (0.15..=0.4).contains(&x2);
    if disc || square {
        1.5
    } else {
        0.5
    }
}

/// Controls for synthetic data generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSetup {
    pub dim: usize,
    pub nodes_per_side: usize,
    pub delta: f64,
    pub final_time: f64,
    pub flux_rate: f64,
    pub layout: MeasurementLayout,
    pub sigma0: f64,
    pub seed: u64,
}

/// Fine-mesh Crank–Nicolson data at the layout, with seeded noise.
pub fn simulate(setup: &SimulationSetup, target: &Target) -> Result<(MeasurementSet, Vec<f64>)> {
    let mesh = build_mesh(setup.dim, setup.nodes_per_side)?;
    let problem = ProblemSpec::balanced_fluxes(setup.dim, setup.flux_rate, setup.final_time)?;
    let snaps = crank_nicolson_solve(&mesh, |x| target.eval(x), &problem, setup.delta, &setup.layout.times)?;
    let clean = TraceOperator::new(&mesh, &setup.layout.points)?.stack(&snaps);
    let (values, sigma) = add_noise(&clean, setup.sigma0, setup.seed)?;
    Ok((
        MeasurementSet {
            layout: setup.layout.clone(),
            values,
            sigma,
            sigma0: setup.sigma0,
            seed: setup.seed,
        },
        clean,
    ))
}

/// How the regularization weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    Morozov,
}

/// Result of [`reconstruct`], with the Morozov bookkeeping when used.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub result: ReconstructionResult,
    pub target_misfit: Option<f64>,
    pub morozov_accepted: Option<bool>,
    pub warnings: Vec<String>,
    pub elapsed: Duration,
}

/// Runs the regularized reconstruction from the midpoint of the box.
pub fn reconstruct(
    surrogate: &ParametricSurrogate,
    data: &MeasurementSet,
    choice: LambdaChoice,
    options: &GaussNewtonOptions,
) -> Result<Reconstruction> {
    let theta0 = vec![surrogate.interval().midpoint(); surrogate.num_params()];
    reconstruct_from(surrogate, data, choice, &theta0, options)
}

/// Same as [`reconstruct`] with an explicit starting point.
pub fn reconstruct_from(
    surrogate: &ParametricSurrogate,
    data: &MeasurementSet,
    choice: LambdaChoice,
    theta0: &[f64],
    options: &GaussNewtonOptions,
) -> Result<Reconstruction> {
    let dist = surrogate.layout().distance(&data.layout);
    if dist > 1e-12 {
        return Err(Error::CoordinateMismatch(format!(
            "measurement coordinates differ from the surrogate's by {dist:e}"
        )));
    }
    let start = Instant::now();
    let meta = surrogate.metadata();
    let base = Regularizer::laplacian(meta.dim, meta.per_axis, 0.0)?;
    let (result, target_misfit, accepted, warnings) = match choice {
        LambdaChoice::Fixed(l) => {
            let r = gauss_newton(surrogate, &data.values, &base.with_lambda(l)?, theta0, options)?;
            let target = (data.sigma > 0.0).then(|| (data.values.len() as f64).sqrt() * data.sigma);
            (r, target, None, Vec::new())
        }
        LambdaChoice::Morozov => {
            let sel = morozov_select(surrogate, &data.values, data.sigma, &base, theta0, options)?;
            (sel.result, Some(sel.target), Some(sel.accepted), sel.warnings)
        }
    };
    Ok(Reconstruction {
        result,
        target_misfit,
        morozov_accepted: accepted,
        warnings,
        elapsed: start.elapsed(),
    })
}

/// Relative discrete L² error of `a(·; θ)` against a target on a regular grid.
pub fn diffusivity_error(basis: &SplineBasis, theta: &[f64], target: &Target, per_axis: usize) -> f64 {
    let grid = sample_grid(basis.dim(), per_axis);
    sample_field_error(basis, theta, |x| target.eval(x), &grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_targets_respect_bounds() {
        let grid = sample_grid(2, 101);
        let t = Target::Smooth2d;
        assert!(grid.iter().all(|x| (0.75..=1.75).contains(&t.eval(x))));
        let p = Target::Piecewise2d;
        assert!(grid.iter().all(|x| [0.5, 1.5].contains(&p.eval(x))));
        let g3 = sample_grid(3, 21);
        let s3 = Target::Smooth3d;
        assert!(g3.iter().all(|x| (0.75..=1.75).contains(&s3.eval(x))));
    }

    #[test]
    fn expressions_parse_and_evaluate() {
        let t = Target::parse("1 + x1*x2 + 0*x3").unwrap();
        assert!((t.eval(&[0.5, 0.5]) - 1.25).abs() < 1e-15);
        assert!(Target::parse("1 + y").is_err());
        assert_eq!(Target::parse("smooth-2d").unwrap().name(), "smooth-2d");
    }

    #[test]
    fn toy_forward_build_sizes() {
        let setup = ForwardSetup {
            dim: 2,
            per_axis: 3,
            degree: 1,
            total_degree: 1,
            nodes_per_side: 6,
            delta: 0.01,
            final_time: 0.5,
            ..ForwardSetup::standard_2d()
        };
        let (s, stats) = build_surrogate(&setup).unwrap();
        assert_eq!(s.num_basis(), 10);
        assert_eq!(s.num_rows(), 468);
        assert_eq!(stats.num_params, 9);
    }
}
