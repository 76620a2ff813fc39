//! Run configuration: a sectioned TOML file, every field optional.
//!
//! ```toml
//! [problem]
//! dim = 2
//! final_time = 0.5
//! flux_rate = 20.0
//!
//! [splines]
//! per_axis = 14
//! degree = 2
//!
//! [spectral]
//! lo = 0.5
//! hi = 2.0
//! total_degree = 2
//! # keep = 5000
//!
//! [mesh]
//! nodes_per_side = 37
//! delta = 0.001
//!
//! [measurements]
//! boundary_points = 36        # 2D: perimeter count; 3D: lattice points per side
//! times = [0.01, 0.05, 0.09]
//!
//! [simulation]
//! target = "smooth-2d"
//! nodes_per_side = 129
//! delta = 0.001
//! sigma0 = 0.001
//! seed = 7
//!
//! [inverse]
//! lambda = "morozov"          # or a number
//! theta0 = "midpoint"         # or a number inside the box
//! max_iterations = 50
//!
//! [output]
//! surrogate = "surrogate.bin"
//! measurements = "measurements.csv"
//! report = "report.txt"
//! grid = "diffusivity.csv"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::inverse::GaussNewtonOptions;
use crate::pipeline::{ForwardSetup, LambdaChoice, SimulationSetup};
use crate::spectral::ParameterInterval;
use crate::surrogate::{lattice_boundary_points, perimeter_points, standard_times, MeasurementLayout};

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    problem: RawProblem,
    #[serde(default)]
    splines: RawSplines,
    #[serde(default)]
    spectral: RawSpectral,
    #[serde(default)]
    mesh: RawMesh,
    #[serde(default)]
    measurements: RawMeasurements,
    #[serde(default)]
    simulation: RawSimulation,
    #[serde(default)]
    inverse: RawInverse,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    dim: Option<usize>,
    final_time: Option<f64>,
    flux_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawSplines {
    per_axis: Option<usize>,
    degree: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawSpectral {
    lo: Option<f64>,
    hi: Option<f64>,
    total_degree: Option<usize>,
    keep: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    nodes_per_side: Option<usize>,
    delta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawMeasurements {
    boundary_points: Option<usize>,
    times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    target: Option<String>,
    nodes_per_side: Option<usize>,
    delta: Option<f64>,
    sigma0: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
enum NumberOrWord {
    Number(f64),
    Word(String),
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawInverse {
    lambda: Option<NumberOrWord>,
    theta0: Option<NumberOrWord>,
    max_iterations: Option<usize>,
    step_tolerance: Option<f64>,
    relative_decrease: Option<f64>,
    max_halvings: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    surrogate: Option<PathBuf>,
    measurements: Option<PathBuf>,
    report: Option<PathBuf>,
    grid: Option<PathBuf>,
}

/// Starting point of the reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartPolicy {
    Midpoint,
    Constant(f64),
}

/// Output locations; relative paths are taken from the working directory.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub surrogate: PathBuf,
    pub measurements: PathBuf,
    pub report: PathBuf,
    pub grid: PathBuf,
}

/// Validated configuration for every command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub forward: ForwardSetup,
    pub simulation: SimulationSetup,
    pub target: String,
    pub lambda: LambdaChoice,
    pub start: StartPolicy,
    pub gauss_newton: GaussNewtonOptions,
    pub output: OutputPaths,
}

impl RunConfig {
    /// Defaults for the given dimension, as if from an empty file.
    pub fn defaults(dim: usize) -> Result<Self> {
        Self::parse(&format!("[problem]\ndim = {dim}\n"), Path::new("<defaults>"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// Parses and validates; messages name the line of the offending key.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let fail = |line: Option<usize>, message: String| Error::Config {
            path: path.to_path_buf(),
            message: match line {
                Some(l) => format!("line {l}: {message}"),
                None => message,
            },
        };
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            fail(line, e.message().to_string())
        })?;
        let at = |section: &str, key: &str| key_line(text, section, key);
        let check = |ok: bool, section: &str, key: &str, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(fail(at(section, key), format!("[{section}] {key} {what}")))
            }
        };

        let dim = raw.problem.dim.unwrap_or(2);
        check(dim == 2 || dim == 3, "problem", "dim", "must be 2 or 3")?;
        let is3 = dim == 3;
        let final_time = raw.problem.final_time.unwrap_or(0.5);
        check(final_time > 0.0 && final_time.is_finite(), "problem", "final_time", "must be positive")?;
        let flux_rate = raw.problem.flux_rate.unwrap_or(if is3 { 40.0 } else { 20.0 });
        check(flux_rate.is_finite(), "problem", "flux_rate", "must be finite")?;

        let per_axis = raw.splines.per_axis.unwrap_or(if is3 { 6 } else { 14 });
        let degree = raw.splines.degree.unwrap_or(if is3 { 1 } else { 2 });
        check(degree >= 1, "splines", "degree", "must be at least 1")?;
        check(per_axis > degree, "splines", "per_axis", "must exceed the spline degree")?;

        let lo = raw.spectral.lo.unwrap_or(0.5);
        let hi = raw.spectral.hi.unwrap_or(2.0);
        check(lo > 0.0, "spectral", "lo", "must be positive")?;
        check(hi > lo && hi.is_finite(), "spectral", "hi", "must exceed lo")?;
        let interval = ParameterInterval::new(lo, hi)?;
        let total_degree = raw.spectral.total_degree.unwrap_or(2);
        check(total_degree >= 1, "spectral", "total_degree", "must be at least 1")?;
        check(raw.spectral.keep != Some(0), "spectral", "keep", "must be positive")?;

        let nodes_per_side = raw.mesh.nodes_per_side.unwrap_or(if is3 { 26 } else { 37 });
        check(nodes_per_side >= 2, "mesh", "nodes_per_side", "must be at least 2")?;
        let delta = raw.mesh.delta.unwrap_or(1e-3);
        check(delta > 0.0 && delta <= final_time, "mesh", "delta", "must lie in (0, final_time]")?;

        let count = raw.measurements.boundary_points.unwrap_or(if is3 { 6 } else { 36 });
        let points = if is3 {
            check(count >= 2, "measurements", "boundary_points", "must be at least 2 per side in 3D")?;
            lattice_boundary_points(count)?
        } else {
            check(count >= 4 && count.is_multiple_of(4), "measurements", "boundary_points", "must be a positive multiple of 4 in 2D")?;
            perimeter_points(count)?
        };
        let times = raw.measurements.times.clone().unwrap_or_else(standard_times);
        check(!times.is_empty(), "measurements", "times", "must not be empty")?;
        check(
            times.iter().all(|&t| t > 0.0 && t < final_time + 1e-12),
            "measurements",
            "times",
            "must lie in (0, final_time]",
        )?;
        check(times.windows(2).all(|w| w[0] < w[1]), "measurements", "times", "must be increasing")?;
        let on_grid = |d: f64| times.iter().all(|&t| ((t / d).round() * d - t).abs() <= 1e-9 * t.max(1.0));
        check(on_grid(delta), "measurements", "times", "must be multiples of [mesh] delta")?;
        let layout = MeasurementLayout::new(points, times.clone())?;

        let target = raw.simulation.target.clone().unwrap_or_else(|| (if is3 { "smooth-3d" } else { "smooth-2d" }).into());
        let sim_nodes = raw.simulation.nodes_per_side.unwrap_or(if is3 { 41 } else { 129 });
        check(sim_nodes >= 2, "simulation", "nodes_per_side", "must be at least 2")?;
        let sim_delta = raw.simulation.delta.unwrap_or(1e-3);
        check(sim_delta > 0.0 && sim_delta <= final_time, "simulation", "delta", "must lie in (0, final_time]")?;
        check(on_grid(sim_delta), "simulation", "delta", "must divide every measurement time")?;
        let sigma0 = raw.simulation.sigma0.unwrap_or(0.001);
        check(sigma0 >= 0.0 && sigma0.is_finite(), "simulation", "sigma0", "must be non-negative")?;
        let seed = raw.simulation.seed.unwrap_or(7);

        let lambda = match &raw.inverse.lambda {
            None => LambdaChoice::Morozov,
            Some(v) => parse_lambda_value(v).map_err(|m| fail(at("inverse", "lambda"), m))?,
        };
        let start = match &raw.inverse.theta0 {
            None => StartPolicy::Midpoint,
            Some(NumberOrWord::Word(w)) if w == "midpoint" => StartPolicy::Midpoint,
            Some(NumberOrWord::Number(x)) if interval.contains(*x) => StartPolicy::Constant(*x),
            Some(_) => {
                return Err(fail(
                    at("inverse", "theta0"),
                    format!("[inverse] theta0 must be \"midpoint\" or a number in [{lo}, {hi}]"),
                ))
            }
        };
        let mut gn = GaussNewtonOptions::default();
        if let Some(k) = raw.inverse.max_iterations {
            check(k >= 1, "inverse", "max_iterations", "must be at least 1")?;
            gn.max_iterations = k;
        }
        if let Some(t) = raw.inverse.step_tolerance {
            check(t > 0.0, "inverse", "step_tolerance", "must be positive")?;
            gn.step_tolerance = Some(t);
        }
        if let Some(t) = raw.inverse.relative_decrease {
            check(t >= 0.0, "inverse", "relative_decrease", "must be non-negative")?;
            gn.relative_decrease = t;
        }
        if let Some(h) = raw.inverse.max_halvings {
            gn.max_halvings = h;
        }

        let out = &raw.output;
        let output = OutputPaths {
            surrogate: out.surrogate.clone().unwrap_or_else(|| "surrogate.bin".into()),
            measurements: out.measurements.clone().unwrap_or_else(|| "measurements.csv".into()),
            report: out.report.clone().unwrap_or_else(|| "report.txt".into()),
            grid: out.grid.clone().unwrap_or_else(|| "diffusivity.csv".into()),
        };

        Ok(Self {
            forward: ForwardSetup {
                dim,
                per_axis,
                degree,
                total_degree,
                interval,
                keep: raw.spectral.keep,
                nodes_per_side,
                delta,
                final_time,
                flux_rate,
                layout: layout.clone(),
            },
            simulation: SimulationSetup {
                dim,
                nodes_per_side: sim_nodes,
                delta: sim_delta,
                final_time,
                flux_rate,
                layout,
                sigma0,
                seed,
            },
            target,
            lambda,
            start,
            gauss_newton: gn,
            output,
        })
    }

    /// Starting parameter vector for `P` unknowns.
    pub fn theta0(&self, num_params: usize) -> Vec<f64> {
        let v = match self.start {
            StartPolicy::Midpoint => self.forward.interval.midpoint(),
            StartPolicy::Constant(x) => x,
        };
        vec![v; num_params]
    }
}

fn parse_lambda_value(v: &NumberOrWord) -> std::result::Result<LambdaChoice, String> {
    match v {
        NumberOrWord::Word(w) => parse_lambda(w),
        NumberOrWord::Number(x) if *x >= 0.0 && x.is_finite() => Ok(LambdaChoice::Fixed(*x)),
        NumberOrWord::Number(x) => Err(format!("[inverse] lambda must be non-negative, got {x}")),
    }
}

/// Parses `morozov` or a non-negative number.
pub fn parse_lambda(s: &str) -> std::result::Result<LambdaChoice, String> {
    if s.trim().eq_ignore_ascii_case("morozov") {
        return Ok(LambdaChoice::Morozov);
    }
    match s.trim().parse::<f64>() {
        Ok(x) if x >= 0.0 && x.is_finite() => Ok(LambdaChoice::Fixed(x)),
        _ => Err(format!("lambda must be \"morozov\" or a non-negative number, got {s:?}")),
    }
}

/// 1-based line of `key` inside `[section]`, if present.
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (k, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.split(']').next()) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((lhs, _)) = t.split_once('=') {
                if lhs.trim() == key {
                    return Some(k + 1);
                }
            }
        }
    }
    None
}
