//! Command implementations behind the `thermotomo` binary.
//!
//! Each command takes a validated [`RunConfig`] plus overrides and writes a
//! short human-readable summary to `out`.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{
    read_measurements, read_surrogate, write_diffusivity_grid_to, write_measurements, write_report_to, write_surrogate, ReportExtras,
};
use crate::pipeline::{build_surrogate, reconstruct_from, simulate, LambdaChoice, Target};
use crate::spectral::{nnz_lambda, total_degree_count};
use crate::splines::build_partition;
use crate::verify::{run_all, run_criterion, CriterionOutcome, Tier};

/// Loads the config file, or the 2D defaults when none is given.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => RunConfig::defaults(2),
    }
}

/// Builds the surrogate and writes the container.
pub fn cmd_forward(config: &RunConfig, output: Option<&Path>, out: &mut impl Write) -> Result<PathBuf> {
    let path = output.map_or_else(|| config.output.surrogate.clone(), Path::to_path_buf);
    let (surrogate, stats) = build_surrogate(&config.forward)?;
    write_surrogate(&path, &surrogate)?;
    writeln!(out, "M (mesh nodes)      {}", stats.num_nodes)?;
    writeln!(out, "P (parameters)      {}", stats.num_params)?;
    writeln!(out, "N (basis columns)   {}", stats.num_basis)?;
    writeln!(out, "nnz(Λ)              {}", stats.lambda_nnz)?;
    writeln!(out, "nnz(S)              {}", stats.coupling_nnz)?;
    writeln!(out, "eta                 {:.6}", stats.eta)?;
    writeln!(out, "assembly            {:.2} s", stats.assembly_time.as_secs_f64())?;
    writeln!(out, "time stepping       {:.2} s", stats.stepping_time.as_secs_f64())?;
    writeln!(out, "wrote {} (Q = {})", path.display(), surrogate.num_rows())?;
    Ok(path)
}

/// Generates noisy fine-mesh measurements for a target diffusivity.
pub fn cmd_simulate(
    config: &RunConfig,
    target: Option<&str>,
    seed: Option<u64>,
    output: Option<&Path>,
    out: &mut impl Write,
) -> Result<PathBuf> {
    let target = Target::parse(target.unwrap_or(&config.target))?;
    let mut setup = config.simulation.clone();
    if let Some(s) = seed {
        setup.seed = s;
    }
    let path = output.map_or_else(|| config.output.measurements.clone(), Path::to_path_buf);
    let (data, _) = simulate(&setup, &target)?;
    write_measurements(&path, &data)?;
    writeln!(out, "target              {}", target.name())?;
    writeln!(out, "mesh                {} nodes per side, δ = {}", setup.nodes_per_side, setup.delta)?;
    writeln!(out, "sigma0 / sigma      {} / {:e}", data.sigma0, data.sigma)?;
    writeln!(out, "seed                {}", data.seed)?;
    writeln!(out, "wrote {} ({} values)", path.display(), data.values.len())?;
    Ok(path)
}

/// Files consumed and produced by [`cmd_reconstruct`].
#[derive(Debug, Clone, Default)]
pub struct ReconstructPaths {
    pub surrogate: Option<PathBuf>,
    pub measurements: Option<PathBuf>,
    /// Report location; the grid goes next to it as `<stem>-grid.csv`.
    pub output: Option<PathBuf>,
}

/// Reconstructs the diffusivity, writing a report and a plot grid.
pub fn cmd_reconstruct(
    config: &RunConfig,
    paths: &ReconstructPaths,
    lambda: Option<LambdaChoice>,
    out: &mut impl Write,
) -> Result<(PathBuf, PathBuf)> {
    let surrogate_path = paths.surrogate.clone().unwrap_or_else(|| config.output.surrogate.clone());
    let data_path = paths.measurements.clone().unwrap_or_else(|| config.output.measurements.clone());
    let (report_path, grid_path) = match &paths.output {
        Some(p) => {
            let stem = p.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
            (p.clone(), p.with_file_name(format!("{stem}-grid.csv")))
        }
        None => (config.output.report.clone(), config.output.grid.clone()),
    };
    let surrogate = read_surrogate(&surrogate_path)?;
    let data = read_measurements(&data_path)?;
    let choice = lambda.unwrap_or(config.lambda);
    let theta0 = config.theta0(surrogate.num_params());
    let run = reconstruct_from(&surrogate, &data, choice, &theta0, &config.gauss_newton)?;
    let meta = surrogate.metadata();
    let basis = build_partition(meta.dim, meta.per_axis, meta.degree)?;
    let extras = ReportExtras {
        target_misfit: run.target_misfit,
        morozov_accepted: run.morozov_accepted,
        elapsed_seconds: run.elapsed.as_secs_f64(),
        warnings: run.warnings.clone(),
    };
    write_report_to(std::io::BufWriter::new(std::fs::File::create(&report_path)?), &run.result, &extras)?;
    write_diffusivity_grid_to(std::io::BufWriter::new(std::fs::File::create(&grid_path)?), &basis, &run.result.theta, 101)?;
    writeln!(out, "lambda              {:e}", run.result.lambda)?;
    writeln!(out, "misfit              {:e}", run.result.misfit)?;
    if let Some(t) = run.target_misfit {
        writeln!(out, "noise level √Q·σ    {t:e}")?;
    }
    writeln!(out, "iterations          {} ({:?})", run.result.iterations, run.result.stop)?;
    writeln!(out, "elapsed             {:.2} s", run.elapsed.as_secs_f64())?;
    for w in &run.warnings {
        writeln!(out, "warning: {w}")?;
    }
    writeln!(out, "wrote {} and {}", report_path.display(), grid_path.display())?;
    Ok((report_path, grid_path))
}

/// Runs acceptance checks; `Ok(false)` when any fails.
pub fn cmd_verify(tier: Tier, only: Option<u8>, out: &mut impl Write) -> Result<bool> {
    let mut outcomes: Vec<CriterionOutcome> = Vec::new();
    let mut io_error = None;
    let mut print = |o: &CriterionOutcome| {
        if let Err(e) = writeln!(out, "{o}").and_then(|_| out.flush()) {
            io_error.get_or_insert(e);
        }
    };
    match only {
        Some(id) => {
            let o = run_criterion(id, tier);
            print(&o);
            outcomes.push(o);
        }
        None => outcomes = run_all(tier, &mut print),
    }
    if let Some(e) = io_error {
        return Err(e.into());
    }
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
    if failed.is_empty() {
        let n = outcomes.len();
        writeln!(out, "{n} of {n} {} passed", if n == 1 { "criterion" } else { "criteria" })?;
    } else {
        writeln!(out, "failed: {}", failed.join(", "))?;
    }
    Ok(failed.is_empty())
}

/// Describes a container, or the sizes implied by the config.
pub fn cmd_info(config: &RunConfig, surrogate: Option<&Path>, out: &mut impl Write) -> Result<()> {
    if let Some(path) = surrogate {
        let s = read_surrogate(path)?;
        let meta = s.metadata();
        writeln!(out, "container           {}", path.display())?;
        writeln!(out, "dimension           {}", meta.dim)?;
        writeln!(out, "splines             {} per axis, degree {}", meta.per_axis, meta.degree)?;
        writeln!(out, "P / N / n           {} / {} / {}", s.num_params(), s.num_basis(), s.degree_matrix().total_degree())?;
        writeln!(out, "interval            ({}, {})", s.interval().lo(), s.interval().hi())?;
        writeln!(out, "Q                   {} ({} points x {} times)", s.num_rows(), s.layout().num_points(), s.layout().num_times())?;
        writeln!(out, "mesh / δ / T        {} / {} / {}", meta.nodes_per_side, meta.delta, meta.final_time)?;
        return Ok(());
    }
    let f = &config.forward;
    let p = f.per_axis.pow(f.dim as u32);
    let n = total_degree_count(p, f.total_degree).ok_or(Error::IndexOverflow {
        vars: p,
        degree: f.total_degree,
    })?;
    let m = f.nodes_per_side.pow(f.dim as u32);
    writeln!(out, "dimension           {}", f.dim)?;
    writeln!(out, "P (parameters)      {p}")?;
    writeln!(out, "N (basis columns)   {n}")?;
    writeln!(out, "nnz(Λ)              {}", nnz_lambda(p, f.total_degree).unwrap_or(0))?;
    writeln!(out, "M (mesh nodes)      {m}")?;
    writeln!(out, "state size M·N      {} ({:.1} MB per copy)", m * n, (m * n * 8) as f64 / 1e6)?;
    writeln!(out, "time steps          {}", (f.final_time / f.delta).round())?;
    writeln!(out, "Q (measurements)    {}", f.layout.len())?;
    Ok(())
}
