//! Builds a desk-scale 2D surrogate, simulates noisy data for the smooth
//! target and reconstructs it with the discrepancy principle.
//!
//! Optional arguments: `<per_axis> <degree> <nodes_per_side> <delta> <sigma0>`.

use thermotomo::inverse::GaussNewtonOptions;
use thermotomo::pipeline::{build_surrogate, diffusivity_error, reconstruct, simulate, ForwardSetup, LambdaChoice, SimulationSetup, Target};

fn main() -> thermotomo::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |k: usize, d: &str| args.get(k).cloned().unwrap_or_else(|| d.to_string());
    let setup = ForwardSetup {
        per_axis: arg(0, "8").parse().unwrap(),
        degree: arg(1, "2").parse().unwrap(),
        nodes_per_side: arg(2, "25").parse().unwrap(),
        delta: arg(3, "0.001").parse().unwrap(),
        ..ForwardSetup::standard_2d()
    };
    let sigma0: f64 = arg(4, "0.001").parse().unwrap();

    let (surrogate, stats) = build_surrogate(&setup)?;
    println!(
        "surrogate: P={} N={} M={} nnz(S)={} eta={:.3} assembly {:.1?} stepping {:.1?}",
        stats.num_params, stats.num_basis, stats.num_nodes, stats.coupling_nnz, stats.eta, stats.assembly_time, stats.stepping_time
    );

    let target = Target::Smooth2d;
    let sim = SimulationSetup {
        dim: 2,
        nodes_per_side: 129,
        delta: 1e-3,
        final_time: 0.5,
        flux_rate: 20.0,
        layout: setup.layout.clone(),
        sigma0,
        seed: 7,
    };
    let (data, clean) = simulate(&sim, &target)?;
    println!("data: Q={} sigma={:.3e} sqrt(Q)*sigma={:.3e}", data.values.len(), data.sigma, (data.values.len() as f64).sqrt() * data.sigma);

    let basis = setup.basis()?;
    let rec = reconstruct(&surrogate, &data, LambdaChoice::Morozov, &GaussNewtonOptions::default())?;
    let r = &rec.result;
    let clean_misfit: f64 = surrogate
        .eval_u(&r.theta)?
        .iter()
        .zip(&clean)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    println!(
        "lambda={:.4e} misfit={:.4e} (target {:.4e}, accepted {:?}) clean misfit={:.4e} iterations={} in {:.2?}",
        r.lambda,
        r.misfit,
        rec.target_misfit.unwrap_or(f64::NAN),
        rec.morozov_accepted,
        clean_misfit,
        r.iterations,
        rec.elapsed
    );
    for w in &rec.warnings {
        println!("warning: {w}");
    }
    println!("relative L2 diffusivity error: {:.4}", diffusivity_error(&basis, &r.theta, &target, 101));
    Ok(())
}
