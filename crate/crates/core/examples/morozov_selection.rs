//! Picking the regularization weight with the discrepancy principle.

use thermotomo::inverse::{gauss_newton, morozov_select, GaussNewtonOptions, Regularizer};
use thermotomo::pipeline::{build_surrogate, simulate, ForwardSetup, SimulationSetup, Target};

fn main() -> thermotomo::Result<()> {
    let setup = ForwardSetup {
        per_axis: 4,
        degree: 1,
        nodes_per_side: 25,
        delta: 0.002,
        ..ForwardSetup::standard_2d()
    };
    let (s, _) = build_surrogate(&setup)?;
    let sim = SimulationSetup {
        dim: 2,
        nodes_per_side: 65,
        delta: 0.002,
        final_time: 0.5,
        flux_rate: 20.0,
        layout: setup.layout.clone(),
        sigma0: 0.01,
        seed: 1,
    };
    let (data, _) = simulate(&sim, &Target::Smooth2d)?;
    let base = Regularizer::laplacian(2, setup.per_axis, 0.0)?;
    let theta0 = vec![1.25; s.num_params()];
    let opts = GaussNewtonOptions::default();

    for lambda in [1.0, 1e-2, 1e-4] {
        let r = gauss_newton(&s, &data.values, &base.with_lambda(lambda)?, &theta0, &opts)?;
        println!("λ = {lambda:.0e}: misfit {:.4e} after {} iterations ({:?})", r.misfit, r.iterations, r.stop);
    }

    let sel = morozov_select(&s, &data.values, data.sigma, &base, &theta0, &opts)?;
    println!("target √Q·σ = {:.4e}", sel.target);
    for p in &sel.probes {
        println!("  probe λ = {:.3e} -> misfit {:.4e}", p.lambda, p.misfit);
    }
    println!("chosen λ = {:.3e}, misfit {:.4e}, accepted {}, monotone {}", sel.lambda, sel.result.misfit, sel.accepted, sel.monotone);
    for w in &sel.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
