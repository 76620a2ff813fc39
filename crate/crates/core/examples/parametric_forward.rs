//! Semi-implicit stepping of the parametric heat equation and a check
//! against a direct solve with one fixed diffusivity.

use thermotomo::fem::ProblemSpec;
use thermotomo::mesh::build_mesh;
use thermotomo::spectral::{eval_phi, total_degree_indices, ParameterInterval};
use thermotomo::splines::build_partition;
use thermotomo::stepper::{combine_parts, fixed_coefficient_solve, semi_implicit_solve, stability_probe, ParametricOperator, TimeScheme};

fn main() -> thermotomo::Result<()> {
    let mesh = build_mesh(2, 17)?;
    let basis = build_partition(2, 3, 1)?;
    let e = ParameterInterval::new(0.5, 2.0)?;
    let lambda = total_degree_indices(basis.len(), 2)?;
    let op = ParametricOperator::assemble(&mesh, &basis, &lambda, &e)?;
    println!("{op:?}, nnz(S) = {}", op.coupling_nnz());

    let problem = ProblemSpec::balanced_fluxes(2, 20.0, 0.5)?;
    let delta = 1e-3;
    let times = [0.1, 0.5];
    let snaps = semi_implicit_solve(&op, &mesh, &problem, delta, &times)?;

    // evaluate the polynomial expansion at θ and compare with a direct solve
    let theta: Vec<f64> = (0..basis.len()).map(|p| 0.7 + 0.1 * p as f64).collect();
    let phi = eval_phi(&lambda, &e, &theta)?;
    let m = mesh.num_nodes();
    let stiffness = combine_parts(op.parts(), &theta)?;
    let scheme = TimeScheme::SemiImplicit {
        mu: op.mu(),
        reference: op.laplace(),
    };
    let direct = fixed_coefficient_solve(&mesh, op.mass(), &stiffness, &problem, delta, &times, scheme)?;
    for (k, t) in times.iter().enumerate() {
        let mut u = vec![0.0; m];
        for (j, w) in phi.iter().enumerate() {
            for (ui, s) in u.iter_mut().zip(snaps.column(k, j)) {
                *ui += w * s;
            }
        }
        let diff: f64 = u.iter().zip(&direct[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let size: f64 = direct[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("t = {t}: expansion vs direct solve, relative difference {:.3e}", diff / size);
    }

    let norms = stability_probe(&op, &mesh, &problem, 0.1)?;
    println!("δ = 0.1 stays bounded: {norms:.3?}");
    Ok(())
}
