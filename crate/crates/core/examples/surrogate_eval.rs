//! Boundary-trace surrogate: evaluation, Jacobian and column truncation.

use thermotomo::pipeline::{build_surrogate, ForwardSetup};

fn main() -> thermotomo::Result<()> {
    let setup = ForwardSetup {
        per_axis: 4,
        degree: 1,
        nodes_per_side: 13,
        delta: 0.005,
        ..ForwardSetup::standard_2d()
    };
    let (s, stats) = build_surrogate(&setup)?;
    println!("Q = {}, N = {}, built in {:.2?}", s.num_rows(), s.num_basis(), stats.assembly_time + stats.stepping_time);

    let theta = vec![1.1; s.num_params()];
    let u = s.eval_u(&theta)?;
    let j = s.eval_ju(&theta)?;
    println!("U(θ) at the first point over time: {:?}", (0..5).map(|k| format!("{:.4}", u[k * 36])).collect::<Vec<_>>());
    println!("J_U is {} x {}, largest entry {:.3e}", j.nrows(), j.ncols(), j.abs().max());

    let mut norms: Vec<f64> = s.column_norms();
    norms.sort_by(|a, b| b.total_cmp(a));
    println!("largest column norms: {:?}", norms.iter().take(4).map(|v| format!("{v:.3e}")).collect::<Vec<_>>());
    for keep in [17, 50, s.num_basis()] {
        let t = s.truncate(keep)?;
        let ut = t.eval_u(&theta)?;
        let err: f64 = ut.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        println!("keep {keep:>3} columns: ‖U_keep − U‖ = {err:.3e}");
    }
    println!("θ outside the box is flagged: {}", s.extrapolates(&vec![2.5; s.num_params()]));
    Ok(())
}
