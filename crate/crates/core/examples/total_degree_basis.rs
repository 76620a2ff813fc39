//! Total-degree multi-indices, Legendre polynomials on the parameter box and
//! the triple-product coupling matrices.

use thermotomo::spectral::{assemble_all_y, eval_basis_jacobian, eval_phi, nnz_lambda, total_degree_indices, ParameterInterval};

fn main() -> thermotomo::Result<()> {
    let e = ParameterInterval::new(0.5, 2.0)?;
    let lambda = total_degree_indices(3, 2)?;
    println!("P = 3, n = 2: {} multi-indices", lambda.len());
    for j in 0..lambda.len() {
        println!("  {j:>2}: {:?}", lambda.dense_row(j));
    }

    for (p, n) in [(196, 2), (216, 2)] {
        let big = total_degree_indices(p, n)?;
        println!("P = {p}, n = {n}: N = {}, nnz = {} (closed form {:?})", big.len(), big.nnz(), nnz_lambda(p, n));
    }

    let ys = assemble_all_y(&lambda, &e);
    for (p, y) in ys.iter().enumerate() {
        println!("Y({p}): diagonal {}, {} off-diagonal entries", y.diagonal, y.offdiag_nnz());
    }

    let theta = [0.9, 1.25, 1.7];
    let phi = eval_phi(&lambda, &e, &theta)?;
    let jac = eval_basis_jacobian(&lambda, &e, &theta)?;
    println!("φ(θ) = {:?}", phi.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    println!("∂φ/∂θ has {} nonzeros (same pattern as the multi-index table)", jac.nnz());
    Ok(())
}
