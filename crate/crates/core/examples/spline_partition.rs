//! Tensor-product B-splines forming a partition of unity, and the
//! diffusivity they parametrize.

use thermotomo::pipeline::Target;
use thermotomo::splines::{build_partition, sample_field_error, sample_grid};

fn main() -> thermotomo::Result<()> {
    let basis = build_partition(2, 6, 2)?;
    println!("{} quadratic splines, knots {:?}", basis.len(), basis.knots());

    let x = [0.3, 0.71];
    let active = basis.evaluate_nonzero(&x);
    let total: f64 = active.iter().map(|(_, v)| v).sum();
    println!("{} splines are nonzero at {x:?}; their values sum to {total}", active.len());

    // coefficients sampled from the target at the spline centres
    let target = Target::Smooth2d;
    let theta: Vec<f64> = (0..basis.len())
        .map(|p| {
            let idx = basis.multi_index(p);
            let c: Vec<f64> = (0..2)
                .map(|k| {
                    let (a, b) = basis.axis_support(idx[k]);
                    (0.5 * (a + b)).clamp(0.0, 1.0)
                })
                .collect();
            target.eval(&c)
        })
        .collect();
    let grid = sample_grid(2, 101);
    let err = sample_field_error(&basis, &theta, |x| target.eval(x), &grid);
    println!("a(x; θ) at {x:?} = {:.4}, target {:.4}", basis.evaluate_diffusivity(&theta, &x), target.eval(&x));
    println!("relative L² distance to the target on a 101² grid: {err:.4}");
    Ok(())
}
