//! Structured simplicial meshes and the finite element matrices on them.

use thermotomo::fem::{assemble_laplace, assemble_mass, assemble_stiffness, BoundaryFlux};
use thermotomo::fem::assemble_boundary_load;
use thermotomo::mesh::build_mesh;

fn main() -> thermotomo::Result<()> {
    for (dim, nodes) in [(2, 5), (3, 4)] {
        let mesh = build_mesh(dim, nodes)?;
        let mass = assemble_mass(&mesh);
        let laplace = assemble_laplace(&mesh);
        let volume: f64 = mass.values().iter().sum();
        println!(
            "{dim}D, {nodes} nodes per side: {} nodes, {} elements, {} boundary facets",
            mesh.num_nodes(),
            mesh.num_elements(),
            mesh.boundary_facets().len()
        );
        println!("  mass nnz {} (entries sum to the volume {volume:.12})", mass.nnz());
        let worst = laplace.row_sums().iter().fold(0.0f64, |m, r| m.max(r.abs()));
        println!("  stiffness nnz {}, half bandwidth {}, max |row sum| {worst:.1e}", laplace.nnz(), laplace.half_bandwidth());

        // a ≡ 2 gives exactly twice the plain Laplacian
        let doubled = assemble_stiffness(&mesh, |_| 2.0, 2);
        let diff = doubled.linear_combination(1.0, &laplace, -2.0)?.frobenius_norm();
        println!("  ‖K(2) − 2K(1)‖_F = {diff:.1e}");

        let flux = BoundaryFlux::opposing_faces(dim, 20.0);
        let load = assemble_boundary_load(&mesh, &flux, 0.5);
        println!("  net boundary load at t = 0.5: {:.1e}", load.iter().sum::<f64>());
    }
    Ok(())
}
