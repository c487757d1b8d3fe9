//! Sweeps the tilt parameter of the in-plane load profile and reports how
//! the first critical load moves as compression concentrates near one edge.

use vkplate::assembly::Operators;
use vkplate::continuation::{sweep_2d, BranchSeed};
use vkplate::fespace::build_space;
use vkplate::mesh::build_mesh;

fn main() -> vkplate::Result<()> {
    let space = build_space(build_mesh(1.0, 8, 8)?, 2)?;
    let ops = Operators::build(&space);

    let psi_grid = [0.0, 0.5, 1.0, 1.5, 2.0];
    let rows = sweep_2d(&ops, (35.0, 265.0), 2.5, &psi_grid, BranchSeed::new(1, 1, 1), 1e-4)?;

    println!("tilt  critical load");
    for (psi, _branch, lambda_star) in &rows {
        println!("{psi:>4}  {lambda_star:>9.3}");
    }
    Ok(())
}
