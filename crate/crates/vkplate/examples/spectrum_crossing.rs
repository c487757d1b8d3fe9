//! Tracks the smallest stability eigenvalues of the flat state across a load
//! ramp and reports where each curve crosses zero.

use vkplate::assembly::Operators;
use vkplate::eigen::spectrum_vs_lambda;
use vkplate::fespace::build_space;
use vkplate::mesh::build_mesh;

fn main() -> vkplate::Result<()> {
    let space = build_space(build_mesh(1.0, 12, 12)?, 2)?;
    let ops = Operators::build(&space);

    let grid: Vec<f64> = (0..22).map(|i| 2.0 * i as f64).collect();
    let trace = spectrum_vs_lambda(&ops, &grid, 0.0, 2)?;

    for (c, curve) in trace.sigma_curves.iter().enumerate() {
        println!(
            "curve {c}: sigma({}) = {:.2}, sigma({}) = {:.2}",
            grid[0],
            curve[0],
            grid[grid.len() - 1],
            curve[curve.len() - 1]
        );
    }
    for crossing in &trace.crossings {
        println!(
            "curve {} crosses zero between lambda = {} and {}",
            crossing.curve, crossing.lower, crossing.upper
        );
    }
    Ok(())
}
