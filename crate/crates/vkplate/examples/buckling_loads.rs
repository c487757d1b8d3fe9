//! Computes the first buckling loads of a uniformly compressed square plate
//! and compares them against the closed-form values (m + n²/m)²·π²/L².

use vkplate::assembly::Operators;
use vkplate::eigen::{buckling_eigs, exact_eigenvalue};
use vkplate::fespace::build_space;
use vkplate::mesh::build_mesh;

fn main() -> vkplate::Result<()> {
    let space = build_space(build_mesh(1.0, 16, 16)?, 2)?;
    let ops = Operators::build(&space);

    let pairs = buckling_eigs(&ops, 0.0, 3)?;
    let exact = [
        exact_eigenvalue(1, 1, 1.0),
        exact_eigenvalue(2, 1, 1.0),
        exact_eigenvalue(3, 1, 1.0),
    ];

    println!("square plate, 16x16 quadratic elements, {} unknowns", ops.interior_len());
    for (pair, exact) in pairs.iter().zip(exact) {
        println!(
            "  lambda = {:>10.5}   exact = {:>10.5}   rel err = {:.2e}",
            pair.value,
            exact,
            (pair.value - exact).abs() / exact
        );
    }
    Ok(())
}
