//! On a 2:1 plate the (1,1) and (4,1) modes buckle at the same load, so the
//! second critical value is double. Verifies the computed cluster.

use vkplate::assembly::Operators;
use vkplate::eigen::{buckling_eigs, cluster_multiplicities, exact_eigenvalue};
use vkplate::fespace::build_space;
use vkplate::mesh::build_mesh;

fn main() -> vkplate::Result<()> {
    let space = build_space(build_mesh(2.0, 32, 16)?, 2)?;
    let ops = Operators::build(&space);

    let pairs = buckling_eigs(&ops, 0.0, 4)?;
    let values: Vec<f64> = pairs.iter().map(|p| p.value).collect();
    let mults = cluster_multiplicities(&values, 1e-3);

    println!("2:1 plate, first four buckling loads:");
    for (v, m) in values.iter().zip(&mults) {
        println!("  lambda = {v:>10.5}   multiplicity {m}");
    }
    println!(
        "closed form: (1,1) and (4,1) coincide at {:.5}",
        exact_eigenvalue(1, 1, 2.0)
    );
    assert_eq!(exact_eigenvalue(1, 1, 2.0), exact_eigenvalue(4, 1, 2.0));
    Ok(())
}
