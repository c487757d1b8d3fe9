//! Solves the plate past its first critical load. Newton started from an
//! upward mode lift lands on the buckled state, the mirrored start lands on
//! its negative, and the flat start stays flat.
//!
//! The lift is scaled to the order of the expected deflection: this far
//! past the onset the buckled plate deflects by about two plate thicknesses,
//! and a much smaller start falls back into the flat saddle's basin.

use vkplate::assembly::Operators;
use vkplate::eigen::exact_eigenfunction;
use vkplate::fespace::{build_space, ScalarField};
use vkplate::mesh::build_mesh;
use vkplate::solver::{newton_solve, State};

fn main() -> vkplate::Result<()> {
    let space = build_space(build_mesh(1.0, 12, 12)?, 2)?;
    let ops = Operators::build(&space);
    let lambda = 50.0;

    let mode = exact_eigenfunction(1, 1, &space);
    let mut lift = State::zero(&space);
    lift.u = ScalarField {
        space: space.clone(),
        coeffs: mode.coeffs.iter().map(|c| 2.0 * c).collect(),
    };

    let (up, report) = newton_solve(&ops, &lift, lambda, 0.0, 1e-10, 20)?;
    println!(
        "upward lift:  peak deflection {:+.6} in {} iterations",
        up.u.max_abs().0,
        report.iterations
    );

    let (down, _) = newton_solve(&ops, &lift.z2_flip(), lambda, 0.0, 1e-10, 20)?;
    println!("mirror lift:  peak deflection {:+.6}", down.u.max_abs().0);

    let (flat, _) = newton_solve(&ops, &State::zero(&space), lambda, 0.0, 1e-10, 20)?;
    println!("flat start:   peak deflection {:+.6}", flat.u.max_abs().0);

    let worst = up
        .to_flat()
        .iter()
        .zip(down.z2_flip().to_flat())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("mirror defect {worst:.2e}");
    Ok(())
}
