//! Sweeps the two lowest buckling branches of a square plate, prints the
//! detected onsets, and writes the diagram to CSV and SVG.

use std::fs;

use vkplate::assembly::Operators;
use vkplate::continuation::{sweep_diagram, BranchSeed};
use vkplate::fespace::build_space;
use vkplate::mesh::build_mesh;
use vkplate::output::{diagram_svg, write_diagram_csv};

fn main() -> vkplate::Result<()> {
    let space = build_space(build_mesh(1.0, 10, 10)?, 2)?;
    let ops = Operators::build(&space);

    let seeds = [
        BranchSeed::new(1, 1, 1),
        BranchSeed::new(1, 1, -1),
        BranchSeed::new(2, 1, 1),
        BranchSeed::new(2, 1, -1),
    ];
    let diagram = sweep_diagram(&ops, (35.0, 70.0), 1.0, 0.0, &seeds, 1e-4)?;

    for (seed, onset) in seeds.iter().zip(&diagram.detected_bifurcations) {
        println!(
            "mode ({}, {}) sign {:+}: onset near lambda = {:.3}",
            seed.mode.0, seed.mode.1, seed.sign, onset
        );
    }

    fs::create_dir_all("out")?;
    write_diagram_csv("out/diagram.csv".as_ref(), &diagram, 0.0)?;
    let svg = diagram_svg(
        &diagram.branches,
        &diagram.trivial_branch,
        &diagram.detected_bifurcations,
        "square plate, peak deflection vs load",
    );
    fs::write("out/diagram.svg", svg)?;
    println!("wrote out/diagram.csv and out/diagram.svg");
    Ok(())
}
