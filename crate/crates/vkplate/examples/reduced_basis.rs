//! Trains a reduced basis on one buckling branch, then replays the branch
//! with the reduced model and reports the worst deflection error per width.

use vkplate::assembly::Operators;
use vkplate::continuation::{trace_branch, BranchSeed};
use vkplate::fespace::build_space;
use vkplate::mesh::build_mesh;
use vkplate::rom::{collect_snapshots, pod, project_operators, rb_error_ladder};

fn main() -> vkplate::Result<()> {
    let space = build_space(build_mesh(1.0, 8, 8)?, 2)?;
    let ops = Operators::build(&space);

    let seed = BranchSeed::new(1, 1, 1);
    let branch = trace_branch(&ops, 40.0, 60.0, 0.25, 0.0, seed, 1e-4)?;

    let snapshots = collect_snapshots(std::slice::from_ref(&branch), 1)?;
    println!("{} snapshots collected", snapshots.len());

    let basis = pod(&ops, &snapshots, 6, 1e-10)?;
    let red = project_operators(&ops, &basis)?;
    println!("basis width {} (energy tail {:.1e})", basis.n, 1e-10);

    // replay at off-grid loads: half-integer stations were never trained on
    let sample: Vec<f64> = (0..20).map(|i| 40.5 + i as f64).collect();
    let widths: Vec<usize> = (1..=basis.n).collect();
    let rows = rb_error_ladder(&ops, &basis, &red, &branch, &sample, 0.0, &widths)?;

    for row in &rows {
        println!(
            "  N = {}   max deflection error = {:.3e}   online {:.3} ms vs full {:.1} ms",
            row.n, row.value, row.t_online_ms, row.t_full_ms
        );
    }
    Ok(())
}
