//! End-to-end acceptance runs, one line per numbered check: PASS or FAIL,
//! the measured value, the bound it is held to, and the wall time. The
//! checks share expensive artifacts through the suite, so they run in one
//! process without a harness; the exit code reports the overall verdict.

use vkplate::validate::{Suite, CHECK_IDS};

fn main() {
    let suite = Suite::new();
    let mut failed = 0;
    for id in CHECK_IDS {
        let result = suite.run(id).expect("unknown check id");
        println!("{}", result.line());
        if !result.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} of {} acceptance checks failed", CHECK_IDS.len());
        std::process::exit(1);
    }
    println!("all {} acceptance checks passed", CHECK_IDS.len());
}
