//! Parameter sweeps: branch tracing over the load λ, bifurcation detection,
//! and the two-parameter extension over the load shape ψ.
//!
//! Each branch follows one seeded mode through an ascending λ grid. While
//! the plate stays flat the guess is re-lifted from the seed at every step;
//! once the deflection exceeds the buckling threshold δ the sweep switches
//! to warm starts so the branch is followed continuously. A freshly lifted
//! solve joins the branch only if it matches the seeded mode; the lift is
//! scanned over an amplitude ladder, overshooting first for points far past
//! the onset and backing off after a capture by a foreign branch. The first
//! grid interval where the deflection appears is then refined by bisection
//! into a critical-load estimate.

use rayon::prelude::*;

use crate::assembly::Operators;
use crate::eigen::{buckling_eigs, exact_eigenfunction};
use crate::error::{Result, VkError};
use crate::fespace::ScalarField;
use crate::solver::{newton_solve, NewtonReport, State};

/// Newton settings used for every continuation solve.
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 20;
/// Every STORE_STRIDE-th converged point keeps its full state as a
/// snapshot candidate for the reduced-order offline phase.
const STORE_STRIDE: usize = 5;
/// Minimal signed mass-weighted cosine between a freshly seeded solve and
/// its seed mode. Near a foreign branch's birth the flat Jacobian is
/// singular and the Newton step is deflected along that critical mode, so
/// an unguarded lift gets captured by the just-born foreign branch and the
/// sweep reports its onset instead of the seeded one.
const MODE_IDENTITY_MIN: f64 = 0.7;
/// Amplitude ladder for fresh seeds, scanned top down. The branch deflection
/// grows like sqrt(λ/λ* − 1), so far past the onset a unit lift undershoots
/// the buckled state and Newton falls back to the flat saddle; the leading
/// overshoot rung reaches such points (Newton tolerates several times the
/// branch amplitude, not a fraction of it). The smaller rungs back off after
/// a foreign capture: near a foreign branch's birth a large lift is pulled
/// onto that branch, while a small one stays inside the trivial basin until
/// the seeded mode's own branch exists nearby. The terminal zero lift lands
/// on the flat solution exactly, so a point where every amplitude is
/// captured records the state of a family whose branch has not been born
/// yet, not the foreign branch.
const LIFT_BACKOFF: [f64; 5] = [4.0, 1.0, 0.25, 0.0625, 0.0];

/// Which mode to lift the initial guess from, how strongly, and to which
/// side of the symmetric pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchSeed {
    /// Half-wave counts (m, n) of the seeding mode.
    pub mode: (usize, usize),
    pub amplitude: f64,
    /// +1 or −1; the two signs trace mirror branches.
    pub sign: i8,
}

impl BranchSeed {
    pub fn new(m: usize, n: usize, sign: i8) -> BranchSeed {
        BranchSeed { mode: (m, n), amplitude: 1.0, sign }
    }

    fn validate(&self) -> Result<()> {
        if self.mode.0 < 1 || self.mode.1 < 1 {
            return Err(VkError::InvalidArgument("seed mode indices start at 1".into()));
        }
        if !(self.amplitude > 0.0) {
            return Err(VkError::InvalidArgument(format!(
                "seed amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        if self.sign != 1 && self.sign != -1 {
            return Err(VkError::InvalidArgument(format!(
                "seed sign must be +1 or -1, got {}",
                self.sign
            )));
        }
        Ok(())
    }
}

/// One λ station along a branch.
#[derive(Clone, Debug)]
pub struct BranchPoint {
    pub lambda: f64,
    pub psi: f64,
    /// Signed deflection at the dof of maximum modulus.
    pub ordinate: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Full state, kept on a stride for snapshot collection.
    pub state: Option<State>,
}

/// A traced solution family; λ strictly increases along `points`.
#[derive(Clone, Debug)]
pub struct Branch {
    pub seed: BranchSeed,
    pub points: Vec<BranchPoint>,
}

impl Branch {
    /// First converged point whose deflection reaches `delta`.
    pub fn first_buckled(&self, delta: f64) -> Option<usize> {
        self.points.iter().position(|p| p.converged && p.ordinate.abs() >= delta)
    }
}

/// Branches over a common grid plus the always-present flat solution and
/// the refined critical loads, one per branch that left it.
#[derive(Clone, Debug)]
pub struct BifurcationDiagram {
    pub branches: Vec<Branch>,
    /// (λ, 0) per grid point: the trivial solution exists everywhere.
    pub trivial_branch: Vec<(f64, f64)>,
    pub detected_bifurcations: Vec<f64>,
}

fn lambda_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(start < end) || !(step > 0.0) {
        return Err(VkError::InvalidArgument(format!(
            "invalid sweep range [{start}, {end}] with step {step}"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| start + i as f64 * step).collect())
}

/// Sweeps one branch over [λ_start, λ_end] in steps of dλ.
///
/// At each station the previous solution warm-starts Newton once the plate
/// has buckled (‖u‖∞ ≥ δ); before that, and after any failed solve, the
/// guess is reset to the seed lift. The lift puts amplitude·sign times the
/// closed-form mode into the deflection and leaves the other fields zero.
pub fn trace_branch(
    ops: &Operators,
    lambda_start: f64,
    lambda_end: f64,
    d_lambda: f64,
    psi: f64,
    seed: BranchSeed,
    delta: f64,
) -> Result<Branch> {
    seed.validate()?;
    let lift = seed_lift(ops, seed, &exact_eigenfunction(seed.mode.0, seed.mode.1, &ops.space));
    let grid = lambda_grid(lambda_start, lambda_end, d_lambda)?;
    trace_on_grid(ops, &grid, psi, seed, &lift, delta)
}

/// Scales a mode into a full seed state (deflection only).
fn seed_lift(ops: &Operators, seed: BranchSeed, mode: &ScalarField) -> State {
    let mut state = State::zero(&ops.space);
    let factor = seed.amplitude * seed.sign as f64;
    state.u = ScalarField {
        space: ops.space.clone(),
        coeffs: mode.coeffs.iter().map(|c| factor * c).collect(),
    };
    state
}

/// Signed cosine of u against the seed's (signed) mode in the mass inner
/// product; 0 when either side is numerically zero.
fn mode_match(ops: &Operators, u: &ScalarField, lift_u: &ScalarField) -> f64 {
    let bu = ops.b.apply(&u.coeffs);
    let uu: f64 = u.coeffs.iter().zip(&bu).map(|(a, b)| a * b).sum();
    let um: f64 = lift_u.coeffs.iter().zip(&bu).map(|(a, b)| a * b).sum();
    let bm = ops.b.apply(&lift_u.coeffs);
    let mm: f64 = lift_u.coeffs.iter().zip(&bm).map(|(a, b)| a * b).sum();
    if uu <= 0.0 || mm <= 0.0 {
        return 0.0;
    }
    um / (uu.sqrt() * mm.sqrt())
}

/// Whether a converged buckled state belongs to the seeded branch.
fn own_mode(ops: &Operators, state: &State, lift: &State) -> bool {
    mode_match(ops, &state.u, &lift.u) >= MODE_IDENTITY_MIN
}

/// Newton from the seed lift, scanning the amplitude ladder. Returns the
/// first converged buckled result on the seeded mode; otherwise the first
/// flat result, where a flat solve at a rung ≤ 1 ends the scan early (an
/// undershooting lift fell into the trivial basin, and every smaller rung
/// sits deeper in it), while a flat overshoot keeps descending. The
/// terminal zero lift guarantees a flat fallback.
fn seeded_solve(
    ops: &Operators,
    lambda: f64,
    psi: f64,
    lift: &State,
    delta: f64,
) -> Result<(State, NewtonReport)> {
    let mut fallback = None;
    for factor in LIFT_BACKOFF {
        let guess = if factor == 1.0 {
            lift.clone()
        } else {
            let mut scaled = State::zero(&ops.space);
            scaled.u = ScalarField {
                space: ops.space.clone(),
                coeffs: lift.u.coeffs.iter().map(|c| factor * c).collect(),
            };
            scaled
        };
        let (state, report) = newton_solve(ops, &guess, lambda, psi, NEWTON_TOL, NEWTON_MAX_ITER)?;
        let buckled = report.converged && state.u.max_abs().0.abs() >= delta;
        if buckled && own_mode(ops, &state, lift) {
            return Ok((state, report));
        }
        let flat = report.converged && !buckled;
        if flat && factor <= 1.0 {
            return Ok((state, report));
        }
        if fallback.is_none() || flat {
            fallback = Some((state, report));
        }
    }
    Ok(fallback.expect("the ladder is never empty"))
}

fn trace_on_grid(
    ops: &Operators,
    grid: &[f64],
    psi: f64,
    seed: BranchSeed,
    lift: &State,
    delta: f64,
) -> Result<Branch> {
    if !(delta > 0.0) {
        return Err(VkError::InvalidArgument(format!(
            "buckling threshold must be positive, got {delta}"
        )));
    }
    let mut points = Vec::with_capacity(grid.len());
    let mut previous: Option<State> = None;

    for (idx, &lambda) in grid.iter().enumerate() {
        let (mut state, mut report) = match &previous {
            Some(prev) => newton_solve(ops, prev, lambda, psi, NEWTON_TOL, NEWTON_MAX_ITER)?,
            None => seeded_solve(ops, lambda, psi, lift, delta)?,
        };
        let mut ordinate = state.u.max_abs().0;

        // A warm start from a barely-buckled state can fall back to the
        // flat solution: one λ step ahead the branch amplitude outgrows the
        // basin around the old iterate. Re-lifting from the seed recovers
        // the branch; the flat result is kept only if the retry agrees.
        if previous.is_some() && report.converged && ordinate.abs() < delta {
            let (retry_state, retry_report) = seeded_solve(ops, lambda, psi, lift, delta)?;
            if retry_report.converged
                && retry_state.u.max_abs().0.abs() >= delta
                && own_mode(ops, &retry_state, lift)
            {
                state = retry_state;
                report = retry_report;
                ordinate = state.u.max_abs().0;
            }
        }

        // warm-start only from a converged, visibly buckled state
        previous = (report.converged && ordinate.abs() >= delta).then(|| state.clone());

        let store = report.converged && idx % STORE_STRIDE == 0;
        points.push(BranchPoint {
            lambda,
            psi,
            ordinate,
            converged: report.converged,
            iterations: report.iterations,
            state: store.then_some(state),
        });
    }
    Ok(Branch { seed, points })
}

/// Traces one branch per seed and refines each departure from the flat
/// state into a critical-load estimate by bisection.
pub fn sweep_diagram(
    ops: &Operators,
    lambda_range: (f64, f64),
    d_lambda: f64,
    psi: f64,
    seeds: &[BranchSeed],
    delta: f64,
) -> Result<BifurcationDiagram> {
    if seeds.is_empty() {
        return Err(VkError::InvalidArgument("at least one seed is required".into()));
    }
    let grid = lambda_grid(lambda_range.0, lambda_range.1, d_lambda)?;

    let branches: Vec<Branch> = seeds
        .par_iter()
        .map(|&seed| {
            seed.validate()?;
            let mode = exact_eigenfunction(seed.mode.0, seed.mode.1, &ops.space);
            let lift = seed_lift(ops, seed, &mode);
            trace_on_grid(ops, &grid, psi, seed, &lift, delta)
        })
        .collect::<Result<_>>()?;

    let detected_bifurcations = branches
        .par_iter()
        .filter_map(|branch| {
            let idx = branch.first_buckled(delta)?;
            let hi = branch.points[idx].lambda;
            if idx == 0 {
                // already buckled at the left edge: λ* is outside the sweep
                return Some(Ok(hi));
            }
            let mode = exact_eigenfunction(branch.seed.mode.0, branch.seed.mode.1, &ops.space);
            let lift = seed_lift(ops, branch.seed, &mode);
            Some(refine_onset(ops, psi, &lift, delta, hi - d_lambda, hi, d_lambda / 8.0))
        })
        .collect::<Result<_>>()?;

    let trivial_branch = grid.iter().map(|&l| (l, 0.0)).collect();
    Ok(BifurcationDiagram { branches, trivial_branch, detected_bifurcations })
}

/// Shrinks (lo, hi] around the onset until hi − lo ≤ width; `hi` always
/// stays on the buckled side and is the reported estimate.
fn refine_onset(
    ops: &Operators,
    psi: f64,
    lift: &State,
    delta: f64,
    mut lo: f64,
    mut hi: f64,
    width: f64,
) -> Result<f64> {
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        let (state, report) = seeded_solve(ops, mid, psi, lift, delta)?;
        // a failed or off-branch solve counts as flat: the bracket keeps
        // the confirmed side
        if report.converged
            && state.u.max_abs().0.abs() >= delta
            && own_mode(ops, &state, lift)
        {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Traces the first buckling branch for each load shape ψ and returns
/// (ψ, branch, λ*(ψ)) rows.
///
/// The seeding mode is the computed first buckling mode at that ψ, not the
/// closed-form uniform-compression mode: once the load profile tilts, the
/// onset mode rotates away from sin·sin and a closed-form lift can miss
/// the branch entirely. The seed's amplitude and sign still apply, and its
/// (m, n) names the ψ = 0 limit.
pub fn sweep_2d(
    ops: &Operators,
    lambda_range: (f64, f64),
    d_lambda: f64,
    psi_grid: &[f64],
    seed: BranchSeed,
    delta: f64,
) -> Result<Vec<(f64, Branch, f64)>> {
    seed.validate()?;
    if psi_grid.is_empty() {
        return Err(VkError::InvalidArgument("empty load-shape grid".into()));
    }
    if psi_grid.iter().any(|&p| !(0.0..=2.0).contains(&p)) {
        return Err(VkError::InvalidArgument(
            "load-shape values must lie in [0, 2]".into(),
        ));
    }
    let grid = lambda_grid(lambda_range.0, lambda_range.1, d_lambda)?;

    psi_grid
        .par_iter()
        .map(|&psi| {
            let first = buckling_eigs(ops, psi, 1)?;
            let lift = seed_lift(ops, seed, &first[0].mode);
            let branch = trace_on_grid(ops, &grid, psi, seed, &lift, delta)?;
            let lambda_star = match branch.first_buckled(delta) {
                Some(0) => branch.points[0].lambda,
                Some(idx) => {
                    let hi = branch.points[idx].lambda;
                    refine_onset(ops, psi, &lift, delta, hi - d_lambda, hi, d_lambda / 8.0)?
                }
                None => {
                    return Err(VkError::DegenerateInput(format!(
                        "no buckling found for psi={psi} in [{}, {}]",
                        lambda_range.0, lambda_range.1
                    )))
                }
            };
            Ok((psi, branch, lambda_star))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::build_space;
    use crate::mesh::build_mesh;

    const DELTA: f64 = 1e-4;

    fn ops_for(l: f64, nx: usize, ny: usize) -> Operators {
        let space = build_space(build_mesh(l, nx, ny).unwrap(), 2).unwrap();
        Operators::build(&space)
    }

    #[test]
    fn first_branch_departs_between_39_and_40() {
        let ops = ops_for(1.0, 8, 8);
        let diagram = sweep_diagram(
            &ops,
            (35.0, 45.0),
            0.5,
            0.0,
            &[BranchSeed::new(1, 1, 1)],
            DELTA,
        )
        .unwrap();

        let branch = &diagram.branches[0];
        for p in &branch.points {
            assert!(p.converged, "Newton failed at lambda {}", p.lambda);
            if p.lambda <= 39.0 {
                assert!(p.ordinate.abs() < DELTA, "flat region buckled at {}", p.lambda);
            }
            if p.lambda >= 40.0 {
                assert!(p.ordinate.abs() >= DELTA, "no deflection at {}", p.lambda);
            }
        }
        // deflection grows with the load past the onset
        let post: Vec<f64> = branch
            .points
            .iter()
            .filter(|p| p.lambda >= 40.0)
            .map(|p| p.ordinate.abs())
            .collect();
        assert!(post.windows(2).all(|w| w[1] > w[0]));

        assert_eq!(diagram.detected_bifurcations.len(), 1);
        let star = diagram.detected_bifurcations[0];
        assert!((39.0..=40.0).contains(&star), "detected onset {star}");
        // bisection narrows the estimate to dλ/8 above the true onset
        let eig = buckling_eigs(&ops, 0.0, 1).unwrap()[0].value;
        assert!(star >= eig - 1e-6 && star - eig <= 0.5 / 8.0 + 1e-9, "onset {star} vs eigenvalue {eig}");
    }

    #[test]
    fn mirrored_seed_negates_ordinates() {
        let ops = ops_for(1.0, 8, 8);
        let up = trace_branch(&ops, 35.0, 45.0, 0.5, 0.0, BranchSeed::new(1, 1, 1), DELTA)
            .unwrap();
        let down = trace_branch(&ops, 35.0, 45.0, 0.5, 0.0, BranchSeed::new(1, 1, -1), DELTA)
            .unwrap();
        for (a, b) in up.points.iter().zip(&down.points) {
            assert!(a.converged && b.converged);
            assert!(
                (a.ordinate + b.ordinate).abs() <= 1e-8,
                "asymmetry at lambda {}: {} vs {}",
                a.lambda,
                a.ordinate,
                b.ordinate
            );
        }
    }

    #[test]
    fn sweep_below_first_eigenvalue_stays_flat() {
        let ops = ops_for(1.0, 8, 8);
        let diagram = sweep_diagram(
            &ops,
            (35.0, 38.0),
            0.5,
            0.0,
            &[BranchSeed::new(1, 1, 1), BranchSeed::new(1, 1, -1)],
            DELTA,
        )
        .unwrap();
        for branch in &diagram.branches {
            assert!(branch.points.iter().all(|p| p.ordinate.abs() < DELTA));
        }
        assert!(diagram.detected_bifurcations.is_empty());
        assert_eq!(diagram.trivial_branch.len(), 7);
        assert!(diagram.trivial_branch.iter().all(|&(_, o)| o == 0.0));
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let ops = ops_for(1.0, 6, 6);
        let once = trace_branch(&ops, 38.0, 44.0, 1.0, 0.0, BranchSeed::new(1, 1, 1), DELTA)
            .unwrap();
        let twice = trace_branch(&ops, 38.0, 44.0, 1.0, 0.0, BranchSeed::new(1, 1, 1), DELTA)
            .unwrap();
        for (a, b) in once.points.iter().zip(&twice.points) {
            assert!(a.ordinate == b.ordinate, "ordinates differ at lambda {}", a.lambda);
            assert_eq!(a.iterations, b.iterations);
        }
    }

    #[test]
    fn states_are_stored_on_the_stride() {
        let ops = ops_for(1.0, 6, 6);
        let branch = trace_branch(&ops, 35.0, 45.0, 0.5, 0.0, BranchSeed::new(1, 1, 1), DELTA)
            .unwrap();
        for (idx, p) in branch.points.iter().enumerate() {
            assert_eq!(p.state.is_some(), idx % STORE_STRIDE == 0 && p.converged);
        }
        assert!(branch.points.windows(2).all(|w| w[0].lambda < w[1].lambda));
    }

    #[test]
    fn rejects_invalid_arguments() {
        let ops = ops_for(1.0, 4, 4);
        let seed = BranchSeed::new(1, 1, 1);
        assert!(trace_branch(&ops, 45.0, 35.0, 0.5, 0.0, seed, DELTA).is_err());
        assert!(trace_branch(&ops, 35.0, 45.0, -0.5, 0.0, seed, DELTA).is_err());
        assert!(trace_branch(&ops, 35.0, 45.0, 0.5, 0.0, seed, 0.0).is_err());

        let bad_amp = BranchSeed { amplitude: 0.0, ..seed };
        assert!(trace_branch(&ops, 35.0, 45.0, 0.5, 0.0, bad_amp, DELTA).is_err());
        let bad_sign = BranchSeed { sign: 2, ..seed };
        assert!(trace_branch(&ops, 35.0, 45.0, 0.5, 0.0, bad_sign, DELTA).is_err());
        let bad_mode = BranchSeed::new(0, 1, 1);
        assert!(trace_branch(&ops, 35.0, 45.0, 0.5, 0.0, bad_mode, DELTA).is_err());

        assert!(sweep_diagram(&ops, (35.0, 45.0), 0.5, 0.0, &[], DELTA).is_err());
        assert!(sweep_2d(&ops, (35.0, 45.0), 0.5, &[0.0, 2.5], seed, DELTA).is_err());
        assert!(sweep_2d(&ops, (35.0, 45.0), 0.5, &[], seed, DELTA).is_err());
    }

    #[test]
    fn two_parameter_rows_match_eigenvalues() {
        let ops = ops_for(1.0, 8, 8);
        let rows = sweep_2d(
            &ops,
            (35.0, 85.0),
            1.0,
            &[0.0, 1.0],
            BranchSeed::new(1, 1, 1),
            DELTA,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        for (psi, branch, star) in &rows {
            let eig = buckling_eigs(&ops, *psi, 1).unwrap()[0].value;
            assert!(
                (star - eig).abs() <= 0.02 * eig,
                "psi={psi}: detected {star} vs eigenvalue {eig}"
            );
            assert!(branch.points.iter().any(|p| p.ordinate.abs() >= DELTA));
        }
        // tilting the load toward one edge raises the first critical load
        assert!(rows[1].2 > rows[0].2);
    }
}
