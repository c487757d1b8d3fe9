//! Full-order residual, block Jacobian, and Newton iteration for the
//! four-field system.
//!
//! The unknown X = (u, Δu, φ, Δφ) collects the deflection, its Laplacian,
//! the stress potential, and its Laplacian; splitting the two fourth-order
//! equations this way keeps every block a standard H¹ operator. The flat
//! vector layout is [u | lap_u | phi | lap_phi], each of interior length n.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_bracket, Operators};
use crate::error::{Result, VkError};
use crate::fespace::{FeSpace, ScalarField};
use crate::sparse::{factor_lu, CsrMatrix};
#[cfg(test)]
use crate::sparse::norm2;

/// Where a state came from; lifted reduced solutions carry the tag along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    FullOrder,
    LiftedFromRom,
}

/// One solution candidate of the four-field system.
#[derive(Clone, Debug)]
pub struct State {
    pub u: ScalarField,
    pub lap_u: ScalarField,
    pub phi: ScalarField,
    pub lap_phi: ScalarField,
    pub provenance: Provenance,
}

impl State {
    pub fn zero(space: &Arc<FeSpace>) -> State {
        State {
            u: ScalarField::zero(space),
            lap_u: ScalarField::zero(space),
            phi: ScalarField::zero(space),
            lap_phi: ScalarField::zero(space),
            provenance: Provenance::FullOrder,
        }
    }

    /// Builds a state after checking that all fields share one space.
    pub fn new(
        u: ScalarField,
        lap_u: ScalarField,
        phi: ScalarField,
        lap_phi: ScalarField,
        provenance: Provenance,
    ) -> Result<State> {
        let space = &u.space;
        if !(Arc::ptr_eq(space, &lap_u.space)
            && Arc::ptr_eq(space, &phi.space)
            && Arc::ptr_eq(space, &lap_phi.space))
        {
            return Err(VkError::InvalidArgument(
                "all four fields of a state must share one space".into(),
            ));
        }
        Ok(State { u, lap_u, phi, lap_phi, provenance })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.u.space
    }

    pub fn fields(&self) -> [&ScalarField; 4] {
        [&self.u, &self.lap_u, &self.phi, &self.lap_phi]
    }

    pub fn is_zero(&self) -> bool {
        self.fields().iter().all(|f| f.coeffs.iter().all(|&c| c == 0.0))
    }

    /// Flat coefficient vector [u | lap_u | phi | lap_phi].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(4 * self.u.coeffs.len());
        for f in self.fields() {
            flat.extend_from_slice(&f.coeffs);
        }
        flat
    }

    pub fn from_flat(space: &Arc<FeSpace>, flat: &[f64], provenance: Provenance) -> State {
        let n = space.interior_dofs.len();
        assert_eq!(flat.len(), 4 * n);
        let field = |k: usize| ScalarField {
            space: space.clone(),
            coeffs: flat[k * n..(k + 1) * n].to_vec(),
        };
        State { u: field(0), lap_u: field(1), phi: field(2), lap_phi: field(3), provenance }
    }

    /// The symmetry companion (−u, −Δu, φ, Δφ); solves whenever self does.
    pub fn z2_flip(&self) -> State {
        let neg = |f: &ScalarField| ScalarField {
            space: f.space.clone(),
            coeffs: f.coeffs.iter().map(|c| -c).collect(),
        };
        State {
            u: neg(&self.u),
            lap_u: neg(&self.lap_u),
            phi: self.phi.clone(),
            lap_phi: self.lap_phi.clone(),
            provenance: self.provenance,
        }
    }
}

/// Block H¹ seminorm √(Σ_fields xᵀA x) of a flat 4n vector.
pub fn block_h1_norm(a: &CsrMatrix, flat: &[f64]) -> f64 {
    let n = a.nrows;
    debug_assert_eq!(flat.len(), 4 * n);
    (0..4)
        .map(|k| {
            let x = &flat[k * n..(k + 1) * n];
            a.bilinear(x, x)
        })
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// Outcome summary of one Newton run.
#[derive(Clone, Debug)]
pub struct NewtonReport {
    pub converged: bool,
    pub iterations: usize,
    /// H¹ norm of δX per accepted step; length equals `iterations`.
    pub increment_norms: Vec<f64>,
}

fn check_space(ops: &Operators, state: &State) -> Result<()> {
    if !Arc::ptr_eq(&ops.space, state.space()) {
        return Err(VkError::InvalidArgument(
            "state and assembled operators live on different spaces".into(),
        ));
    }
    Ok(())
}

/// Residual blocks (A u + B Δu, A Δu + M(φ)u + λ D(ψ)u, A φ + B Δφ,
/// A Δφ − M(u)u); zero exactly at a discrete solution.
pub fn residual(ops: &Operators, state: &State, lambda: f64, psi: f64) -> Result<Vec<f64>> {
    let d = ops.load_matrix(psi);
    let brackets = state_brackets(ops, state)?;
    Ok(residual_with(ops, state, lambda, &d, brackets.as_ref()))
}

/// The two state-dependent bracket matrices (M(φ), M(u)), skipped entirely
/// for the zero state where both vanish.
fn state_brackets(ops: &Operators, state: &State) -> Result<Option<(CsrMatrix, CsrMatrix)>> {
    check_space(ops, state)?;
    if state.is_zero() {
        return Ok(None);
    }
    let m_phi = assemble_bracket(&ops.space, &state.phi)?;
    let m_u = assemble_bracket(&ops.space, &state.u)?;
    Ok(Some((m_phi, m_u)))
}

fn residual_with(
    ops: &Operators,
    state: &State,
    lambda: f64,
    d: &CsrMatrix,
    brackets: Option<&(CsrMatrix, CsrMatrix)>,
) -> Vec<f64> {
    let n = ops.interior_len();
    let mut r = vec![0.0; 4 * n];
    let (u, lu) = (&state.u.coeffs, &state.lap_u.coeffs);
    let (phi, lphi) = (&state.phi.coeffs, &state.lap_phi.coeffs);

    let add = |dst: &mut [f64], v: Vec<f64>, scale: f64| {
        for (d, s) in dst.iter_mut().zip(v) {
            *d += scale * s;
        }
    };

    add(&mut r[0..n], ops.a.apply(u), 1.0);
    add(&mut r[0..n], ops.b.apply(lu), 1.0);

    add(&mut r[n..2 * n], ops.a.apply(lu), 1.0);
    add(&mut r[n..2 * n], d.apply(u), lambda);

    add(&mut r[2 * n..3 * n], ops.a.apply(phi), 1.0);
    add(&mut r[2 * n..3 * n], ops.b.apply(lphi), 1.0);

    add(&mut r[3 * n..4 * n], ops.a.apply(lphi), 1.0);

    if let Some((m_phi, m_u)) = brackets {
        add(&mut r[n..2 * n], m_phi.apply(u), 1.0);
        add(&mut r[3 * n..4 * n], m_u.apply(u), -1.0);
    }
    r
}

/// Block Jacobian
/// [[A, B, 0, 0], [M(φ)+λD, A, M(u), 0], [0, 0, A, B], [−2M(u), 0, 0, A]];
/// the (4,1) block carries the factor 2 from differentiating M(u)u, using
/// the symmetry of the bracket.
pub fn jacobian(ops: &Operators, state: &State, lambda: f64, psi: f64) -> Result<CsrMatrix> {
    let d = ops.load_matrix(psi);
    let brackets = state_brackets(ops, state)?;
    Ok(jacobian_with(ops, lambda, &d, brackets.as_ref()))
}

fn jacobian_with(
    ops: &Operators,
    lambda: f64,
    d: &CsrMatrix,
    brackets: Option<&(CsrMatrix, CsrMatrix)>,
) -> CsrMatrix {
    let n = ops.interior_len();
    let mut triplets =
        Vec::with_capacity(8 * ops.a.values.len() + 2 * ops.b.values.len() + 4 * d.values.len());
    for k in 0..4 {
        ops.a.push_triplets(&mut triplets, k * n, k * n, 1.0);
    }
    ops.b.push_triplets(&mut triplets, 0, n, 1.0);
    ops.b.push_triplets(&mut triplets, 2 * n, 3 * n, 1.0);
    d.push_triplets(&mut triplets, n, 0, lambda);
    if let Some((m_phi, m_u)) = brackets {
        m_phi.push_triplets(&mut triplets, n, 0, 1.0);
        m_u.push_triplets(&mut triplets, n, 2 * n, 1.0);
        m_u.push_triplets(&mut triplets, 3 * n, 0, -2.0);
    }
    CsrMatrix::from_triplets(4 * n, 4 * n, &mut triplets)
}

/// Direct sparse solve with a certified relative residual; singular systems
/// (expected exactly at bifurcation points of the trivial branch) surface
/// as `SingularSystem`.
pub fn solve_linear(system: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    factor_lu(system)?.solve(rhs)
}

/// Newton iteration X ← X − J⁻¹G(X) from `guess`, stopping when the H¹
/// norm of the increment drops to `tol`.
///
/// A singular Jacobian mid-iteration is answered by perturbing the iterate
/// with a deterministic pseudo-random field of H¹ magnitude 1e-8, at most
/// twice, so sweeps can pass through critical loads; exhaustion returns the
/// last iterate with `converged = false` rather than an error.
pub fn newton_solve(
    ops: &Operators,
    guess: &State,
    lambda: f64,
    psi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(State, NewtonReport)> {
    if !(tol > 0.0) {
        return Err(VkError::InvalidArgument(format!(
            "newton tolerance must be positive, got {tol}"
        )));
    }
    check_space(ops, guess)?;
    let n = ops.interior_len();
    let d = ops.load_matrix(psi);

    let mut x = guess.to_flat();
    let provenance = guess.provenance;
    let mut increment_norms = Vec::new();
    let mut converged = false;
    let mut perturbations = 0usize;

    while increment_norms.len() < max_iter {
        let state = State::from_flat(&ops.space, &x, provenance);
        let brackets = state_brackets(ops, &state)?;
        let r = residual_with(ops, &state, lambda, &d, brackets.as_ref());
        let j = jacobian_with(ops, lambda, &d, brackets.as_ref());

        match solve_linear(&j, &r) {
            Ok(delta) => {
                for (xi, di) in x.iter_mut().zip(&delta) {
                    *xi -= di;
                }
                let norm = block_h1_norm(&ops.a, &delta);
                increment_norms.push(norm);
                if norm <= tol {
                    converged = true;
                    break;
                }
            }
            Err(VkError::SingularSystem(_)) if perturbations < 2 => {
                perturbations += 1;
                perturb(&ops.a, &mut x, lambda, psi, perturbations);
            }
            Err(VkError::SingularSystem(msg)) => {
                eprintln!(
                    "newton at lambda={lambda}, psi={psi}: jacobian still singular \
                     after {perturbations} perturbations ({msg})"
                );
                break;
            }
            Err(e) => return Err(e),
        }
    }

    debug_assert_eq!(x.len(), 4 * n);
    let state = State::from_flat(&ops.space, &x, provenance);
    let report = NewtonReport { converged, iterations: increment_norms.len(), increment_norms };
    Ok((state, report))
}

/// Adds a reproducible pseudo-random direction of H¹ magnitude 1e-8; the
/// seed mixes (λ, ψ, attempt) so reruns stay bitwise identical.
fn perturb(a: &CsrMatrix, x: &mut [f64], lambda: f64, psi: f64, attempt: usize) {
    use rand::SeedableRng;
    let seed = lambda
        .to_bits()
        .rotate_left(13)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ psi.to_bits().rotate_left(29)
        ^ attempt as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = block_h1_norm(a, &dir);
    if norm > 0.0 {
        let scale = 1e-8 / norm;
        for d in dir.iter_mut() {
            *d *= scale;
        }
    }
    for (xi, di) in x.iter_mut().zip(&dir) {
        *xi += di;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{build_space, interpolate};
    use crate::mesh::build_mesh;
    use std::f64::consts::PI;

    fn setup(ny: usize) -> Operators {
        let space = build_space(build_mesh(1.0, ny, ny).unwrap(), 2).unwrap();
        Operators::build(&space)
    }

    /// Deflection-mode lift: u = amplitude·sin(mπx/L)sin(nπy), rest zero.
    fn mode_guess(ops: &Operators, m: usize, n: usize, amplitude: f64) -> State {
        let l = ops.space.mesh.l;
        let u = interpolate(&ops.space, move |x, y| {
            amplitude * (m as f64 * PI * x / l).sin() * (n as f64 * PI * y).sin()
        });
        let mut state = State::zero(&ops.space);
        state.u = u;
        state
    }

    fn random_state(ops: &Operators, seed: u64, scale: f64) -> State {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = ops.interior_len();
        let flat: Vec<f64> = (0..4 * n).map(|_| rng.random_range(-scale..scale)).collect();
        State::from_flat(&ops.space, &flat, Provenance::FullOrder)
    }

    #[test]
    fn residual_of_trivial_state_vanishes() {
        let ops = setup(6);
        for (lambda, psi) in [(0.0, 0.0), (30.0, 0.0), (55.5, 1.3), (-7.0, 2.0)] {
            let r = residual(&ops, &State::zero(&ops.space), lambda, psi).unwrap();
            assert!(r.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn newton_from_zero_below_buckling_stays_trivial() {
        let ops = setup(8);
        let (state, report) =
            newton_solve(&ops, &State::zero(&ops.space), 30.0, 0.0, 1e-10, 20).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        assert!(state.is_zero());
    }

    #[test]
    fn newton_from_mode_lift_finds_nontrivial_branch() {
        // the lift must reach at least the branch amplitude; below it the
        // cubic terms are too weak and Newton drains into the flat state
        let ops = setup(10);
        let guess = mode_guess(&ops, 1, 1, 2.0);
        let (state, report) = newton_solve(&ops, &guess, 45.0, 0.0, 1e-10, 20).unwrap();
        assert!(report.converged);
        assert!(state.u.max_abs().0.abs() > 1e-4, "fell back to the trivial solution");

        let r = residual(&ops, &state, 45.0, 0.0).unwrap();
        assert!(norm2(&r) <= 1e-9);
    }

    #[test]
    fn negated_guess_gives_negated_solution() {
        let ops = setup(10);
        let (plus, _) = newton_solve(&ops, &mode_guess(&ops, 1, 1, 2.0), 45.0, 0.0, 1e-10, 20)
            .unwrap();
        let (minus, _) = newton_solve(&ops, &mode_guess(&ops, 1, 1, -2.0), 45.0, 0.0, 1e-10, 20)
            .unwrap();
        let max_sum = plus
            .u
            .coeffs
            .iter()
            .zip(&minus.u.coeffs)
            .map(|(a, b)| (a + b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_sum <= 1e-8, "u fields are not mirror images: {max_sum}");

        // the flipped state solves the system as-is
        let r = residual(&ops, &plus.z2_flip(), 45.0, 0.0).unwrap();
        assert!(norm2(&r) < 1e-10 * block_h1_norm(&ops.a, &plus.to_flat()).max(1.0));
    }

    #[test]
    fn increments_contract_quadratically() {
        let ops = setup(10);
        // tol sits above the roundoff floor so every recorded increment is
        // still governed by the quadratic contraction, not by noise
        let (_, report) =
            newton_solve(&ops, &mode_guess(&ops, 1, 1, 2.0), 50.0, 0.0, 1e-9, 20).unwrap();
        assert!(report.converged);
        let n = &report.increment_norms;
        assert!(n.len() >= 3, "need three increments, got {}", n.len());
        let tail = &n[n.len() - 3..];
        // log-ratio ≥ 1.7 means at least quadratic contraction
        let rate = (tail[1] / tail[2]).ln() / (tail[0] / tail[1]).ln();
        assert!(rate >= 1.7, "contraction rate {rate}, norms {tail:?}");
    }

    #[test]
    fn residual_is_quadratic_in_state() {
        // r(2X) − 2r(X) must equal exactly one extra copy of the bracket
        // blocks (0, M(φ)u, 0, −M(u)u)
        let ops = setup(6);
        let n = ops.interior_len();
        let x = random_state(&ops, 11, 0.8);
        let doubled = State::from_flat(
            &ops.space,
            &x.to_flat().iter().map(|v| 2.0 * v).collect::<Vec<_>>(),
            Provenance::FullOrder,
        );
        let r1 = residual(&ops, &x, 37.0, 0.5).unwrap();
        let r2 = residual(&ops, &doubled, 37.0, 0.5).unwrap();

        let m_phi = assemble_bracket(&ops.space, &x.phi).unwrap();
        let m_u = assemble_bracket(&ops.space, &x.u).unwrap();
        let bracket_u = m_phi.apply(&x.u.coeffs);
        let bracket_phi = m_u.apply(&x.u.coeffs);

        let scale = norm2(&r1).max(1.0);
        for i in 0..4 * n {
            let extra = r2[i] - 2.0 * r1[i];
            let expect = if i < n || (2 * n..3 * n).contains(&i) {
                0.0
            } else if i < 2 * n {
                2.0 * bracket_u[i - n]
            } else {
                -2.0 * bracket_phi[i - 3 * n]
            };
            assert!(
                (extra - expect).abs() <= 1e-11 * scale,
                "block entry {i}: {extra} vs {expect}"
            );
        }
    }

    #[test]
    fn jacobian_times_state_exceeds_residual_by_bracket_terms() {
        let ops = setup(6);
        let n = ops.interior_len();
        let x = random_state(&ops, 23, 0.6);
        let flat = x.to_flat();
        let jx = jacobian(&ops, &x, 42.0, 1.0).unwrap().apply(&flat);
        let r = residual(&ops, &x, 42.0, 1.0).unwrap();

        let m_phi = assemble_bracket(&ops.space, &x.phi).unwrap();
        let m_u = assemble_bracket(&ops.space, &x.u).unwrap();
        let bracket_u = m_phi.apply(&x.u.coeffs);
        let bracket_phi = m_u.apply(&x.u.coeffs);

        let scale = norm2(&jx).max(1.0);
        for i in 0..4 * n {
            let diff = jx[i] - r[i];
            let expect = if i < n || (2 * n..3 * n).contains(&i) {
                0.0
            } else if i < 2 * n {
                bracket_u[i - n]
            } else {
                -bracket_phi[i - 3 * n]
            };
            assert!(
                (diff - expect).abs() <= 1e-11 * scale,
                "block entry {i}: {diff} vs {expect}"
            );
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let ops = setup(5);
        let x = random_state(&ops, 5, 0.7);
        let w = random_state(&ops, 6, 1.0);
        let slope = fd_slope(&ops, &x, &w, 44.0, 0.8);
        assert!((slope - 1.0).abs() <= 0.2, "log-log slope {slope}");
    }

    /// Least-squares slope of log‖FD − JW‖ against log t; the residual is
    /// quadratic, so the directional FD error is exactly linear in t and the
    /// slope sits near one.
    pub(crate) fn fd_slope(ops: &Operators, x: &State, w: &State, lambda: f64, psi: f64) -> f64 {
        let flat_x = x.to_flat();
        let flat_w = w.to_flat();
        let r0 = residual(ops, x, lambda, psi).unwrap();
        let jw = jacobian(ops, x, lambda, psi).unwrap().apply(&flat_w);

        let mut pts = Vec::new();
        for k in 3..=7 {
            let t = 10.0f64.powi(-k);
            let shifted: Vec<f64> =
                flat_x.iter().zip(&flat_w).map(|(a, b)| a + t * b).collect();
            let xs = State::from_flat(&ops.space, &shifted, Provenance::FullOrder);
            let rt = residual(ops, &xs, lambda, psi).unwrap();
            let err = norm2(
                &rt.iter()
                    .zip(&r0)
                    .zip(&jw)
                    .map(|((rt, r0), jw)| (rt - r0) / t - jw)
                    .collect::<Vec<_>>(),
            );
            pts.push((t.ln(), err.ln()));
        }
        least_squares_slope(&pts)
    }

    pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn state_space_mismatch_rejected() {
        let ops = setup(4);
        let other = build_space(build_mesh(1.0, 5, 5).unwrap(), 2).unwrap();
        let state = State::zero(&other);
        assert!(matches!(
            residual(&ops, &state, 30.0, 0.0),
            Err(VkError::InvalidArgument(_))
        ));
        let s = ScalarField::zero(&ops.space);
        let o = ScalarField::zero(&other);
        assert!(State::new(s.clone(), s.clone(), o, s, Provenance::FullOrder).is_err());
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        let ops = setup(4);
        let z = State::zero(&ops.space);
        assert!(newton_solve(&ops, &z, 30.0, 0.0, 0.0, 5).is_err());
        assert!(newton_solve(&ops, &z, 30.0, 0.0, -1.0, 5).is_err());
    }
}

