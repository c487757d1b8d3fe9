//! Buckling eigenproblem and spectral tracking along the load parameter.
//!
//! Two spectral views of the same linearized operator:
//! `buckling_eigs` treats the load λ as the eigenvalue of the Schur pencil
//! S u = λ D(ψ) u with S = A B⁻¹ A, while `spectrum_vs_lambda` freezes λ and
//! asks for the near-zero spectrum of K(λ) = S − λ D(ψ) against the mass B.
//! The first gives critical loads directly, the second shows each curve
//! σ(λ) descending through zero exactly at those loads.
//!
//! Both solvers run blocked inverse iteration in the B inner product with a
//! few guard vectors, so clusters (the rectangle has an exact double
//! eigenvalue) and the sign-symmetric spectra of indefinite load profiles
//! converge as a block instead of flapping between tied magnitudes.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::assembly::Operators;
use crate::error::{Result, VkError};
use crate::fespace::{interpolate, FeSpace, ScalarField};
use crate::sparse::{factor_llt, factor_lu, norm2, CsrMatrix};
use std::sync::Arc;

/// Critical load with its deflection mode, normalized to unit H¹ seminorm
/// and signed so the first interior coefficient above 1e-8 is positive.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    pub mode: ScalarField,
}

/// Sign change of one σ curve between two grid points; `upper` is the
/// reported crossing load.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub curve: usize,
    pub lower: f64,
    pub upper: f64,
}

/// σ curves over a λ grid. Curve identity follows mode overlap between
/// consecutive grid points, not value order, so curves may cross.
#[derive(Clone, Debug)]
pub struct SpectrumTrace {
    pub lambda_grid: Vec<f64>,
    /// One row per tracked curve, one column per grid point.
    pub sigma_curves: Vec<Vec<f64>>,
    pub crossings: Vec<Crossing>,
}

/// Closed-form critical load (π/L)²(m + n²L²/m)² of the simply supported
/// strip [0,L]×[0,1] under uniform axial compression.
pub fn exact_eigenvalue(m: usize, n: usize, l: f64) -> f64 {
    assert!(m >= 1 && n >= 1, "mode indices start at 1");
    assert!(l > 0.0, "plate length must be positive");
    let (m, n) = (m as f64, n as f64);
    let factor = m + n * n * l * l / m;
    (PI / l).powi(2) * factor * factor
}

/// Interpolant of the closed-form mode sin(mπx/L)sin(nπy).
pub fn exact_eigenfunction(m: usize, n: usize, space: &Arc<FeSpace>) -> ScalarField {
    assert!(m >= 1 && n >= 1, "mode indices start at 1");
    let l = space.mesh.l;
    interpolate(space, move |x, y| {
        (m as f64 * PI * x / l).sin() * (n as f64 * PI * y).sin()
    })
}

const EIG_TOL: f64 = 1e-8;
const EIG_CAP: usize = 500;

/// Smallest k positive buckling loads of S u = λ D(ψ) u, sorted ascending.
///
/// The Schur complement S = A B⁻¹ A is never formed: inverse iteration
/// applies S⁻¹ D = A⁻¹ B A⁻¹ D through the Cholesky factor of A, and the
/// Rayleigh-Ritz step applies S itself through the factor of B.
pub fn buckling_eigs(ops: &Operators, psi: f64, k: usize) -> Result<Vec<EigenPair>> {
    buckling_eigs_salted(ops, psi, k, 0)
}

/// As `buckling_eigs`, with an extra salt mixed into the seed of the random
/// starting subspace. The converged values are salt-independent; the salt
/// only varies the (deterministic) iteration path for reproducibility runs.
pub fn buckling_eigs_salted(ops: &Operators, psi: f64, k: usize, salt: u64) -> Result<Vec<EigenPair>> {
    let n = ops.interior_len();
    if k == 0 || k > n {
        return Err(VkError::InvalidArgument(format!(
            "requested {k} eigenvalues from a space with {n} interior dofs"
        )));
    }
    let a_fact = factor_llt(&ops.a)?;
    let b_fact = factor_llt(&ops.b)?;
    let d = ops.load_matrix(psi);

    let inv_apply = |x: &[f64]| -> Result<Vec<f64>> {
        let t = a_fact.solve(&d.apply(x))?;
        a_fact.solve(&ops.b.apply(&t))
    };
    let lhs_apply = |x: &[f64]| -> Result<Vec<f64>> {
        let t = b_fact.solve(&ops.a.apply(x))?;
        Ok(ops.a.apply(&t))
    };
    let rhs_apply = |x: &[f64]| d.apply(x);

    let (values, vectors) = subspace_solve(
        n,
        k,
        &inv_apply,
        &lhs_apply,
        &rhs_apply,
        &ops.b,
        Select::SmallestPositiveLambda,
        0x00b1_5eed ^ psi.to_bits() ^ (k as u64).rotate_left(32) ^ salt,
    )?;

    Ok(values
        .into_iter()
        .zip(vectors)
        .map(|(value, coeffs)| EigenPair { value, mode: normalized_mode(&ops.space, coeffs) })
        .collect())
}

/// Scales to unit H¹ seminorm and fixes the sign convention.
fn normalized_mode(space: &Arc<FeSpace>, coeffs: Vec<f64>) -> ScalarField {
    let mut mode = ScalarField { space: space.clone(), coeffs };
    let norm = mode.h1_seminorm();
    if norm > 0.0 {
        for c in mode.coeffs.iter_mut() {
            *c /= norm;
        }
    }
    if let Some(first) = mode.coeffs.iter().find(|c| c.abs() > 1e-8) {
        if *first < 0.0 {
            for c in mode.coeffs.iter_mut() {
                *c = -*c;
            }
        }
    }
    mode
}

/// Tracks the k eigenvalue curves of K(λ) u = σ B u nearest zero across an
/// ascending λ grid. Curves keep their identity by B-overlap matching with
/// the previous grid point; each sign change is recorded as a crossing.
pub fn spectrum_vs_lambda(
    ops: &Operators,
    lambda_grid: &[f64],
    psi: f64,
    k: usize,
) -> Result<SpectrumTrace> {
    let n = ops.interior_len();
    if lambda_grid.is_empty() {
        return Err(VkError::InvalidArgument("empty lambda grid".into()));
    }
    if !lambda_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(VkError::InvalidArgument(
            "lambda grid must be strictly ascending".into(),
        ));
    }
    if k == 0 || k + 2 > n {
        return Err(VkError::InvalidArgument(format!(
            "cannot track {k} curves on {n} interior dofs"
        )));
    }
    // two spare candidates absorb curves drifting out of the k-window
    let k_cand = k + 2;

    let b_fact = factor_llt(&ops.b)?;
    let d = ops.load_matrix(psi);

    let mut sigma_curves = vec![Vec::with_capacity(lambda_grid.len()); k];
    let mut tracked: Vec<Vec<f64>> = Vec::new();
    let mut carry: Option<Vec<Vec<f64>>> = None;

    for (gi, &lambda) in lambda_grid.iter().enumerate() {
        // K(λ)u = r solved in the sparse 2n form
        // [A, −B; −λD, A](u,w) = (0,r) with w = B⁻¹Au eliminated implicitly
        let mut triplets = Vec::new();
        ops.a.push_triplets(&mut triplets, 0, 0, 1.0);
        ops.a.push_triplets(&mut triplets, n, n, 1.0);
        ops.b.push_triplets(&mut triplets, 0, n, -1.0);
        d.push_triplets(&mut triplets, n, 0, -lambda);
        let block = CsrMatrix::from_triplets(2 * n, 2 * n, &mut triplets);
        let lu = factor_lu(&block)?;

        // uncertified solve: K(λ) is nearly singular at grid points next to a
        // crossing, which is harmless for inverse iteration (the solve error
        // lies along the direction being amplified) but fails a residual check
        let inv_apply = |x: &[f64]| -> Result<Vec<f64>> {
            let mut rhs = vec![0.0; 2 * n];
            rhs[n..].copy_from_slice(&ops.b.apply(x));
            let sol = lu.solve_unchecked(&rhs)?;
            Ok(sol[..n].to_vec())
        };
        let lhs_apply = |x: &[f64]| -> Result<Vec<f64>> {
            let t = b_fact.solve(&ops.a.apply(x))?;
            let su = ops.a.apply(&t);
            let du = d.apply(x);
            Ok(su.iter().zip(du).map(|(s, dv)| s - lambda * dv).collect())
        };
        let rhs_apply = |x: &[f64]| ops.b.apply(x);

        let (sigmas, modes) = subspace_solve_from(
            n,
            k_cand,
            &inv_apply,
            &lhs_apply,
            &rhs_apply,
            &ops.b,
            Select::SmallestAbsSigma,
            0x5bec_7121 ^ psi.to_bits() ^ (k as u64),
            carry.take(),
        )
        .map_err(|e| match e {
            VkError::EigenFailure { message, partial_values } => VkError::EigenFailure {
                message: format!("spectrum at lambda={lambda}: {message}"),
                partial_values,
            },
            other => other,
        })?;

        if gi == 0 {
            // curve order at the first grid point: ascending σ
            let mut order: Vec<usize> = (0..k_cand).collect();
            order.sort_by(|&i, &j| sigmas[i].total_cmp(&sigmas[j]));
            for c in 0..k {
                sigma_curves[c].push(sigmas[order[c]]);
                tracked.push(modes[order[c]].clone());
            }
        } else {
            for (c, slot) in match_curves(&tracked, &sigmas, &modes, &ops.b).into_iter().enumerate()
            {
                sigma_curves[c].push(sigmas[slot]);
                tracked[c] = modes[slot].clone();
            }
        }
        carry = Some(modes);
    }

    let mut crossings = Vec::new();
    for (c, curve) in sigma_curves.iter().enumerate() {
        for i in 0..curve.len() - 1 {
            let sign_change = curve[i] * curve[i + 1] < 0.0
                || (curve[i] != 0.0 && curve[i + 1] == 0.0);
            if sign_change {
                crossings.push(Crossing {
                    curve: c,
                    lower: lambda_grid[i],
                    upper: lambda_grid[i + 1],
                });
            }
        }
    }

    Ok(SpectrumTrace { lambda_grid: lambda_grid.to_vec(), sigma_curves, crossings })
}

/// Greedy maximal B-overlap assignment of tracked curves to candidates.
fn match_curves(
    tracked: &[Vec<f64>],
    _sigmas: &[f64],
    modes: &[Vec<f64>],
    b: &CsrMatrix,
) -> Vec<usize> {
    let k = tracked.len();
    let mut overlap = vec![vec![0.0f64; modes.len()]; k];
    for (c, t) in tracked.iter().enumerate() {
        let bt = b.apply(t);
        for (j, m) in modes.iter().enumerate() {
            overlap[c][j] = bt.iter().zip(m).map(|(a, b)| a * b).sum::<f64>().abs();
        }
    }
    let mut assignment = vec![usize::MAX; k];
    let mut taken = vec![false; modes.len()];
    for _ in 0..k {
        let (mut best, mut bc, mut bj) = (-1.0, 0, 0);
        for c in 0..k {
            if assignment[c] != usize::MAX {
                continue;
            }
            for j in 0..modes.len() {
                if !taken[j] && overlap[c][j] > best {
                    (best, bc, bj) = (overlap[c][j], c, j);
                }
            }
        }
        assignment[bc] = bj;
        taken[bj] = true;
    }
    assignment
}

/// Least-squares slope of log|λ_h − exact| against log h.
///
/// Rejects ladders shorter than three meshes or not strictly refining, and
/// refuses to fit once any error drops to machine exactness, where the
/// order is undefined.
pub fn convergence_order(values_by_mesh: &[(f64, f64)], exact: f64) -> Result<f64> {
    if values_by_mesh.len() < 3 {
        return Err(VkError::InvalidArgument(
            "convergence order needs at least three mesh sizes".into(),
        ));
    }
    if !values_by_mesh.windows(2).all(|w| w[0].0 > w[1].0) {
        return Err(VkError::InvalidArgument(
            "mesh sizes must be strictly decreasing".into(),
        ));
    }
    let mut pts = Vec::with_capacity(values_by_mesh.len());
    for &(h, v) in values_by_mesh {
        let err = (v - exact).abs();
        if err < 1e-12 {
            return Err(VkError::DegenerateInput(format!(
                "error at mesh size {h} is below 1e-12; order is undefined"
            )));
        }
        pts.push((h.ln(), err.ln()));
    }
    Ok(lsq_slope(&pts))
}

pub(crate) fn lsq_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Groups ascending values within `rel_tol` relative distance of their
/// neighbor and reports each value's cluster size.
pub fn cluster_multiplicities(values: &[f64], rel_tol: f64) -> Vec<usize> {
    let mut mult = vec![1usize; values.len()];
    let mut start = 0;
    for i in 1..=values.len() {
        let joined = i < values.len() && {
            let (a, b) = (values[i - 1], values[i]);
            (b - a).abs() <= rel_tol * a.abs().max(b.abs())
        };
        if !joined {
            for m in mult.iter_mut().take(i).skip(start) {
                *m = i - start;
            }
            start = i;
        }
    }
    mult
}

enum Select {
    /// Largest positive μ of R x = μ L x, reported as λ = 1/μ ascending.
    SmallestPositiveLambda,
    /// Eigenvalues of L x = σ R x nearest zero, R positive definite.
    SmallestAbsSigma,
}

#[allow(clippy::too_many_arguments)]
fn subspace_solve(
    n: usize,
    k: usize,
    inv_apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    lhs_apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    rhs_apply: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &CsrMatrix,
    select: Select,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    subspace_solve_from(n, k, inv_apply, lhs_apply, rhs_apply, b, select, seed, None)
}

/// Blocked inverse iteration with Rayleigh-Ritz extraction.
///
/// The subspace holds 2k+4 vectors: k wanted, k mirrors (indefinite load
/// profiles pair each λ with −λ at equal magnitude, so both signs must fit
/// or the iteration oscillates), and 4 guards for separation.
#[allow(clippy::too_many_arguments)]
fn subspace_solve_from(
    n: usize,
    k: usize,
    inv_apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    lhs_apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    rhs_apply: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &CsrMatrix,
    select: Select,
    seed: u64,
    initial: Option<Vec<Vec<f64>>>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    use rand::SeedableRng;
    let m = (2 * k + 4).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<Vec<f64>> = initial.unwrap_or_default();
    v.truncate(m);
    while v.len() < m {
        v.push((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    b_orthonormalize(b, &mut v, &mut rng);

    let mut best: Option<(Vec<f64>, Vec<Vec<f64>>, f64)> = None;

    for _sweep in 0..EIG_CAP {
        for col in v.iter_mut() {
            *col = inv_apply(col)?;
        }
        b_orthonormalize(b, &mut v, &mut rng);

        // Rayleigh-Ritz on the current subspace
        let lv: Vec<Vec<f64>> = v.iter().map(|c| lhs_apply(c)).collect::<Result<_>>()?;
        let rv: Vec<Vec<f64>> = v.iter().map(|c| rhs_apply(c)).collect();
        let g = symmetrized_gram(&v, &lv);
        let h = symmetrized_gram(&v, &rv);

        let (vals, coeffs) = match select {
            Select::SmallestPositiveLambda => ritz_pencil(&h, &g, k, true)?,
            Select::SmallestAbsSigma => ritz_pencil(&g, &h, k, false)?,
        };

        // ritz vectors and their residuals, reusing L·V for L·(V y)
        let mut xs = Vec::with_capacity(vals.len());
        let mut pairs = Vec::with_capacity(vals.len());
        for (val, y) in vals.iter().zip(&coeffs) {
            let x = combine(&v, y);
            let lx = combine(&lv, y);
            let rx = combine(&rv, y);
            let resid: Vec<f64> = lx.iter().zip(&rx).map(|(l, r)| l - val * r).collect();
            pairs.push((norm2(&resid), norm2(&lx), val.abs() * norm2(&rx)));
            xs.push(x);
        }
        // Each pair is measured against the larger of its own ‖L·x‖ and the
        // window scale max|θ|·‖R·x‖. Curves tracked through zero (crossing
        // detection) make ‖L·x‖ vanish, and a bare relative residual would
        // then demand absolute accuracy below the factorization noise floor.
        let window = pairs.iter().map(|p| p.2).fold(0.0f64, f64::max);
        let worst = pairs
            .iter()
            .map(|(r, lx, _)| r / lx.max(window).max(1e-300))
            .fold(0.0f64, f64::max);

        let done = vals.len() == k && worst <= EIG_TOL;
        let improved = best.as_ref().is_none_or(|(_, _, w)| worst < *w);
        if vals.len() == k && improved {
            best = Some((vals.clone(), xs.clone(), worst));
        }
        if done {
            return Ok((vals, xs));
        }
    }

    let partial_values = best.map(|(vals, _, _)| vals).unwrap_or_default();
    Err(VkError::EigenFailure {
        message: format!("no convergence within {EIG_CAP} subspace sweeps"),
        partial_values,
    })
}

/// Solves the projected pencil num·c = θ·den·c with `den` SPD via its
/// Cholesky factor; θ plays the role of μ or σ depending on the caller.
///
/// For `positive_reciprocal` the θ are reciprocal loads: positive ones are
/// kept, largest first, and returned as λ = 1/θ ascending. Otherwise the k
/// values nearest zero are returned in ascending order.
fn ritz_pencil(
    num: &DMatrix<f64>,
    den: &DMatrix<f64>,
    k: usize,
    positive_reciprocal: bool,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let m = num.nrows();
    let chol = den.clone().cholesky().ok_or_else(|| {
        VkError::SingularSystem("projected Gram matrix lost positive definiteness".into())
    })?;
    let l = chol.l();
    let t = l.solve_lower_triangular(num).ok_or_else(|| {
        VkError::SingularSystem("triangular solve failed in Rayleigh-Ritz".into())
    })?;
    let mt = l
        .solve_lower_triangular(&t.transpose())
        .ok_or_else(|| VkError::SingularSystem("triangular solve failed in Rayleigh-Ritz".into()))?
        .transpose();
    let sym = (&mt + mt.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();

    let mut order: Vec<usize> = (0..m).collect();
    if positive_reciprocal {
        // largest positive reciprocal first ⇒ smallest positive load first
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        order.retain(|&i| eig.eigenvalues[i] > 0.0);
    } else {
        order.sort_by(|&i, &j| {
            eig.eigenvalues[i].abs().total_cmp(&eig.eigenvalues[j].abs())
        });
    }
    order.truncate(k);

    let mut vals = Vec::with_capacity(order.len());
    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(order.len());
    for &i in &order {
        let c = eig.eigenvectors.column(i).into_owned();
        let y = l
            .transpose()
            .solve_upper_triangular(&c)
            .ok_or_else(|| VkError::SingularSystem("back-transform failed".into()))?;
        vals.push(if positive_reciprocal { 1.0 / eig.eigenvalues[i] } else { eig.eigenvalues[i] });
        coeffs.push(y.iter().copied().collect());
    }
    if positive_reciprocal {
        // λ = 1/μ with μ descending is already ascending; keep pairs sorted
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        vals = idx.iter().map(|&i| vals[i]).collect();
        coeffs = idx.iter().map(|&i| coeffs[i].clone()).collect();
    }
    Ok((vals, coeffs))
}

fn symmetrized_gram(v: &[Vec<f64>], av: &[Vec<f64>]) -> DMatrix<f64> {
    let m = v.len();
    let raw = DMatrix::from_fn(m, m, |i, j| {
        v[i].iter().zip(&av[j]).map(|(a, b)| a * b).sum::<f64>()
    });
    (&raw + raw.transpose()) * 0.5
}

fn combine(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = cols[0].len();
    let mut out = vec![0.0; n];
    for (c, &w) in cols.iter().zip(y) {
        for (o, v) in out.iter_mut().zip(c) {
            *o += w * v;
        }
    }
    out
}

/// Modified Gram-Schmidt in the B inner product; degenerate columns are
/// replaced by fresh random draws so the basis keeps full rank.
fn b_orthonormalize(b: &CsrMatrix, cols: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    let n = cols.first().map_or(0, Vec::len);
    for j in 0..cols.len() {
        'attempt: for attempt in 0..4 {
            let (head, tail) = cols.split_at_mut(j);
            let vj = &mut tail[0];
            for vi in head.iter() {
                let r = b.bilinear(vi, vj);
                for (x, y) in vj.iter_mut().zip(vi) {
                    *x -= r * y;
                }
            }
            let norm = b.bilinear(vj, vj).max(0.0).sqrt();
            if norm > 1e-10 {
                for x in vj.iter_mut() {
                    *x /= norm;
                }
                break 'attempt;
            }
            assert!(attempt < 3, "could not complete a rank-{} basis", cols.len());
            *vj = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        }
    }
}
