//! Reduced-order pipeline: snapshot collection, per-field POD in the H¹₀
//! inner product, exact Galerkin projection of every operator, and the
//! dense reduced Newton solver.
//!
//! The nonlinearity is quadratic, so projecting the bracket once into
//! third-order coefficient tensors makes the online phase polynomial in the
//! reduced coordinates: solving at a new (λ, ψ) touches nothing whose size
//! scales with the full-order dof count. Two tensors suffice for the whole
//! block system because the bracket is symmetric in its first two slots,
//! which turns the mixed Jacobian block into a re-indexed contraction of an
//! already stored tensor.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::{assemble_bracket, Operators};
use crate::continuation::Branch;
use crate::error::{Result, VkError};
use crate::fespace::{build_space, FeSpace, ScalarField};
use crate::mesh::build_mesh;
use crate::solver::{NewtonReport, Provenance, State};
use crate::sparse::CsrMatrix;

pub const FIELD_NAMES: [&str; 4] = ["u", "lap_u", "phi", "lap_phi"];

/// Training data: per-field snapshot columns with their parameter tags,
/// in sweep order.
#[derive(Clone, Debug)]
pub struct SnapshotSet {
    pub space: Arc<FeSpace>,
    /// Snapshot columns per field, aligned across fields and with the tags.
    pub fields: [Vec<Vec<f64>>; 4],
    pub lambdas: Vec<f64>,
    pub psis: Vec<f64>,
}

impl SnapshotSet {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Every `stride`-th stored state of each branch, in branch-then-λ order.
pub fn collect_snapshots(branches: &[Branch], stride: usize) -> Result<SnapshotSet> {
    if stride == 0 {
        return Err(VkError::InvalidArgument("snapshot stride must be positive".into()));
    }
    let mut space: Option<Arc<FeSpace>> = None;
    let mut fields: [Vec<Vec<f64>>; 4] = Default::default();
    let mut lambdas = Vec::new();
    let mut psis = Vec::new();

    for branch in branches {
        let stored: Vec<(&State, f64, f64)> = branch
            .points
            .iter()
            .filter_map(|p| p.state.as_ref().map(|s| (s, p.lambda, p.psi)))
            .collect();
        for (state, lambda, psi) in stored.into_iter().step_by(stride) {
            match &space {
                None => space = Some(state.space().clone()),
                Some(s) if Arc::ptr_eq(s, state.space()) => {}
                Some(_) => {
                    return Err(VkError::InvalidArgument(
                        "snapshots from different spaces cannot be mixed".into(),
                    ))
                }
            }
            for (f, field) in state.fields().into_iter().enumerate() {
                fields[f].push(field.coeffs.clone());
            }
            lambdas.push(lambda);
            psis.push(psi);
        }
    }

    let space = space.ok_or_else(|| {
        VkError::InvalidArgument("no stored states found in the given branches".into())
    })?;
    Ok(SnapshotSet { space, fields, lambdas, psis })
}

/// Per-field orthonormal bases, equal width N across fields, columns
/// ordered by decreasing captured energy.
#[derive(Clone, Debug)]
pub struct ReducedBasis {
    pub space: Arc<FeSpace>,
    pub n: usize,
    /// Transformation matrices, one (interior dofs × N) block per field.
    pub fields: [DMatrix<f64>; 4],
    /// Energy fraction captured by each retained column, per field.
    pub pod_energies: [Vec<f64>; 4],
}

impl ReducedBasis {
    /// Keeps the leading `n2` columns of every field; POD bases are nested,
    /// so this is the exact basis a smaller POD would have produced.
    pub fn truncate(&self, n2: usize) -> ReducedBasis {
        assert!(n2 >= 1 && n2 <= self.n);
        ReducedBasis {
            space: self.space.clone(),
            n: n2,
            fields: std::array::from_fn(|f| self.fields[f].columns(0, n2).into_owned()),
            pod_energies: std::array::from_fn(|f| self.pod_energies[f][..n2].to_vec()),
        }
    }
}

/// Method of snapshots in the H¹₀ seminorm: eigenvalues of the stiffness
/// Gram matrix per field, equal retained width N = min over fields of
/// (N_max, energy criterion), then a Gram-Schmidt cleanup pass.
///
/// A dependent snapshot set (duplicate states, fewer snapshots than the
/// requested width) shrinks N with a warning on stderr; an all-zero field
/// (training on the flat branch only) is a degenerate-input error.
pub fn pod(
    ops: &Operators,
    snapshots: &SnapshotSet,
    n_max: usize,
    energy_tol: f64,
) -> Result<ReducedBasis> {
    if !Arc::ptr_eq(&ops.space, &snapshots.space) {
        return Err(VkError::InvalidArgument(
            "snapshots and operators live on different spaces".into(),
        ));
    }
    if n_max == 0 {
        return Err(VkError::InvalidArgument("basis width must be at least 1".into()));
    }
    if snapshots.is_empty() {
        return Err(VkError::InvalidArgument("empty snapshot set".into()));
    }
    if !(0.0..1.0).contains(&energy_tol) {
        return Err(VkError::InvalidArgument(format!(
            "energy tolerance must lie in [0, 1), got {energy_tol}"
        )));
    }
    let s = snapshots.len();

    // per-field spectral data of the Gram matrix
    struct FieldPod {
        eigvals: Vec<f64>,
        eigvecs: DMatrix<f64>,
        total: f64,
        n_energy: usize,
    }
    let mut per_field = Vec::with_capacity(4);
    for f in 0..4 {
        let cols = &snapshots.fields[f];
        let gram = DMatrix::from_fn(s, s, |p, q| ops.a.bilinear(&cols[p], &cols[q]));
        let gram = (&gram + gram.transpose()) * 0.5;
        let eig = gram.symmetric_eigen();

        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let eigvals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let eigvecs = DMatrix::from_fn(s, s, |p, q| eig.eigenvectors[(p, order[q])]);

        let total: f64 = eigvals.iter().sum();
        // converged trivial states carry ~1e-16 roundoff, so "zero Gram"
        // means numerically zero, not bitwise zero
        if eigvals[0] <= 1e-16 {
            return Err(VkError::DegenerateInput(format!(
                "all {} snapshots of field {} have zero energy; \
                 cannot build a basis from the flat branch alone",
                s, FIELD_NAMES[f]
            )));
        }
        let positive = eigvals.iter().take_while(|&&v| v > 0.0).count();
        let mut n_energy = positive;
        let mut captured = 0.0;
        for (i, v) in eigvals.iter().take(positive).enumerate() {
            captured += v;
            if captured >= (1.0 - energy_tol) * total {
                n_energy = i + 1;
                break;
            }
        }
        per_field.push(FieldPod { eigvals, eigvecs, total, n_energy });
    }

    let energy_cap = per_field.iter().map(|p| p.n_energy).min().unwrap();
    let requested = n_max.min(energy_cap);

    // Combine snapshots into candidate columns, normalized by measured
    // length rather than the predicted λ_j^{1/2}. Snapshot sets from a
    // smooth branch decay to the Gram's roundoff floor within a handful
    // of modes; such trailing combinations still hold usable directions
    // (measured norm within a few orders of the prediction), whereas a
    // genuinely dependent set cancels to ~ε of it. The latter ends the
    // basis: every later eigenvalue is at least as polluted.
    let nh = ops.interior_len();
    let mut raw: [Vec<Vec<f64>>; 4] = Default::default();
    let mut achieved = requested;
    for (f, fp) in per_field.iter().enumerate() {
        for j in 0..achieved {
            let mut col = vec![0.0; nh];
            for p in 0..s {
                let w = fp.eigvecs[(p, j)];
                for (c, x) in col.iter_mut().zip(&snapshots.fields[f][p]) {
                    *c += w * x;
                }
            }
            let m2 = ops.a.bilinear(&col, &col);
            if m2 <= 1e-8 * fp.eigvals[j] {
                achieved = j;
                break;
            }
            let scale = 1.0 / m2.sqrt();
            col.iter_mut().for_each(|c| *c *= scale);
            raw[f].push(col);
        }
    }
    let n = achieved;
    if n < requested {
        eprintln!("pod: snapshot rank supports only {n} of the requested {requested} basis vectors");
    }

    let mut fields: [DMatrix<f64>; 4] = std::array::from_fn(|_| DMatrix::zeros(nh, n));
    let mut pod_energies: [Vec<f64>; 4] = Default::default();
    for (f, fp) in per_field.iter().enumerate() {
        for (j, col) in raw[f].iter().take(n).enumerate() {
            fields[f].column_mut(j).copy_from_slice(col);
        }
        gram_schmidt_pass(&ops.a, &mut fields[f]);
        pod_energies[f] = fp.eigvals[..n].iter().map(|v| v / fp.total).collect();
    }

    Ok(ReducedBasis { space: ops.space.clone(), n, fields, pod_energies })
}

/// Two modified Gram-Schmidt sweeps in the `a` inner product. The columns
/// arrive near-orthonormal; the first sweep removes the method-of-snapshots
/// roundoff, the second (twice is enough) repairs the digits the first one
/// loses when a trailing column sits close to the span of the earlier ones,
/// so the orthonormality invariant holds to 1e-10 unconditionally.
fn gram_schmidt_pass(a: &CsrMatrix, v: &mut DMatrix<f64>) {
    let (nh, n) = (v.nrows(), v.ncols());
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| v.column(j).iter().copied().collect()).collect();
    for _ in 0..2 {
        for j in 0..n {
            let (head, tail) = cols.split_at_mut(j);
            let vj = &mut tail[0];
            for vi in head.iter() {
                let r = a.bilinear(vi, vj);
                for (x, y) in vj.iter_mut().zip(vi) {
                    *x -= r * y;
                }
            }
            let norm = a.bilinear(vj, vj).max(0.0).sqrt();
            assert!(norm > 0.0, "basis column collapsed during re-orthonormalization");
            for x in vj.iter_mut() {
                *x /= norm;
            }
        }
    }
    for (j, col) in cols.iter().enumerate() {
        for i in 0..nh {
            v[(i, j)] = col[i];
        }
    }
}

/// All dense blocks the online solver needs. Deliberately free of any
/// full-order object: the basis, mesh, and sparse matrices stay offline.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedOperators {
    pub n: usize,
    /// Reduced stiffness per field, V_fᵀ A V_f; the reduced H¹ metric.
    pub a: [DMatrix<f64>; 4],
    /// Reduced mass per field, V_fᵀ B V_f.
    pub mass: [DMatrix<f64>; 4],
    /// Mass coupling of the deflection pair, V_uᵀ B V_lapu.
    pub b_u: DMatrix<f64>,
    /// Mass coupling of the stress pair, V_phiᵀ B V_lapphi.
    pub b_phi: DMatrix<f64>,
    /// Load blocks V_lapuᵀ D_part V_u; online D(ψ) = d0 − ψ·d1.
    pub d0: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    /// t1[p] = V_lapuᵀ M(Σφ^p) V_u: bracket tensor of the stress basis.
    pub t1: Vec<DMatrix<f64>>,
    /// t3[r] = V_lapphiᵀ M(Σu^r) V_u: bracket tensor of the deflection basis.
    pub t3: Vec<DMatrix<f64>>,
}

impl ReducedOperators {
    /// Leading n2×n2 sub-blocks; exact for nested POD bases.
    pub fn truncate(&self, n2: usize) -> ReducedOperators {
        assert!(n2 >= 1 && n2 <= self.n);
        let cut = |m: &DMatrix<f64>| m.view((0, 0), (n2, n2)).into_owned();
        ReducedOperators {
            n: n2,
            a: std::array::from_fn(|f| cut(&self.a[f])),
            mass: std::array::from_fn(|f| cut(&self.mass[f])),
            b_u: cut(&self.b_u),
            b_phi: cut(&self.b_phi),
            d0: cut(&self.d0),
            d1: cut(&self.d1),
            t1: self.t1[..n2].iter().map(&cut).collect(),
            t3: self.t3[..n2].iter().map(&cut).collect(),
        }
    }
}

/// Sparse-times-basis product as a dense block.
fn apply_to_basis(m: &CsrMatrix, v: &DMatrix<f64>) -> DMatrix<f64> {
    let (nh, n) = (v.nrows(), v.ncols());
    let mut out = DMatrix::zeros(nh, n);
    for j in 0..n {
        let col: Vec<f64> = v.column(j).iter().copied().collect();
        out.column_mut(j).copy_from_slice(&m.apply(&col));
    }
    out
}

fn project_block(left: &DMatrix<f64>, m: &CsrMatrix, right: &DMatrix<f64>) -> DMatrix<f64> {
    left.transpose() * apply_to_basis(m, right)
}

/// Projects every operator onto the basis, including the two third-order
/// bracket tensors (one sparse bracket assembly per basis column).
pub fn project_operators(ops: &Operators, basis: &ReducedBasis) -> Result<ReducedOperators> {
    if !Arc::ptr_eq(&ops.space, &basis.space) {
        return Err(VkError::InvalidArgument(
            "basis and operators live on different spaces".into(),
        ));
    }
    let [vu, vlu, vphi, vlphi] = &basis.fields;

    let tensor = |z_basis: &DMatrix<f64>, left: &DMatrix<f64>| -> Result<Vec<DMatrix<f64>>> {
        (0..basis.n)
            .into_par_iter()
            .map(|p| {
                let z = ScalarField {
                    space: ops.space.clone(),
                    coeffs: z_basis.column(p).iter().copied().collect(),
                };
                let m = assemble_bracket(&ops.space, &z)?;
                Ok(project_block(left, &m, vu))
            })
            .collect()
    };

    Ok(ReducedOperators {
        n: basis.n,
        a: std::array::from_fn(|f| project_block(&basis.fields[f], &ops.a, &basis.fields[f])),
        mass: std::array::from_fn(|f| project_block(&basis.fields[f], &ops.b, &basis.fields[f])),
        b_u: project_block(vu, &ops.b, vlu),
        b_phi: project_block(vphi, &ops.b, vlphi),
        d0: project_block(vlu, &ops.d0, vu),
        d1: project_block(vlu, &ops.d1, vu),
        t1: tensor(vphi, vlu)?,
        t3: tensor(vu, vlphi)?,
    })
}

/// Reduced coordinates, N per field in the order u, Δu, φ, Δφ.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedState {
    pub coeffs: Vec<f64>,
}

impl ReducedState {
    pub fn zero(n: usize) -> ReducedState {
        ReducedState { coeffs: vec![0.0; 4 * n] }
    }

    fn field(&self, n: usize, f: usize) -> &[f64] {
        &self.coeffs[f * n..(f + 1) * n]
    }
}

/// Expands reduced coordinates through the basis; the result is tagged as
/// ROM-lifted.
pub fn lift(basis: &ReducedBasis, reduced: &ReducedState) -> State {
    let n = basis.n;
    assert_eq!(reduced.coeffs.len(), 4 * n);
    let field = |f: usize| {
        let q = DVector::from_column_slice(reduced.field(n, f));
        let x = &basis.fields[f] * q;
        ScalarField { space: basis.space.clone(), coeffs: x.iter().copied().collect() }
    };
    State {
        u: field(0),
        lap_u: field(1),
        phi: field(2),
        lap_phi: field(3),
        provenance: Provenance::LiftedFromRom,
    }
}

/// H¹₀-orthogonal projection coefficients, q_f = V_fᵀ A x_f; the basis is
/// A-orthonormal, so lift ∘ project is the identity on the span.
pub fn project(ops: &Operators, basis: &ReducedBasis, state: &State) -> Result<ReducedState> {
    if !Arc::ptr_eq(&basis.space, state.space()) {
        return Err(VkError::InvalidArgument(
            "state and basis live on different spaces".into(),
        ));
    }
    let mut coeffs = Vec::with_capacity(4 * basis.n);
    for (f, field) in state.fields().into_iter().enumerate() {
        let ax = ops.a.apply(&field.coeffs);
        for j in 0..basis.n {
            coeffs.push(basis.fields[f].column(j).iter().zip(&ax).map(|(v, r)| v * r).sum());
        }
    }
    Ok(ReducedState { coeffs })
}

fn reduced_d(red: &ReducedOperators, psi: f64) -> DMatrix<f64> {
    &red.d0 - &red.d1 * psi
}

/// Reduced residual; same block structure as the full-order one.
pub fn reduced_residual(red: &ReducedOperators, q: &ReducedState, lambda: f64, psi: f64) -> Vec<f64> {
    let n = red.n;
    assert_eq!(q.coeffs.len(), 4 * n);
    let qf = |f: usize| DVector::from_column_slice(q.field(n, f));
    let (q0, q1, q2, q3) = (qf(0), qf(1), qf(2), qf(3));

    let mut bracket_u = DMatrix::zeros(n, n);
    for (p, t) in red.t1.iter().enumerate() {
        bracket_u += t * q2[p];
    }
    let mut bracket_phi = DMatrix::zeros(n, n);
    for (r, t) in red.t3.iter().enumerate() {
        bracket_phi += t * q0[r];
    }

    let r0 = &red.a[0] * &q0 + &red.b_u * &q1;
    let r1 = &red.a[1] * &q1 + (reduced_d(red, psi) * &q0) * lambda + &bracket_u * &q0;
    let r2 = &red.a[2] * &q2 + &red.b_phi * &q3;
    let r3 = &red.a[3] * &q3 - &bracket_phi * &q0;

    let mut out = Vec::with_capacity(4 * n);
    for r in [r0, r1, r2, r3] {
        out.extend(r.iter());
    }
    out
}

/// Reduced Jacobian, assembled purely from stored tensors.
///
/// The (Δu-row, φ-column) block is Σ_r q_u[r]·t1[q][·, r]: by the slot
/// symmetry of the bracket it is the same tensor as the residual's
/// stress-bracket term, re-indexed, so no third tensor is stored.
pub fn reduced_jacobian(
    red: &ReducedOperators,
    q: &ReducedState,
    lambda: f64,
    psi: f64,
) -> DMatrix<f64> {
    let n = red.n;
    assert_eq!(q.coeffs.len(), 4 * n);
    let q0 = q.field(n, 0);
    let q2 = q.field(n, 2);

    let mut j = DMatrix::zeros(4 * n, 4 * n);
    for f in 0..4 {
        j.view_mut((f * n, f * n), (n, n)).copy_from(&red.a[f]);
    }
    j.view_mut((0, n), (n, n)).copy_from(&red.b_u);
    j.view_mut((2 * n, 3 * n), (n, n)).copy_from(&red.b_phi);

    let mut j10 = reduced_d(red, psi) * lambda;
    for (p, t) in red.t1.iter().enumerate() {
        j10 += t * q2[p];
    }
    j.view_mut((n, 0), (n, n)).copy_from(&j10);

    let mut j12 = DMatrix::zeros(n, n);
    for qi in 0..n {
        for i in 0..n {
            let mut acc = 0.0;
            for (r, &q0r) in q0.iter().enumerate() {
                acc += q0r * red.t1[qi][(i, r)];
            }
            j12[(i, qi)] = acc;
        }
    }
    j.view_mut((n, 2 * n), (n, n)).copy_from(&j12);

    let mut j30 = DMatrix::zeros(n, n);
    for (r, t) in red.t3.iter().enumerate() {
        j30 += t * (-2.0 * q0[r]);
    }
    j.view_mut((3 * n, 0), (n, n)).copy_from(&j30);
    j
}

/// Block H¹ norm in reduced coordinates, through the reduced stiffness.
pub fn reduced_h1_norm(red: &ReducedOperators, flat: &[f64]) -> f64 {
    let n = red.n;
    (0..4)
        .map(|f| {
            let q = DVector::from_column_slice(&flat[f * n..(f + 1) * n]);
            (q.transpose() * &red.a[f] * &q)[(0, 0)]
        })
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// Newton iteration in the 4N reduced space; mirrors the full-order
/// contract, including the deterministic perturbation escape for singular
/// Jacobians. No step touches anything sized by the full-order space.
pub fn reduced_newton(
    red: &ReducedOperators,
    guess: &ReducedState,
    lambda: f64,
    psi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(ReducedState, NewtonReport)> {
    if !(tol > 0.0) {
        return Err(VkError::InvalidArgument(format!(
            "newton tolerance must be positive, got {tol}"
        )));
    }
    let n = red.n;
    if guess.coeffs.len() != 4 * n {
        return Err(VkError::InvalidArgument(format!(
            "guess has {} coefficients, expected {}",
            guess.coeffs.len(),
            4 * n
        )));
    }
    if guess.coeffs.iter().any(|c| !c.is_finite()) {
        return Err(VkError::InvalidArgument("guess has non-finite entries".into()));
    }

    let mut q = guess.clone();
    let mut increment_norms = Vec::new();
    let mut converged = false;
    let mut perturbations = 0usize;

    while increment_norms.len() < max_iter {
        let r = DVector::from_column_slice(&reduced_residual(red, &q, lambda, psi));
        let j = reduced_jacobian(red, &q, lambda, psi);

        match dense_solve(&j, &r) {
            Some(delta) => {
                for (qi, di) in q.coeffs.iter_mut().zip(delta.iter()) {
                    *qi -= di;
                }
                let norm = reduced_h1_norm(red, delta.as_slice());
                increment_norms.push(norm);
                if norm <= tol {
                    converged = true;
                    break;
                }
            }
            None if perturbations < 2 => {
                perturbations += 1;
                perturb_reduced(red, &mut q, lambda, psi, perturbations);
            }
            None => {
                eprintln!(
                    "reduced newton at lambda={lambda}, psi={psi}: \
                     jacobian still singular after {perturbations} perturbations"
                );
                break;
            }
        }
    }

    let report = NewtonReport { converged, iterations: increment_norms.len(), increment_norms };
    Ok((q, report))
}

/// LU solve with a relative-residual certificate, mirroring the sparse
/// path's singularity detection.
fn dense_solve(j: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    if r.iter().all(|&v| v == 0.0) {
        return Some(DVector::zeros(r.len()));
    }
    let x = j.clone().lu().solve(r)?;
    let resid = j * &x - r;
    let rel = resid.norm() / r.norm();
    (rel <= 1e-10 && x.iter().all(|v| v.is_finite())).then_some(x)
}

fn perturb_reduced(red: &ReducedOperators, q: &mut ReducedState, lambda: f64, psi: f64, attempt: usize) {
    use rand::SeedableRng;
    let seed = lambda
        .to_bits()
        .rotate_left(13)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ psi.to_bits().rotate_left(29)
        ^ attempt as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f64> = (0..q.coeffs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = reduced_h1_norm(red, &dir);
    if norm > 0.0 {
        for d in dir.iter_mut() {
            *d *= 1e-8 / norm;
        }
    }
    for (qi, di) in q.coeffs.iter_mut().zip(&dir) {
        *qi += di;
    }
}

/// Error report of the reduced model against the full solver.
#[derive(Clone, Debug)]
pub struct RbErrorReport {
    /// max over the converged sample of ‖u_full − u_reduced‖ in H¹₀.
    pub value: f64,
    /// λ values where either solver failed to converge; excluded above.
    pub excluded: Vec<f64>,
}

/// Worst-case H¹₀ deflection error over a λ sample, full vs lifted reduced
/// solutions from matched guesses.
///
/// The guess at each test λ is the stored branch state nearest in λ; the
/// reduced solve starts from that state's projection, so both solvers aim
/// at the same branch. Pairs where either side fails are excluded from the
/// maximum and reported.
pub fn rb_error(
    ops: &Operators,
    basis: &ReducedBasis,
    red: &ReducedOperators,
    branch: &Branch,
    test_lambdas: &[f64],
    psi: f64,
) -> Result<RbErrorReport> {
    let rows = rb_error_ladder(ops, basis, red, branch, test_lambdas, psi, &[red.n])?;
    let row = rows.into_iter().next().unwrap();
    Ok(RbErrorReport { value: row.value, excluded: row.excluded })
}

/// One row of the accuracy/speed table: basis width, worst error, mean
/// wall time of the reduced and full solves in milliseconds.
#[derive(Clone, Debug)]
pub struct RbLadderRow {
    pub n: usize,
    pub value: f64,
    pub excluded: Vec<f64>,
    pub t_online_ms: f64,
    pub t_full_ms: f64,
}

/// `rb_error` over a ladder of basis widths. The full-order reference
/// solves run (and are timed) once; each width then truncates the basis
/// and operators, re-solves online, and measures its own error.
pub fn rb_error_ladder(
    ops: &Operators,
    basis: &ReducedBasis,
    red: &ReducedOperators,
    branch: &Branch,
    test_lambdas: &[f64],
    psi: f64,
    n_values: &[usize],
) -> Result<Vec<RbLadderRow>> {
    if test_lambdas.is_empty() {
        return Err(VkError::InvalidArgument("empty test sample".into()));
    }
    if n_values.is_empty() {
        return Err(VkError::InvalidArgument("empty basis-width ladder".into()));
    }
    if red.n > basis.n {
        return Err(VkError::InvalidArgument(format!(
            "operators of width {} exceed the basis width {}",
            red.n, basis.n
        )));
    }
    if n_values.iter().any(|&nv| nv == 0 || nv > red.n) {
        return Err(VkError::InvalidArgument(format!(
            "ladder widths must lie in 1..={}, got {n_values:?}",
            red.n
        )));
    }
    let stored: Vec<(f64, &State)> = branch
        .points
        .iter()
        .filter_map(|p| p.state.as_ref().map(|s| (p.lambda, s)))
        .collect();
    if stored.is_empty() {
        return Err(VkError::InvalidArgument("branch has no stored states".into()));
    }

    // matched full-order references, solved once
    let mut refs = Vec::with_capacity(test_lambdas.len());
    let mut full_secs = 0.0;
    for &lambda in test_lambdas {
        let (_, nearest) = stored
            .iter()
            .min_by(|(la, _), (lb, _)| {
                (la - lambda).abs().total_cmp(&(lb - lambda).abs()).then(la.total_cmp(lb))
            })
            .unwrap();
        let t0 = Instant::now();
        let (full, report) = crate::solver::newton_solve(ops, nearest, lambda, psi, 1e-10, 20)?;
        full_secs += t0.elapsed().as_secs_f64();
        refs.push((lambda, *nearest, full, report.converged));
    }
    let t_full_ms = 1e3 * full_secs / test_lambdas.len() as f64;

    let mut rows = Vec::with_capacity(n_values.len());
    for &nv in n_values {
        let basis_n = basis.truncate(nv);
        let red_n = red.truncate(nv);
        let mut value = 0.0f64;
        let mut excluded = Vec::new();
        let mut online_secs = 0.0;
        for (lambda, nearest, full, full_ok) in &refs {
            let guess = project(ops, &basis_n, nearest)?;
            let t0 = Instant::now();
            let (reduced, report) = reduced_newton(&red_n, &guess, *lambda, psi, 1e-10, 20)?;
            online_secs += t0.elapsed().as_secs_f64();
            if !(*full_ok && report.converged) {
                excluded.push(*lambda);
                continue;
            }
            let lifted = lift(&basis_n, &reduced);
            let diff: Vec<f64> = full
                .u
                .coeffs
                .iter()
                .zip(&lifted.u.coeffs)
                .map(|(a, b)| a - b)
                .collect();
            value = value.max(ops.a.bilinear(&diff, &diff).max(0.0).sqrt());
        }
        if !excluded.is_empty() {
            eprintln!(
                "rb_error at width {nv}: {} of {} sample points excluded \
                 (no convergence): {excluded:?}",
                excluded.len(),
                test_lambdas.len()
            );
        }
        rows.push(RbLadderRow {
            n: nv,
            value,
            excluded,
            t_online_ms: 1e3 * online_secs / test_lambdas.len() as f64,
            t_full_ms,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// versioned binary container

const ROM_MAGIC: &[u8; 8] = b"VKROM001";

struct Entry {
    name: String,
    dims: Vec<u64>,
    data: Vec<f64>,
}

fn write_entry<W: Write>(w: &mut W, name: &str, dims: &[u64], data: &[f64]) -> Result<()> {
    let expected: u64 = dims.iter().product();
    assert_eq!(expected as usize, data.len());
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[dims.len() as u8])?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_buf<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_entry<R: Read>(r: &mut R) -> Result<Entry> {
    let name_len = u16::from_le_bytes(read_exact_buf(r, 2)?.try_into().unwrap()) as usize;
    let name = String::from_utf8(read_exact_buf(r, name_len)?)
        .map_err(|_| VkError::Config("malformed entry name in basis container".into()))?;
    let ndim = read_exact_buf(r, 1)?[0] as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u64::from_le_bytes(read_exact_buf(r, 8)?.try_into().unwrap()));
    }
    let count: u64 = dims.iter().product();
    if count > (1 << 32) {
        return Err(VkError::Config(format!("entry {name} claims {count} values")));
    }
    let raw = read_exact_buf(r, count as usize * 8)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Entry { name, dims, data })
}

fn matrix_entry(name: &str, m: &DMatrix<f64>) -> (String, Vec<u64>, Vec<f64>) {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    (name.to_string(), vec![m.nrows() as u64, m.ncols() as u64], data)
}

fn matrix_from(entry: &Entry) -> Result<DMatrix<f64>> {
    if entry.dims.len() != 2 {
        return Err(VkError::Config(format!("entry {} is not a matrix", entry.name)));
    }
    let (r, c) = (entry.dims[0] as usize, entry.dims[1] as usize);
    Ok(DMatrix::from_fn(r, c, |i, j| entry.data[i * c + j]))
}

/// Writes basis and operators into one `basis.rom` container so the online
/// phase can run in a separate process.
pub fn save_rom(path: &Path, basis: &ReducedBasis, red: &ReducedOperators) -> Result<()> {
    let mesh = &basis.space.mesh;
    let mut entries: Vec<(String, Vec<u64>, Vec<f64>)> = vec![(
        "space".into(),
        vec![4],
        vec![mesh.l, mesh.nx as f64, mesh.ny as f64, basis.space.degree as f64],
    )];
    for (f, name) in FIELD_NAMES.iter().enumerate() {
        entries.push(matrix_entry(&format!("basis_{name}"), &basis.fields[f]));
        entries.push((
            format!("energies_{name}"),
            vec![basis.pod_energies[f].len() as u64],
            basis.pod_energies[f].clone(),
        ));
        entries.push(matrix_entry(&format!("a_{name}"), &red.a[f]));
        entries.push(matrix_entry(&format!("mass_{name}"), &red.mass[f]));
    }
    entries.push(matrix_entry("b_u", &red.b_u));
    entries.push(matrix_entry("b_phi", &red.b_phi));
    entries.push(matrix_entry("d0", &red.d0));
    entries.push(matrix_entry("d1", &red.d1));
    for (label, tensor) in [("t1", &red.t1), ("t3", &red.t3)] {
        let n = red.n;
        let mut data = Vec::with_capacity(n * n * n);
        for t in tensor {
            for i in 0..n {
                for j in 0..n {
                    data.push(t[(i, j)]);
                }
            }
        }
        entries.push((label.into(), vec![n as u64, n as u64, n as u64], data));
    }

    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(ROM_MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, dims, data) in &entries {
        write_entry(&mut w, name, dims, data)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a container written by `save_rom`, rebuilding the space from its
/// recorded parameters.
pub fn load_rom(path: &Path) -> Result<(ReducedBasis, ReducedOperators)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let magic = read_exact_buf(&mut r, 8)?;
    if magic != ROM_MAGIC {
        return Err(VkError::Config(format!(
            "{} is not a basis container (bad magic)",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(read_exact_buf(&mut r, 4)?.try_into().unwrap());
    let mut entries = std::collections::HashMap::new();
    for _ in 0..count {
        let e = read_entry(&mut r)?;
        entries.insert(e.name.clone(), e);
    }
    let get = |name: &str| {
        entries
            .get(name)
            .ok_or_else(|| VkError::Config(format!("container is missing entry {name}")))
    };

    let sp = get("space")?;
    if sp.data.len() != 4 {
        return Err(VkError::Config("malformed space entry".into()));
    }
    let space = build_space(
        build_mesh(sp.data[0], sp.data[1] as usize, sp.data[2] as usize)?,
        sp.data[3] as usize,
    )?;

    let mut fields: Vec<DMatrix<f64>> = Vec::with_capacity(4);
    let mut energies: Vec<Vec<f64>> = Vec::with_capacity(4);
    let mut a: Vec<DMatrix<f64>> = Vec::with_capacity(4);
    let mut mass: Vec<DMatrix<f64>> = Vec::with_capacity(4);
    for name in FIELD_NAMES {
        fields.push(matrix_from(get(&format!("basis_{name}"))?)?);
        energies.push(get(&format!("energies_{name}"))?.data.clone());
        a.push(matrix_from(get(&format!("a_{name}"))?)?);
        mass.push(matrix_from(get(&format!("mass_{name}"))?)?);
    }
    let n = fields[0].ncols();
    let nh = space.interior_dofs.len();
    if fields.iter().any(|f| f.nrows() != nh || f.ncols() != n) {
        return Err(VkError::Config(
            "basis dimensions do not match the recorded space".into(),
        ));
    }

    let tensor = |name: &str| -> Result<Vec<DMatrix<f64>>> {
        let e = get(name)?;
        if e.dims != vec![n as u64, n as u64, n as u64] {
            return Err(VkError::Config(format!("entry {name} has wrong shape")));
        }
        Ok((0..n)
            .map(|p| DMatrix::from_fn(n, n, |i, j| e.data[(p * n + i) * n + j]))
            .collect())
    };

    let basis = ReducedBasis {
        space,
        n,
        fields: fields.try_into().unwrap(),
        pod_energies: energies.try_into().unwrap(),
    };
    let red = ReducedOperators {
        n,
        a: a.try_into().unwrap(),
        mass: mass.try_into().unwrap(),
        b_u: matrix_from(get("b_u")?)?,
        b_phi: matrix_from(get("b_phi")?)?,
        d0: matrix_from(get("d0")?)?,
        d1: matrix_from(get("d1")?)?,
        t1: tensor("t1")?,
        t3: tensor("t3")?,
    };
    Ok((basis, red))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{trace_branch, BranchSeed};
    use crate::solver::{jacobian, newton_solve, residual};
    use approx::assert_relative_eq;
    use std::sync::LazyLock;

    fn ops_for(ny: usize) -> Operators {
        let space = build_space(build_mesh(1.0, ny, ny).unwrap(), 2).unwrap();
        Operators::build(&space)
    }

    /// Shared small training setup: one traced branch on a coarse square.
    struct Training {
        ops: Operators,
        branch: Branch,
        basis: ReducedBasis,
        red: ReducedOperators,
    }

    static TRAINING: LazyLock<Training> = LazyLock::new(|| {
        let ops = ops_for(6);
        let branch =
            trace_branch(&ops, 40.0, 52.0, 1.0, 0.0, BranchSeed::new(1, 1, 1), 1e-4).unwrap();
        let snaps = collect_snapshots(std::slice::from_ref(&branch), 1).unwrap();
        let basis = pod(&ops, &snaps, 3, 1e-12).unwrap();
        let red = project_operators(&ops, &basis).unwrap();
        Training { ops, branch, basis, red }
    });

    #[test]
    fn snapshot_collection_counts_and_strides() {
        let t = &*TRAINING;
        // 13 grid points store at indices 0, 5, 10 when converged
        let snaps = collect_snapshots(std::slice::from_ref(&t.branch), 1).unwrap();
        assert_eq!(snaps.len(), 3);
        let strided = collect_snapshots(std::slice::from_ref(&t.branch), 2).unwrap();
        assert_eq!(strided.len(), 2);
        assert!(snaps.lambdas.windows(2).all(|w| w[0] < w[1]));

        assert!(collect_snapshots(&[], 1).is_err());
        assert!(collect_snapshots(std::slice::from_ref(&t.branch), 0).is_err());
        let mut bare = t.branch.clone();
        for p in bare.points.iter_mut() {
            p.state = None;
        }
        assert!(collect_snapshots(std::slice::from_ref(&bare), 1).is_err());
    }

    #[test]
    fn pod_single_snapshot_is_the_normalized_snapshot() {
        let ops = ops_for(5);
        let (state, _) = newton_solve(
            &ops,
            &crate::solver::State::zero(&ops.space),
            30.0,
            0.0,
            1e-10,
            20,
        )
        .unwrap();
        // a deliberate nonzero state: lift the first mode
        let mut state = state;
        state.u = crate::eigen::exact_eigenfunction(1, 1, &ops.space);
        state.lap_u = crate::eigen::exact_eigenfunction(1, 1, &ops.space);
        state.phi = crate::eigen::exact_eigenfunction(2, 1, &ops.space);
        state.lap_phi = crate::eigen::exact_eigenfunction(2, 1, &ops.space);

        let snaps = SnapshotSet {
            space: ops.space.clone(),
            fields: std::array::from_fn(|f| vec![state.fields()[f].coeffs.clone()]),
            lambdas: vec![30.0],
            psis: vec![0.0],
        };
        let basis = pod(&ops, &snaps, 4, 1e-12).unwrap();
        assert_eq!(basis.n, 1);
        assert_relative_eq!(basis.pod_energies[0][0], 1.0, epsilon = 1e-12);

        let norm = state.u.h1_seminorm();
        for (i, c) in state.u.coeffs.iter().enumerate() {
            assert_relative_eq!(basis.fields[0][(i, 0)].abs(), (c / norm).abs(), epsilon = 1e-10);
        }
    }

    #[test]
    fn pod_two_orthogonal_snapshots_split_energy_evenly() {
        let ops = ops_for(5);
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nh = ops.interior_len();
        let x1: Vec<f64> = (0..nh).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut x2: Vec<f64> = (0..nh).map(|_| rng.random_range(-1.0..1.0)).collect();
        // make x2 exactly A-orthogonal to x1 and both unit A-norm
        let r = ops.a.bilinear(&x1, &x2) / ops.a.bilinear(&x1, &x1);
        for (b, a) in x2.iter_mut().zip(&x1) {
            *b -= r * a;
        }
        let n1 = ops.a.bilinear(&x1, &x1).sqrt();
        let n2 = ops.a.bilinear(&x2, &x2).sqrt();
        let x1: Vec<f64> = x1.iter().map(|v| v / n1).collect();
        let x2: Vec<f64> = x2.iter().map(|v| v / n2).collect();

        let snaps = SnapshotSet {
            space: ops.space.clone(),
            fields: std::array::from_fn(|_| vec![x1.clone(), x2.clone()]),
            lambdas: vec![1.0, 2.0],
            psis: vec![0.0, 0.0],
        };
        let basis = pod(&ops, &snaps, 2, 1e-12).unwrap();
        assert_eq!(basis.n, 2);
        for f in 0..4 {
            assert_relative_eq!(basis.pod_energies[f][0], 0.5, epsilon = 1e-10);
            assert_relative_eq!(basis.pod_energies[f][1], 0.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn pod_rejects_flat_training_and_shrinks_on_rank_deficiency() {
        let ops = ops_for(5);
        let flat = trace_branch(&ops, 30.0, 34.0, 1.0, 0.0, BranchSeed::new(1, 1, 1), 1e-4)
            .unwrap();
        let snaps = collect_snapshots(std::slice::from_ref(&flat), 1).unwrap();
        assert!(matches!(pod(&ops, &snaps, 2, 1e-12), Err(VkError::DegenerateInput(_))));

        // three copies of one snapshot only support a single basis vector
        let mode = crate::eigen::exact_eigenfunction(1, 1, &ops.space);
        let col = mode.coeffs.clone();
        let snaps = SnapshotSet {
            space: ops.space.clone(),
            fields: std::array::from_fn(|_| vec![col.clone(), col.clone(), col.clone()]),
            lambdas: vec![1.0, 2.0, 3.0],
            psis: vec![0.0; 3],
        };
        let basis = pod(&ops, &snaps, 3, 1e-12).unwrap();
        assert_eq!(basis.n, 1);
    }

    #[test]
    fn basis_is_orthonormal_and_single_vector_projects_to_identity() {
        let t = &*TRAINING;
        for f in 0..4 {
            let g = project_block(&t.basis.fields[f], &t.ops.a, &t.basis.fields[f]);
            for i in 0..t.basis.n {
                for j in 0..t.basis.n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (g[(i, j)] - want).abs() <= 1e-10,
                        "field {f} gram({i},{j}) = {}",
                        g[(i, j)]
                    );
                }
            }
        }
        let one = t.basis.truncate(1);
        let red1 = project_operators(&t.ops, &one).unwrap();
        for f in 0..4 {
            assert_relative_eq!(red1.a[f][(0, 0)], 1.0, epsilon = 1e-12);
        }
        // reduced mass blocks stay SPD under congruence
        for f in 0..4 {
            assert!(t.red.mass[f].clone().cholesky().is_some());
        }
    }

    #[test]
    fn tensor_contraction_matches_full_order_bracket() {
        let t = &*TRAINING;
        let n = t.basis.n;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = ReducedState {
            coeffs: (0..4 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let lifted = lift(&t.basis, &q);

        // stress-bracket block: Σ_p q_phi[p]·t1[p] = V_lapuᵀ M(φ) V_u
        let m_phi = assemble_bracket(&t.ops.space, &lifted.phi).unwrap();
        let direct = project_block(&t.basis.fields[1], &m_phi, &t.basis.fields[0]);
        let mut contracted = DMatrix::zeros(n, n);
        for (p, tp) in t.red.t1.iter().enumerate() {
            contracted += tp * q.field(n, 2)[p];
        }
        assert!((&direct - &contracted).abs().max() <= 1e-10);

        // deflection-bracket block: Σ_r q_u[r]·t3[r] = V_lapphiᵀ M(u) V_u
        let m_u = assemble_bracket(&t.ops.space, &lifted.u).unwrap();
        let direct = project_block(&t.basis.fields[3], &m_u, &t.basis.fields[0]);
        let mut contracted = DMatrix::zeros(n, n);
        for (r, tr) in t.red.t3.iter().enumerate() {
            contracted += tr * q.field(n, 0)[r];
        }
        assert!((&direct - &contracted).abs().max() <= 1e-10);
    }

    #[test]
    fn lift_project_identities() {
        let t = &*TRAINING;
        let n = t.basis.n;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = ReducedState {
            coeffs: (0..4 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };

        // project ∘ lift = identity on reduced coordinates
        let back = project(&t.ops, &t.basis, &lift(&t.basis, &q)).unwrap();
        for (a, b) in q.coeffs.iter().zip(&back.coeffs) {
            assert!((a - b).abs() <= 1e-12);
        }

        // snapshots lie in the span when N equals the snapshot rank
        let stored: Vec<&State> =
            t.branch.points.iter().filter_map(|p| p.state.as_ref()).collect();
        let nontrivial = stored.iter().find(|s| s.u.max_abs().0.abs() > 1e-3).unwrap();
        let round = lift(&t.basis, &project(&t.ops, &t.basis, nontrivial).unwrap());
        let diff: Vec<f64> = nontrivial
            .u
            .coeffs
            .iter()
            .zip(&round.u.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        assert!(t.ops.a.bilinear(&diff, &diff).sqrt() <= 1e-10);

        // projection of zero is zero
        let z = project(&t.ops, &t.basis, &State::zero(&t.ops.space)).unwrap();
        assert!(z.coeffs.iter().all(|&c| c == 0.0));

        // out-of-span states project to the A-orthogonal closest point
        let outside = {
            let mut s = State::zero(&t.ops.space);
            s.u = crate::eigen::exact_eigenfunction(2, 2, &t.ops.space);
            s
        };
        let lifted = lift(&t.basis, &project(&t.ops, &t.basis, &outside).unwrap());
        let diff: Vec<f64> = outside
            .u
            .coeffs
            .iter()
            .zip(&lifted.u.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        let dist = t.ops.a.bilinear(&diff, &diff).sqrt();
        // direct least squares: distance² = ‖s‖² − Σ coefficients²
        let norm2 = t.ops.a.bilinear(&outside.u.coeffs, &outside.u.coeffs);
        let ax = t.ops.a.apply(&outside.u.coeffs);
        let proj2: f64 = (0..t.basis.n)
            .map(|j| {
                let c: f64 =
                    t.basis.fields[0].column(j).iter().zip(&ax).map(|(v, r)| v * r).sum();
                c * c
            })
            .sum();
        assert_relative_eq!(dist, (norm2 - proj2).max(0.0).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn reduced_residual_is_the_projected_full_residual() {
        let t = &*TRAINING;
        let n = t.basis.n;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for trial in 0..5 {
            let q = ReducedState {
                coeffs: (0..4 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            };
            let lambda = 35.0 + 10.0 * trial as f64;
            let psi = 0.4 * trial as f64;
            let r_red = reduced_residual(&t.red, &q, lambda, psi);
            let r_full = residual(&t.ops, &lift(&t.basis, &q), lambda, psi).unwrap();

            let nh = t.ops.interior_len();
            for f in 0..4 {
                for j in 0..n {
                    let want: f64 = t.basis.fields[f]
                        .column(j)
                        .iter()
                        .zip(&r_full[f * nh..(f + 1) * nh])
                        .map(|(v, r)| v * r)
                        .sum();
                    assert!(
                        (r_red[f * n + j] - want).abs() <= 1e-10,
                        "field {f} coeff {j}: {} vs {want}",
                        r_red[f * n + j]
                    );
                }
            }
        }
    }

    #[test]
    fn reduced_jacobian_is_the_projected_full_jacobian() {
        let t = &*TRAINING;
        let n = t.basis.n;
        let nh = t.ops.interior_len();
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let q = ReducedState {
            coeffs: (0..4 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let j_red = reduced_jacobian(&t.red, &q, 47.0, 0.7);

        let j_full = jacobian(&t.ops, &lift(&t.basis, &q), 47.0, 0.7).unwrap();
        // explicit projection with the 4N-column block basis
        let mut big_v = DMatrix::zeros(4 * nh, 4 * n);
        for f in 0..4 {
            big_v
                .view_mut((f * nh, f * n), (nh, n))
                .copy_from(&t.basis.fields[f]);
        }
        let mut jv = DMatrix::zeros(4 * nh, 4 * n);
        for col in 0..4 * n {
            let x: Vec<f64> = big_v.column(col).iter().copied().collect();
            jv.column_mut(col).copy_from_slice(&j_full.apply(&x));
        }
        let j_proj = big_v.transpose() * jv;
        assert!(
            (&j_red - &j_proj).abs().max() <= 1e-9,
            "max deviation {}",
            (&j_red - &j_proj).abs().max()
        );
    }

    #[test]
    fn reduced_newton_flat_below_onset_and_accurate_on_branch() {
        let t = &*TRAINING;
        let (flat, report) =
            reduced_newton(&t.red, &ReducedState::zero(t.basis.n), 30.0, 0.0, 1e-10, 20).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        assert!(flat.coeffs.iter().all(|&c| c == 0.0));

        // matched-guess solve on the branch reproduces the full solution
        let stored: Vec<(&f64, &State)> = t
            .branch
            .points
            .iter()
            .filter_map(|p| p.state.as_ref().map(|s| (&p.lambda, s)))
            .collect();
        let (&lambda, snapshot) = stored.last().unwrap();
        let guess = project(&t.ops, &t.basis, snapshot).unwrap();
        let (q, rep) = reduced_newton(&t.red, &guess, lambda, 0.0, 1e-10, 20).unwrap();
        assert!(rep.converged);

        let lifted = lift(&t.basis, &q);
        assert_eq!(lifted.provenance, Provenance::LiftedFromRom);
        let (full, _) = newton_solve(&t.ops, snapshot, lambda, 0.0, 1e-10, 20).unwrap();
        let diff: Vec<f64> =
            full.u.coeffs.iter().zip(&lifted.u.coeffs).map(|(a, b)| a - b).collect();
        let err = t.ops.a.bilinear(&diff, &diff).sqrt();
        assert!(err <= 1e-6, "training-point reproduction error {err}");
    }

    #[test]
    fn rb_error_reproduces_training_and_truncation_is_nested() {
        let t = &*TRAINING;
        let training_lambdas: Vec<f64> = t
            .branch
            .points
            .iter()
            .filter(|p| p.state.is_some())
            .map(|p| p.lambda)
            .collect();
        let report =
            rb_error(&t.ops, &t.basis, &t.red, &t.branch, &training_lambdas, 0.0).unwrap();
        assert!(report.excluded.is_empty());
        assert!(report.value <= 1e-8, "training reproduction error {}", report.value);

        // truncated operators equal the sub-blocks of the full ones
        let cut = t.red.truncate(2);
        assert_eq!(cut.n, 2);
        for f in 0..4 {
            assert_eq!(cut.a[f], t.red.a[f].view((0, 0), (2, 2)).into_owned());
        }
        assert_eq!(cut.t1.len(), 2);
        assert_eq!(cut.t1[1], t.red.t1[1].view((0, 0), (2, 2)).into_owned());
        let small_basis = t.basis.truncate(2);
        let direct = project_operators(&t.ops, &small_basis).unwrap();
        assert!((&cut.d0 - &direct.d0).abs().max() <= 1e-12);
        assert!((&cut.t3[0] - &direct.t3[0]).abs().max() <= 1e-12);

        assert!(rb_error(&t.ops, &t.basis, &t.red, &t.branch, &[], 0.0).is_err());
    }

    #[test]
    fn container_roundtrip_is_bitwise() {
        let t = &*TRAINING;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("basis.rom");
        save_rom(&path, &t.basis, &t.red).unwrap();
        let (basis2, red2) = load_rom(&path).unwrap();

        assert_eq!(basis2.n, t.basis.n);
        assert_eq!(basis2.space.mesh.l, t.ops.space.mesh.l);
        assert_eq!(basis2.space.degree, t.ops.space.degree);
        for f in 0..4 {
            assert_eq!(basis2.fields[f], t.basis.fields[f]);
            assert_eq!(basis2.pod_energies[f], t.basis.pod_energies[f]);
        }
        assert_eq!(red2, t.red);

        // corrupted magic is rejected
        let bogus = dir.path().join("bogus.rom");
        std::fs::write(&bogus, b"NOTAROM!").unwrap();
        assert!(matches!(load_rom(&bogus), Err(VkError::Config(_))));
    }
}
