//! Continuous Lagrange spaces on the structured mesh.
//!
//! Homogeneous Dirichlet data on all fields is built in: a `ScalarField`
//! carries coefficients on interior dofs only and is implicitly zero on ∂Ω,
//! so every assembled operator acts on the reduced interior system.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Result, VkError};
use crate::mesh::Mesh;
use crate::quadrature::QuadRule;

/// Lagrange space of degree r ∈ {1, 2, 3}. On the structured mesh the dofs
/// of degree r form the uniform lattice of (r·nx+1) × (r·ny+1) points, which
/// keeps the local-to-global map free of edge-orientation bookkeeping: every
/// reference node of every triangle lands exactly on a lattice point.
pub struct FeSpace {
    pub mesh: Mesh,
    pub degree: usize,
    /// Coordinates of every global dof, lattice row-major bottom to top.
    pub dof_coords: Vec<[f64; 2]>,
    /// Global dof ids per triangle, `basis_len()` entries each.
    cell_dofs: Vec<usize>,
    /// Global ids of dofs strictly inside Ω, ascending.
    pub interior_dofs: Vec<usize>,
    /// Global ids of dofs on ∂Ω, ascending.
    pub boundary_dofs: Vec<usize>,
    /// Global dof → slot in `interior_dofs`, or NONE for boundary dofs.
    interior_slot: Vec<u32>,
    /// Monomial exponents of the reference polynomial basis.
    exponents: Vec<(i32, i32)>,
    /// Column j holds the monomial coefficients of nodal basis function j.
    nodal_coeff: DMatrix<f64>,
    /// Inverse Jacobians of the two element geometries (lower, upper).
    jac_inv: [[[f64; 2]; 2]; 2],
    det_jac: f64,
}

const NONE: u32 = u32::MAX;

/// Builds the degree-`degree` space on `mesh`. The mesh is consumed; spaces
/// are shared behind an `Arc` by fields, states, and assembled operators.
pub fn build_space(mesh: Mesh, degree: usize) -> Result<Arc<FeSpace>> {
    if !(1..=3).contains(&degree) {
        return Err(VkError::InvalidArgument(format!(
            "element degree must be 1, 2, or 3, got {degree}"
        )));
    }
    let r = degree;
    let (nx, ny) = (mesh.nx, mesh.ny);
    let (w, h) = (r * nx + 1, r * ny + 1);
    let hx = mesh.l / nx as f64;
    let hy = 1.0 / ny as f64;

    let mut dof_coords = Vec::with_capacity(w * h);
    let mut interior_dofs = Vec::new();
    let mut boundary_dofs = Vec::new();
    let mut interior_slot = vec![NONE; w * h];
    for fy in 0..h {
        for fx in 0..w {
            let g = fy * w + fx;
            dof_coords.push([fx as f64 * hx / r as f64, fy as f64 * hy / r as f64]);
            if fx == 0 || fx == w - 1 || fy == 0 || fy == h - 1 {
                boundary_dofs.push(g);
            } else {
                interior_slot[g] = interior_dofs.len() as u32;
                interior_dofs.push(g);
            }
        }
    }

    // Reference nodes (a/r, b/r) and matching monomial basis ξ^p η^q.
    let mut ref_nodes = Vec::new();
    let mut exponents = Vec::new();
    for b in 0..=r {
        for a in 0..=(r - b) {
            ref_nodes.push((a, b));
            exponents.push((a as i32, b as i32));
        }
    }
    let nb = ref_nodes.len();

    let mut vandermonde = DMatrix::zeros(nb, nb);
    for (i, &(a, b)) in ref_nodes.iter().enumerate() {
        let (xi, eta) = (a as f64 / r as f64, b as f64 / r as f64);
        for (m, &(p, q)) in exponents.iter().enumerate() {
            vandermonde[(i, m)] = xi.powi(p) * eta.powi(q);
        }
    }
    let nodal_coeff = vandermonde
        .try_inverse()
        .expect("Lagrange Vandermonde matrix is invertible");

    // Local node (a, b) of the lower triangle of cell (cx, cy) sits at
    // lattice point (r·cx + a + b, r·cy + b); for the upper triangle at
    // (r·cx + a, r·cy + a + b). Both follow from the affine vertex maps.
    let mut cell_dofs = Vec::with_capacity(2 * nx * ny * nb);
    for cy in 0..ny {
        for cx in 0..nx {
            for &(a, b) in &ref_nodes {
                cell_dofs.push((r * cy + b) * w + (r * cx + a + b));
            }
            for &(a, b) in &ref_nodes {
                cell_dofs.push((r * cy + a + b) * w + (r * cx + a));
            }
        }
    }

    // Element Jacobians: lower has columns (hx,0),(hx,hy); upper (hx,hy),(0,hy).
    let jac_inv = [
        [[1.0 / hx, -1.0 / hy], [0.0, 1.0 / hy]],
        [[1.0 / hx, 0.0], [-1.0 / hx, 1.0 / hy]],
    ];

    Ok(Arc::new(FeSpace {
        mesh,
        degree,
        dof_coords,
        cell_dofs,
        interior_dofs,
        boundary_dofs,
        interior_slot,
        exponents,
        nodal_coeff,
        jac_inv,
        det_jac: hx * hy,
    }))
}

/// Values, physical gradients, and (optionally) physical second derivatives
/// of all local basis functions at the quadrature points of one triangle.
#[derive(Debug)]
pub struct Tabulation {
    /// Physical quadrature points.
    pub points: Vec<[f64; 2]>,
    /// Physical weights (reference weight × |det J|).
    pub weights: Vec<f64>,
    /// Basis values, laid out `[q * nb + j]`.
    pub phi: Vec<f64>,
    /// Physical gradients, same layout.
    pub grad: Vec<[f64; 2]>,
    /// Physical second derivatives (xx, xy, yy), same layout.
    pub hess: Option<Vec<[f64; 3]>>,
    pub nb: usize,
}

impl FeSpace {
    /// Number of local basis functions per element.
    pub fn basis_len(&self) -> usize {
        self.exponents.len()
    }

    /// Global dof ids of triangle `tri`.
    pub fn cell_dofs(&self, tri: usize) -> &[usize] {
        let nb = self.basis_len();
        &self.cell_dofs[tri * nb..(tri + 1) * nb]
    }

    /// Slot of global dof `g` in the interior numbering, if interior.
    pub fn interior_slot(&self, g: usize) -> Option<usize> {
        match self.interior_slot[g] {
            NONE => None,
            s => Some(s as usize),
        }
    }

    /// Quadrature rule exact for every form this space assembles (total
    /// integrand degree ≤ 2r, the bracket term included for r ≥ 2).
    pub fn default_rule(&self) -> QuadRule {
        QuadRule::for_degree(2 * self.degree)
    }

    /// Evaluates the reference basis and its requested derivatives, then
    /// pushes them through the element's affine map. Derivatives are exact
    /// polynomial expressions, never finite differences.
    pub fn tabulate(
        &self,
        tri: usize,
        rule: &QuadRule,
        with_hessian: bool,
    ) -> Result<Tabulation> {
        if with_hessian && self.degree < 2 {
            return Err(VkError::UnsupportedOperation(
                "second derivatives of a degree-1 space vanish identically; \
                 bracket terms need degree ≥ 2"
                    .into(),
            ));
        }
        let nb = self.basis_len();
        let nq = rule.points.len();
        let verts = self.mesh.triangles[tri];
        let v0 = self.mesh.vertices[verts[0]];
        let v1 = self.mesh.vertices[verts[1]];
        let v2 = self.mesh.vertices[verts[2]];
        let ji = self.jac_inv[tri % 2];

        let mut points = Vec::with_capacity(nq);
        let mut weights = Vec::with_capacity(nq);
        let mut phi = vec![0.0; nq * nb];
        let mut grad = vec![[0.0; 2]; nq * nb];
        let mut hess = with_hessian.then(|| vec![[0.0; 3]; nq * nb]);

        for (q, &[xi, eta]) in rule.points.iter().enumerate() {
            points.push([
                v0[0] + (v1[0] - v0[0]) * xi + (v2[0] - v0[0]) * eta,
                v0[1] + (v1[1] - v0[1]) * xi + (v2[1] - v0[1]) * eta,
            ]);
            weights.push(rule.weights[q] * self.det_jac);

            for j in 0..nb {
                let (mut val, mut d) = (0.0, [0.0f64; 2]);
                let mut h_ref = [0.0f64; 3]; // (ξξ, ξη, ηη)
                for (m, &(p, qe)) in self.exponents.iter().enumerate() {
                    let c = self.nodal_coeff[(m, j)];
                    if c == 0.0 {
                        continue;
                    }
                    let xp = xi.powi(p);
                    let yq = eta.powi(qe);
                    val += c * xp * yq;
                    if p > 0 {
                        d[0] += c * p as f64 * xi.powi(p - 1) * yq;
                    }
                    if qe > 0 {
                        d[1] += c * qe as f64 * xp * eta.powi(qe - 1);
                    }
                    if with_hessian {
                        if p > 1 {
                            h_ref[0] += c * (p * (p - 1)) as f64 * xi.powi(p - 2) * yq;
                        }
                        if p > 0 && qe > 0 {
                            h_ref[1] +=
                                c * (p * qe) as f64 * xi.powi(p - 1) * eta.powi(qe - 1);
                        }
                        if qe > 1 {
                            h_ref[2] += c * (qe * (qe - 1)) as f64 * xp * eta.powi(qe - 2);
                        }
                    }
                }
                phi[q * nb + j] = val;
                // ∇ₓ = Jᵀ⁻¹ ∇_ξ with Jᵀ⁻¹ = jac_inv transposed row-applied
                grad[q * nb + j] = [
                    ji[0][0] * d[0] + ji[1][0] * d[1],
                    ji[0][1] * d[0] + ji[1][1] * d[1],
                ];
                if let Some(hess) = hess.as_mut() {
                    // Hₓ = J⁻ᵀ H_ξ J⁻¹, spelled out for the symmetric 2×2 case
                    let (a, b) = (ji[0][0], ji[0][1]);
                    let (c, d2) = (ji[1][0], ji[1][1]);
                    hess[q * nb + j] = [
                        a * a * h_ref[0] + 2.0 * a * c * h_ref[1] + c * c * h_ref[2],
                        a * b * h_ref[0] + (a * d2 + b * c) * h_ref[1] + c * d2 * h_ref[2],
                        b * b * h_ref[0] + 2.0 * b * d2 * h_ref[1] + d2 * d2 * h_ref[2],
                    ];
                }
            }
        }

        Ok(Tabulation { points, weights, phi, grad, hess, nb })
    }
}

/// A scalar function in the zero-trace subspace: coefficients over interior
/// dofs, identically zero on the boundary.
#[derive(Clone)]
pub struct ScalarField {
    pub space: Arc<FeSpace>,
    pub coeffs: Vec<f64>,
}

impl std::fmt::Debug for FeSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeSpace")
            .field("l", &self.mesh.l)
            .field("nx", &self.mesh.nx)
            .field("ny", &self.mesh.ny)
            .field("degree", &self.degree)
            .field("interior_dofs", &self.interior_dofs.len())
            .finish()
    }
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("degree", &self.space.degree)
            .field("interior_dofs", &self.coeffs.len())
            .field("max_abs", &self.max_abs().0)
            .finish()
    }
}

impl ScalarField {
    pub fn zero(space: &Arc<FeSpace>) -> ScalarField {
        ScalarField { space: space.clone(), coeffs: vec![0.0; space.interior_dofs.len()] }
    }

    /// Coefficient of global dof `g` (zero on the boundary).
    pub fn coeff_of_global(&self, g: usize) -> f64 {
        self.space.interior_slot(g).map_or(0.0, |s| self.coeffs[s])
    }

    /// Signed coefficient of largest magnitude and its global dof index.
    /// Ties resolve to the lowest dof; an empty interior yields (0, 0).
    pub fn max_abs(&self) -> (f64, usize) {
        let mut best = (0.0f64, 0usize);
        let mut found = false;
        for (slot, &c) in self.coeffs.iter().enumerate() {
            if !found || c.abs() > best.0.abs() {
                best = (c, self.space.interior_dofs[slot]);
                found = true;
            }
        }
        best
    }

    /// H¹ seminorm √(∫|∇f|²), integrated element by element with the
    /// space's exact rule; equals √(coeffsᵀ A coeffs) for the assembled
    /// stiffness A up to roundoff.
    pub fn h1_seminorm(&self) -> f64 {
        let space = &self.space;
        let rule = space.default_rule();
        let mut acc = 0.0;
        for tri in 0..space.mesh.triangles.len() {
            let tab = space.tabulate(tri, &rule, false).expect("gradients always available");
            let dofs = space.cell_dofs(tri);
            for q in 0..tab.weights.len() {
                let mut g = [0.0f64; 2];
                for (j, &dof) in dofs.iter().enumerate() {
                    let c = self.coeff_of_global(dof);
                    if c != 0.0 {
                        let d = tab.grad[q * tab.nb + j];
                        g[0] += c * d[0];
                        g[1] += c * d[1];
                    }
                }
                acc += tab.weights[q] * (g[0] * g[0] + g[1] * g[1]);
            }
        }
        acc.sqrt()
    }

    /// Point evaluation by element-local polynomial evaluation.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let space = &self.space;
        let mesh = &space.mesh;
        let tol = 1e-12 * mesh.l.max(1.0);
        if !(-tol..=mesh.l + tol).contains(&x) || !(-tol..=1.0 + tol).contains(&y) {
            return Err(VkError::OutOfDomain { x, y });
        }
        let hx = mesh.l / mesh.nx as f64;
        let hy = 1.0 / mesh.ny as f64;
        let cx = ((x / hx) as usize).min(mesh.nx - 1);
        let cy = ((y / hy) as usize).min(mesh.ny - 1);
        // cell-local coordinates in [0,1]²; the diagonal splits at ηc = ξc
        let xc = (x - cx as f64 * hx) / hx;
        let yc = (y - cy as f64 * hy) / hy;
        let (tri, xi, eta) = if yc <= xc {
            (2 * (cy * mesh.nx + cx), xc - yc, yc)
        } else {
            (2 * (cy * mesh.nx + cx) + 1, xc, yc - xc)
        };

        let mut val = 0.0;
        for (j, &dof) in space.cell_dofs(tri).iter().enumerate() {
            let c = self.coeff_of_global(dof);
            if c == 0.0 {
                continue;
            }
            let mut basis = 0.0;
            for (m, &(p, q)) in space.exponents.iter().enumerate() {
                basis += space.nodal_coeff[(m, j)] * xi.powi(p) * eta.powi(q);
            }
            val += c * basis;
        }
        Ok(val)
    }
}

/// Lagrange interpolation: coefficients are `f` at interior dof coordinates.
pub fn interpolate(space: &Arc<FeSpace>, f: impl Fn(f64, f64) -> f64) -> ScalarField {
    let coeffs = space
        .interior_dofs
        .iter()
        .map(|&g| {
            let [x, y] = space.dof_coords[g];
            f(x, y)
        })
        .collect();
    ScalarField { space: space.clone(), coeffs }
}
