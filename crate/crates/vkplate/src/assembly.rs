//! Assembly of the bilinear and trilinear forms on interior dofs.
//!
//! All operators act on the zero-trace interior system. The in-plane load
//! enters through `assemble_load_matrix`, the integrated-by-parts form of
//! the compression term: it needs only first derivatives and extends
//! unchanged to the nonuniform load profile. The bracket form keeps the
//! element-wise second derivatives of its finite element arguments.

use std::sync::Arc;

use crate::error::{Result, VkError};
use crate::fespace::{FeSpace, ScalarField, Tabulation};
use crate::sparse::CsrMatrix;

/// Stiffness matrix A_ij = ∫ ∇E^j·∇E^i. Symmetric positive definite.
pub fn assemble_stiffness(space: &Arc<FeSpace>) -> CsrMatrix {
    assemble_interior(space, false, |tab, local| {
        let nb = tab.nb;
        for q in 0..tab.weights.len() {
            let w = tab.weights[q];
            for i in 0..nb {
                let gi = tab.grad[q * nb + i];
                for j in 0..nb {
                    let gj = tab.grad[q * nb + j];
                    local[i * nb + j] += w * (gi[0] * gj[0] + gi[1] * gj[1]);
                }
            }
        }
    })
    .expect("stiffness needs no second derivatives")
}

/// Mass matrix B_ij = ∫ E^j E^i on interior dofs.
pub fn assemble_mass(space: &Arc<FeSpace>) -> CsrMatrix {
    assemble(space, false, false, mass_kernel).expect("mass needs no second derivatives")
}

/// Boundary-included mass matrix; its total entry sum is the plate area.
pub fn assemble_mass_full(space: &Arc<FeSpace>) -> CsrMatrix {
    assemble(space, true, false, mass_kernel).expect("mass needs no second derivatives")
}

fn mass_kernel(tab: &ElementContext, local: &mut [f64]) {
    let nb = tab.nb;
    for q in 0..tab.weights.len() {
        let w = tab.weights[q];
        for i in 0..nb {
            let pi = tab.phi[q * nb + i];
            for j in 0..nb {
                local[i * nb + j] += w * pi * tab.phi[q * nb + j];
            }
        }
    }
}

/// Load matrix D(ψ)_ij = ∫ (1 − ψ·y/L) ∂x E^j ∂x E^i.
///
/// ψ interpolates from uniform compression (ψ=0) to a profile that reverses
/// sign across the plate (ψ=2); values outside [0, 2] are accepted with a
/// warning on stderr.
pub fn assemble_load_matrix(space: &Arc<FeSpace>, psi: f64) -> CsrMatrix {
    if !(0.0..=2.0).contains(&psi) {
        eprintln!("warning: load profile parameter psi={psi} outside the modeled range [0, 2]");
    }
    let l = space.mesh.l;
    assemble_interior(space, false, move |tab, local| {
        let nb = tab.nb;
        for q in 0..tab.weights.len() {
            let weight = tab.weights[q] * (1.0 - psi * tab.points[q][1] / l);
            for i in 0..nb {
                let gi = tab.grad[q * nb + i][0];
                for j in 0..nb {
                    local[i * nb + j] += weight * gi * tab.grad[q * nb + j][0];
                }
            }
        }
    })
    .expect("load matrix needs no second derivatives")
}

/// The ψ-affine split D(ψ) = D₀ − ψ·D₁ with D₀ = ∫∂xE^j∂xE^i and
/// D₁ = ∫(y/L)∂xE^j∂xE^i; lets callers reassemble any ψ by a scaled sum.
pub fn assemble_load_parts(space: &Arc<FeSpace>) -> (CsrMatrix, CsrMatrix) {
    let d0 = assemble_directional_stiffness(space, 0);
    let l = space.mesh.l;
    let d1 = assemble_interior(space, false, move |tab, local| {
        let nb = tab.nb;
        for q in 0..tab.weights.len() {
            let weight = tab.weights[q] * tab.points[q][1] / l;
            for i in 0..nb {
                let gi = tab.grad[q * nb + i][0];
                for j in 0..nb {
                    local[i * nb + j] += weight * gi * tab.grad[q * nb + j][0];
                }
            }
        }
    })
    .expect("load part needs no second derivatives");
    (d0, d1)
}

/// Single-direction stiffness ∫ ∂ₐE^j ∂ₐE^i for axis a ∈ {0, 1}.
pub fn assemble_directional_stiffness(space: &Arc<FeSpace>, axis: usize) -> CsrMatrix {
    assert!(axis < 2);
    assemble_interior(space, false, move |tab, local| {
        let nb = tab.nb;
        for q in 0..tab.weights.len() {
            let w = tab.weights[q];
            for i in 0..nb {
                let gi = tab.grad[q * nb + i][axis];
                for j in 0..nb {
                    local[i * nb + j] += w * gi * tab.grad[q * nb + j][axis];
                }
            }
        }
    })
    .expect("directional stiffness needs no second derivatives")
}

/// Which slot of the symmetric bracket carries the frozen field; both yield
/// the same matrix, and the swapped evaluation exists to verify exactly that.
#[derive(Clone, Copy, PartialEq)]
pub enum BracketSlot {
    ZFirst,
    ZSecond,
}

/// Bracket matrix M(z)_ij = ∫ [z, E^j] E^i, with
/// [p, q] = p_xx q_yy − 2 p_xy q_xy + p_yy q_xx evaluated element-wise.
/// Bilinear in z. Requires degree ≥ 2.
pub fn assemble_bracket(space: &Arc<FeSpace>, z: &ScalarField) -> Result<CsrMatrix> {
    assemble_bracket_in_slot(space, z, BracketSlot::ZFirst)
}

/// Same value as [`assemble_bracket`] through the slot-swapped integrand
/// [E^j, z]; exercises the symmetry of the bracket as a distinct code path.
pub fn assemble_bracket_in_slot(
    space: &Arc<FeSpace>,
    z: &ScalarField,
    slot: BracketSlot,
) -> Result<CsrMatrix> {
    if !Arc::ptr_eq(space, &z.space) {
        return Err(VkError::InvalidArgument(
            "bracket field must live on the assembly space".into(),
        ));
    }
    let z = z.clone();
    assemble_bracket_with_coeffs(space, move |dof| z.coeff_of_global(dof), slot)
}

/// Bracket assembly over arbitrary global dof coefficients (boundary values
/// included); the zero-trace entry points above specialize this.
fn assemble_bracket_with_coeffs(
    space: &Arc<FeSpace>,
    coeff_at: impl Fn(usize) -> f64 + 'static,
    slot: BracketSlot,
) -> Result<CsrMatrix> {
    assemble_interior(space, true, move |tab, local| {
        let nb = tab.nb;
        let hess = tab.hess.as_ref().expect("requested with hessians");
        let nq = tab.weights.len();
        // hessian of z at each quadrature point of this element
        let mut zh = vec![[0.0f64; 3]; nq];
        for (j, &dof) in tab.dofs.iter().enumerate() {
            let c = coeff_at(dof);
            if c == 0.0 {
                continue;
            }
            for q in 0..nq {
                let h = hess[q * nb + j];
                zh[q][0] += c * h[0];
                zh[q][1] += c * h[1];
                zh[q][2] += c * h[2];
            }
        }
        for q in 0..nq {
            let w = tab.weights[q];
            let z = zh[q];
            for j in 0..nb {
                let h = hess[q * nb + j];
                let bracket = match slot {
                    BracketSlot::ZFirst => z[0] * h[2] - 2.0 * z[1] * h[1] + z[2] * h[0],
                    BracketSlot::ZSecond => h[0] * z[2] - 2.0 * h[1] * z[1] + h[2] * z[0],
                };
                let wb = w * bracket;
                for i in 0..nb {
                    local[i * nb + j] += wb * tab.phi[q * nb + i];
                }
            }
        }
    })
}

/// Bracket matrix ∫ [z, E^j] E^i for a z with continuous second derivatives,
/// given by its Hessian (xx, xy, yy) as a function of the physical point.
///
/// Assembled in the integrated-by-parts (cofactor) form
/// −∫ cof(D²z) ∇E^j · ∇E^i, valid because the mixed derivatives of a smooth
/// z commute; only first derivatives of the basis appear, so this agrees
/// with the broken-derivative route in the limit but, unlike it, reproduces
/// the load matrix exactly at finite resolution.
pub fn assemble_bracket_smooth(
    space: &Arc<FeSpace>,
    hess: impl Fn(f64, f64) -> [f64; 3] + 'static,
) -> CsrMatrix {
    assemble_interior(space, false, move |tab, local| {
        let nb = tab.nb;
        for q in 0..tab.weights.len() {
            let [x, y] = tab.points[q];
            let h = hess(x, y);
            let cof = [[h[2], -h[1]], [-h[1], h[0]]];
            let w = tab.weights[q];
            for i in 0..nb {
                let gi = tab.grad[q * nb + i];
                for j in 0..nb {
                    let gj = tab.grad[q * nb + j];
                    let flux = [
                        cof[0][0] * gj[0] + cof[0][1] * gj[1],
                        cof[1][0] * gj[0] + cof[1][1] * gj[1],
                    ];
                    local[i * nb + j] -= w * (gi[0] * flux[0] + gi[1] * flux[1]);
                }
            }
        }
    })
    .expect("cofactor form needs no second derivatives")
}

/// Tabulation extended with the element's global dofs, as handed to kernels.
pub struct ElementContext {
    tab: Tabulation,
    pub dofs: Vec<usize>,
}

impl std::ops::Deref for ElementContext {
    type Target = Tabulation;
    fn deref(&self) -> &Tabulation {
        &self.tab
    }
}

fn assemble_interior(
    space: &Arc<FeSpace>,
    with_hessian: bool,
    kernel: impl FnMut(&ElementContext, &mut [f64]),
) -> Result<CsrMatrix> {
    assemble(space, false, with_hessian, kernel)
}

/// Shared element loop: tabulate, run the kernel on a zeroed local matrix,
/// scatter into triplets (interior dofs only unless `include_boundary`).
fn assemble(
    space: &Arc<FeSpace>,
    include_boundary: bool,
    with_hessian: bool,
    kernel: impl FnMut(&ElementContext, &mut [f64]),
) -> Result<CsrMatrix> {
    let order: Vec<usize> = (0..space.mesh.triangles.len()).collect();
    assemble_in_order(space, &order, include_boundary, with_hessian, kernel)
}

/// Element loop over an explicit element order. The result is bitwise
/// independent of the order (duplicate triplets are summed canonically),
/// which the test suite verifies by permuting.
pub(crate) fn assemble_in_order(
    space: &Arc<FeSpace>,
    order: &[usize],
    include_boundary: bool,
    with_hessian: bool,
    mut kernel: impl FnMut(&ElementContext, &mut [f64]),
) -> Result<CsrMatrix> {
    let nb = space.basis_len();
    let rule = space.default_rule();
    let n = if include_boundary { space.dof_coords.len() } else { space.interior_dofs.len() };
    let mut triplets = Vec::with_capacity(order.len() * nb * nb);
    let mut local = vec![0.0f64; nb * nb];

    for &tri in order {
        let ctx = ElementContext {
            tab: space.tabulate(tri, &rule, with_hessian)?,
            dofs: space.cell_dofs(tri).to_vec(),
        };
        local.fill(0.0);
        kernel(&ctx, &mut local);

        for (i, &gi) in ctx.dofs.iter().enumerate() {
            let row = if include_boundary {
                Some(gi)
            } else {
                space.interior_slot(gi)
            };
            let Some(row) = row else { continue };
            for (j, &gj) in ctx.dofs.iter().enumerate() {
                let col = if include_boundary {
                    Some(gj)
                } else {
                    space.interior_slot(gj)
                };
                let Some(col) = col else { continue };
                let v = local[i * nb + j];
                if v != 0.0 {
                    triplets.push((row, col, v));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, &mut triplets))
}

/// The λ-independent operators of one space, assembled once and shared.
pub struct Operators {
    pub space: Arc<FeSpace>,
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub d0: CsrMatrix,
    pub d1: CsrMatrix,
}

impl Operators {
    pub fn build(space: &Arc<FeSpace>) -> Operators {
        let (d0, d1) = assemble_load_parts(space);
        Operators {
            space: space.clone(),
            a: assemble_stiffness(space),
            b: assemble_mass(space),
            d0,
            d1,
        }
    }

    /// D(ψ) from the affine split.
    pub fn load_matrix(&self, psi: f64) -> CsrMatrix {
        self.d0.add_scaled(&self.d1, -psi)
    }

    pub fn interior_len(&self) -> usize {
        self.a.nrows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{build_space, interpolate};
    use crate::mesh::build_mesh;
    use crate::sparse::{factor_llt, norm2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(l: f64, nx: usize, ny: usize, degree: usize) -> Arc<FeSpace> {
        build_space(build_mesh(l, nx, ny).unwrap(), degree).unwrap()
    }

    #[test]
    fn stiffness_symmetric_positive_definite() {
        let s = space(1.0, 6, 6, 2);
        let a = assemble_stiffness(&s);
        assert!(a.max_asymmetry() < 1e-13);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..a.nrows).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(a.bilinear(&x, &x) > 0.0);
        }
    }

    #[test]
    fn laplacian_eigenvalue_oracle() {
        // smallest eigenvalue of A u = μ B u on the unit square is 2π²;
        // inverse power iteration suffices since the next mode is 5π²
        let two_pi_sq = 2.0 * std::f64::consts::PI.powi(2);
        let mut errs = Vec::new();
        for ny in [8, 16] {
            let s = space(1.0, ny, ny, 2);
            let a = assemble_stiffness(&s);
            let b = assemble_mass(&s);
            let f = factor_llt(&a).unwrap();
            let mut x = vec![1.0; a.nrows];
            for _ in 0..60 {
                let y = f.solve(&b.apply(&x)).unwrap();
                let scale = norm2(&y);
                x = y.into_iter().map(|v| v / scale).collect();
            }
            let mu = a.bilinear(&x, &x) / b.bilinear(&x, &x);
            errs.push((mu - two_pi_sq).abs() / two_pi_sq);
        }
        assert!(errs[0] < 1e-2, "coarse relative error {}", errs[0]);
        assert!(errs[1] < errs[0] / 3.0, "no refinement gain: {errs:?}");
    }

    #[test]
    fn full_mass_total_equals_plate_area() {
        for (l, nx, ny, degree) in [(1.0, 5, 5, 2), (2.0, 6, 3, 1), (1.5, 4, 4, 3)] {
            let s = space(l, nx, ny, degree);
            let b_full = assemble_mass_full(&s);
            let total: f64 = b_full.values.iter().sum();
            assert!((total - l).abs() <= 1e-12 * l, "degree {degree}: {total} vs {l}");
        }
    }

    #[test]
    fn interior_mass_quadratic_form_matches_quadrature() {
        // 1ᵀB1 = ∫(Σ interior E^i)², with the sum being the interpolant of 1
        // that drops to zero on the boundary layer
        let s = space(1.0, 5, 5, 2);
        let b = assemble_mass(&s);
        let ones = vec![1.0; b.nrows];
        let quad_form = b.bilinear(&ones, &ones);

        let field = interpolate(&s, |_, _| 1.0);
        let rule = s.default_rule();
        let mut integral = 0.0;
        for tri in 0..s.mesh.triangles.len() {
            let tab = s.tabulate(tri, &rule, false).unwrap();
            let dofs = s.cell_dofs(tri);
            for q in 0..tab.weights.len() {
                let mut v = 0.0;
                for (j, &dof) in dofs.iter().enumerate() {
                    v += field.coeff_of_global(dof) * tab.phi[q * tab.nb + j];
                }
                integral += tab.weights[q] * v * v;
            }
        }
        assert!((quad_form - integral).abs() <= 1e-12);
    }

    #[test]
    fn load_matrix_at_zero_is_x_stiffness() {
        let s = space(2.0, 6, 4, 2);
        let d_zero = assemble_load_matrix(&s, 0.0);
        let dir_x = assemble_directional_stiffness(&s, 0);
        assert!(d_zero.max_abs_diff(&dir_x) <= 1e-13);
        // and A = x-part + y-part
        let a = assemble_stiffness(&s);
        let sum = dir_x.add_scaled(&assemble_directional_stiffness(&s, 1), 1.0);
        assert!(a.max_abs_diff(&sum) <= 1e-12);
    }

    #[test]
    fn load_matrix_symmetry_and_affinity() {
        let s = space(2.0, 5, 4, 2);
        let (d0, d1) = assemble_load_parts(&s);
        for psi in [0.0, 1.0, 2.0] {
            let d = assemble_load_matrix(&s, psi);
            assert!(d.max_asymmetry() < 1e-13);
            let affine = d0.add_scaled(&d1, -psi);
            assert!(d.max_abs_diff(&affine) <= 1e-13);
        }
    }

    #[test]
    fn load_equivalence_with_trilinear_route() {
        // the compression term can also be assembled through the bracket
        // form with the parabolic load shape −y²/2 frozen in one slot; its
        // integrated-by-parts assembly must reproduce D(0) entrywise
        let s = space(1.0, 6, 6, 2);
        let via_bracket = assemble_bracket_smooth(&s, |_, _| [0.0, 0.0, -1.0]);
        let d_zero = assemble_load_matrix(&s, 0.0);
        assert!(via_bracket.max_abs_diff(&d_zero) <= 1e-12);
    }

    #[test]
    fn bracket_of_reference_quadratic() {
        // z = x²/2 has z_xx = 1, rest 0, so [z, E^j] = ∂yy E^j and M(z)
        // must match the directly assembled ∫ ∂yyE^j E^i; the interpolant
        // keeps its boundary values here, otherwise it is not x²/2 on
        // boundary-adjacent elements
        let s = space(1.0, 4, 4, 2);
        let coords = s.dof_coords.clone();
        let m = assemble_bracket_with_coeffs(
            &s,
            move |dof| 0.5 * coords[dof][0] * coords[dof][0],
            BracketSlot::ZFirst,
        )
        .unwrap();

        let reference = assemble_in_order(
            &s,
            &(0..s.mesh.triangles.len()).collect::<Vec<_>>(),
            false,
            true,
            |tab, local| {
                let nb = tab.nb;
                let hess = tab.hess.as_ref().unwrap();
                for q in 0..tab.weights.len() {
                    let w = tab.weights[q];
                    for j in 0..nb {
                        let dyy = hess[q * nb + j][2];
                        for i in 0..nb {
                            local[i * nb + j] += w * dyy * tab.phi[q * nb + i];
                        }
                    }
                }
            },
        )
        .unwrap();
        assert!(m.max_abs_diff(&reference) <= 1e-12);
    }

    #[test]
    fn bracket_bilinear_in_frozen_field() {
        let s = space(1.0, 4, 4, 2);
        let z1 = interpolate(&s, |x, y| x * y * (1.0 - x));
        let z2 = interpolate(&s, |x, y| (x + y) * y);
        let m1 = assemble_bracket(&s, &z1).unwrap();
        let m2 = assemble_bracket(&s, &z2).unwrap();

        let combo = ScalarField {
            space: s.clone(),
            coeffs: z1
                .coeffs
                .iter()
                .zip(&z2.coeffs)
                .map(|(a, b)| 2.0 * a - 0.25 * b)
                .collect(),
        };
        let m_combo = assemble_bracket(&s, &combo).unwrap();
        let expected = m1.add_scaled(&m1, 1.0).add_scaled(&m2, -0.25);
        assert!(m_combo.max_abs_diff(&expected) <= 1e-12);

        let zero = assemble_bracket(&s, &ScalarField::zero(&s)).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bracket_rejects_degree_one() {
        let s = space(1.0, 3, 3, 1);
        let z = interpolate(&s, |x, y| x * y);
        assert!(matches!(
            assemble_bracket(&s, &z),
            Err(VkError::UnsupportedOperation(_))
        ));
    }

    #[test]
    fn bracket_slots_agree() {
        // the frozen field may sit in either bracket slot: random z and
        // vectors p, q must see the same bilinear value through both paths
        let s = space(1.0, 4, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let z = ScalarField {
                space: s.clone(),
                coeffs: (0..s.interior_dofs.len())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            };
            let m1 = assemble_bracket_in_slot(&s, &z, BracketSlot::ZFirst).unwrap();
            let m2 = assemble_bracket_in_slot(&s, &z, BracketSlot::ZSecond).unwrap();
            let p: Vec<f64> = (0..m1.nrows).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: Vec<f64> = (0..m1.nrows).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v1 = m1.bilinear(&p, &q);
            let v2 = m2.bilinear(&p, &q);
            assert!((v1 - v2).abs() <= 1e-12 * v1.abs().max(1.0));
        }
    }

    #[test]
    fn assembly_invariant_under_element_relabeling() {
        let s = space(1.0, 4, 3, 2);
        let natural: Vec<usize> = (0..s.mesh.triangles.len()).collect();
        let mut shuffled = natural.clone();
        // deterministic shuffle
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let kernel = |tab: &ElementContext, local: &mut [f64]| {
            let nb = tab.nb;
            for q in 0..tab.weights.len() {
                let w = tab.weights[q];
                for i in 0..nb {
                    let gi = tab.grad[q * nb + i];
                    for j in 0..nb {
                        let gj = tab.grad[q * nb + j];
                        local[i * nb + j] += w * (gi[0] * gj[0] + gi[1] * gj[1]);
                    }
                }
            }
        };
        let m1 = assemble_in_order(&s, &natural, false, false, kernel).unwrap();
        let m2 = assemble_in_order(&s, &shuffled, false, false, kernel).unwrap();
        assert_eq!(m1.values, m2.values);
        assert_eq!(m1.col_indices, m2.col_indices);
    }

    #[test]
    fn operators_cache_matches_direct_assembly() {
        let s = space(2.0, 4, 2, 2);
        let ops = Operators::build(&s);
        for psi in [0.0, 0.7, 2.0] {
            let direct = assemble_load_matrix(&s, psi);
            assert!(ops.load_matrix(psi).max_abs_diff(&direct) <= 1e-13);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn stiffness_agrees_with_seminorm(seed in any::<u64>()) {
            let s = space(1.0, 4, 4, 2);
            let a = assemble_stiffness(&s);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = ScalarField {
                space: s.clone(),
                coeffs: (0..a.nrows).map(|_| rng.random_range(-1.0..1.0)).collect(),
            };
            let via_matrix = a.bilinear(&f.coeffs, &f.coeffs);
            let via_quadrature = f.h1_seminorm().powi(2);
            prop_assert!((via_matrix - via_quadrature).abs() <= 1e-10 * via_matrix.max(1.0));
        }
    }
}
