//! Symmetric quadrature rules on the reference triangle
//! {(ξ, η) : ξ ≥ 0, η ≥ 0, ξ + η ≤ 1}.

/// A positive-weight rule whose weights sum to the reference area 1/2.
#[derive(Clone, Debug)]
pub struct QuadRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Highest total polynomial degree integrated exactly.
    pub exact_degree: usize,
}

impl QuadRule {
    /// Smallest stocked rule exact for total degree `degree`.
    ///
    /// Stocked rules cover degree ≤ 6, enough for every form assembled on
    /// spaces up to cubics (integrands have total degree at most 2r).
    pub fn for_degree(degree: usize) -> QuadRule {
        match degree {
            0..=2 => midpoint_rule(),
            3 | 4 => six_point_rule(),
            5 | 6 => twelve_point_rule(),
            d => panic!("no stocked triangle rule exact to degree {d}"),
        }
    }
}

/// Edge-midpoint rule, exact to degree 2.
fn midpoint_rule() -> QuadRule {
    QuadRule {
        points: vec![[0.5, 0.0], [0.0, 0.5], [0.5, 0.5]],
        weights: vec![1.0 / 6.0; 3],
        exact_degree: 2,
    }
}

/// Six-point rule, exact to degree 4.
fn six_point_rule() -> QuadRule {
    let mut points = Vec::with_capacity(6);
    let mut weights = Vec::with_capacity(6);
    push_orbit3(&mut points, &mut weights, 0.445948490915965, 0.223381589678011);
    push_orbit3(&mut points, &mut weights, 0.091576213509771, 0.109951743655322);
    QuadRule { points, weights, exact_degree: 4 }
}

/// Twelve-point rule, exact to degree 6.
fn twelve_point_rule() -> QuadRule {
    let mut points = Vec::with_capacity(12);
    let mut weights = Vec::with_capacity(12);
    push_orbit3(&mut points, &mut weights, 0.063089014491502, 0.050844906370207);
    push_orbit3(&mut points, &mut weights, 0.249286745170910, 0.116786275726379);
    push_orbit6(
        &mut points,
        &mut weights,
        0.310352451033785,
        0.053145049844816,
        0.082851075618374,
    );
    QuadRule { points, weights, exact_degree: 6 }
}

/// Orbit of the barycentric point (a, a, 1−2a); `w` is normalized to unit
/// total and scaled here by the reference area.
fn push_orbit3(points: &mut Vec<[f64; 2]>, weights: &mut Vec<f64>, a: f64, w: f64) {
    let c = 1.0 - 2.0 * a;
    // cartesian (ξ, η) = (b₂, b₃) for barycentric (b₁, b₂, b₃)
    points.push([a, c]);
    points.push([c, a]);
    points.push([a, a]);
    weights.extend_from_slice(&[0.5 * w; 3]);
}

/// Full orbit of the barycentric point (b, c, 1−b−c), six permutations.
fn push_orbit6(points: &mut Vec<[f64; 2]>, weights: &mut Vec<f64>, b: f64, c: f64, w: f64) {
    let d = 1.0 - b - c;
    for (p, q) in [(c, d), (b, d), (b, c), (d, c), (d, b), (c, b)] {
        points.push([p, q]);
        weights.push(0.5 * w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ∫ ξ^p η^q over the reference triangle = p! q! / (p+q+2)!.
    fn exact_monomial_integral(p: u32, q: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>().max(1.0);
        fact(p) * fact(q) / fact(p + q + 2)
    }

    fn check_exactness(rule: &QuadRule) {
        for p in 0..=rule.exact_degree as u32 {
            for q in 0..=(rule.exact_degree as u32 - p) {
                let num: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(pt, w)| w * pt[0].powi(p as i32) * pt[1].powi(q as i32))
                    .sum();
                let exact = exact_monomial_integral(p, q);
                assert!(
                    (num - exact).abs() <= 1e-14,
                    "ξ^{p} η^{q}: rule gave {num}, exact {exact}"
                );
            }
        }
    }

    #[test]
    fn rules_integrate_monomials_exactly() {
        for degree in [2, 4, 6] {
            check_exactness(&QuadRule::for_degree(degree));
        }
    }

    #[test]
    fn for_degree_picks_sufficient_rule() {
        for degree in 0..=6 {
            let rule = QuadRule::for_degree(degree);
            assert!(rule.exact_degree >= degree);
        }
    }

    #[test]
    fn weights_positive_and_sum_to_area() {
        for degree in [2, 4, 6] {
            let rule = QuadRule::for_degree(degree);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 0.5).abs() <= 1e-15);
        }
    }

    #[test]
    fn points_inside_reference_triangle() {
        for degree in [2, 4, 6] {
            for p in QuadRule::for_degree(degree).points {
                assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-15);
            }
        }
    }
}
