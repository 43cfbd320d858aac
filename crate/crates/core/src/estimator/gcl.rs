//! Geometry-consistent localization from per-subarray direction cosines.
//!
//! A cosine fixes the bearing line of each subarray up to the sign of its
//! `y` component. Every sign vector yields a least-squares intersection of
//! the bearing lines; the vector with the smallest projection cost plus
//! direction-consistency penalty wins.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest subarray count accepted by the `2^M` sign enumeration.
pub const MAX_SIGN_SUBARRAYS: usize = 20;

/// `lambda_min(sum P_m)` below which a solve is reported ill-conditioned.
pub const ILL_CONDITIONED_EIGENVALUE: f64 = 1e-6;

/// Two candidates whose costs differ by less than this are tied.
const TIE_RELATIVE: f64 = 1e-9;
const TIE_ABSOLUTE: f64 = 1e-12;

/// `I - u u^T` with `u = [varphi, sign * sqrt(1 - varphi^2)]`.
pub fn projection_matrix(varphi: f64, sign: i8) -> Matrix2<f64> {
    let u = unit_direction(varphi, sign);
    Matrix2::identity() - u * u.transpose()
}

fn unit_direction(varphi: f64, sign: i8) -> Vector2<f64> {
    let c = varphi.clamp(-1.0, 1.0);
    let s = f64::from(sign.signum()) * (1.0 - c * c).max(0.0).sqrt();
    Vector2::new(c, s)
}

/// Sum of squared distances from `q` to every bearing line.
pub fn ls_cost(q: &Vector2<f64>, refs: &[Vector2<f64>], varphis: &[f64], signs: &[i8]) -> f64 {
    refs.iter()
        .zip(varphis)
        .zip(signs)
        .map(|((v, &c), &s)| (projection_matrix(c, s) * (q - v)).norm_squared())
        .sum()
}

/// Penalizes a candidate `x` lying on the wrong side of a subarray for its
/// cosine sign.
pub fn direction_penalty(x: f64, refs: &[Vector2<f64>], varphis: &[f64]) -> f64 {
    refs.iter()
        .zip(varphis)
        .map(|(v, &c)| {
            let t = ((x - v.x) * c).min(0.0);
            t * t
        })
        .sum()
}

pub(crate) fn sym2_eigen(m: &Matrix2<f64>) -> (f64, Vector2<f64>, f64, Vector2<f64>) {
    let eig = SymmetricEigen::new(*m);
    let (i_min, i_max) = if eig.eigenvalues[0] <= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    (
        eig.eigenvalues[i_min],
        eig.eigenvectors.column(i_min).into_owned(),
        eig.eigenvalues[i_max],
        eig.eigenvectors.column(i_max).into_owned(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsSolution {
    pub position: Vector2<f64>,
    pub cost: f64,
    pub lambda_min: f64,
    pub ill_conditioned: bool,
}

fn check_inputs(refs: &[Vector2<f64>], varphis: &[f64]) -> Result<()> {
    if refs.is_empty() {
        return Err(Error::InvalidInput("at least one subarray is required".into()));
    }
    if refs.len() != varphis.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} subarrays but {} cosines",
            refs.len(),
            varphis.len()
        )));
    }
    if let Some(c) = varphis.iter().find(|c| !(c.abs() <= 1.0)) {
        return Err(Error::InvalidParameter(format!("direction cosine {c} outside [-1, 1]")));
    }
    Ok(())
}

/// Closed-form minimizer `(sum P_m + eps I)^{-1} sum P_m v_m` for fixed signs.
pub fn solve_position_ls(
    refs: &[Vector2<f64>],
    varphis: &[f64],
    signs: &[i8],
    epsilon: f64,
) -> Result<LsSolution> {
    check_inputs(refs, varphis)?;
    if signs.len() != refs.len() {
        return Err(Error::DimensionMismatch("sign vector length differs from subarray count".into()));
    }
    let mut p_sum = Matrix2::zeros();
    let mut rhs = Vector2::zeros();
    for ((v, &c), &s) in refs.iter().zip(varphis).zip(signs) {
        let p = projection_matrix(c, s);
        p_sum += p;
        rhs += p * v;
    }
    let a = p_sum + Matrix2::identity() * epsilon;
    let position = a
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("regularized normal matrix is singular".into()))?
        * rhs;
    let (lambda_min, ..) = sym2_eigen(&p_sum);
    Ok(LsSolution {
        position,
        cost: ls_cost(&position, refs, varphis, signs),
        lambda_min,
        ill_conditioned: lambda_min < ILL_CONDITIONED_EIGENVALUE,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignVector {
    pub signs: Vec<i8>,
    pub cost_ls: f64,
    pub cost_penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GclSolution {
    pub signs: SignVector,
    pub position: Vector2<f64>,
    pub total_cost: f64,
    pub lambda_min: f64,
    /// Another sign vector ties the winner at a different position.
    pub ambiguous: bool,
    pub ill_conditioned: bool,
    /// Fewer than two bearings.
    pub under_determined: bool,
}

/// Sign vector number `k` in lexicographic order with `-1 < +1`.
fn sign_vector(k: u32, m: usize) -> Vec<i8> {
    (0..m)
        .map(|i| if k >> (m - 1 - i) & 1 == 1 { 1 } else { -1 })
        .collect()
}

fn is_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_RELATIVE * a.abs().max(b.abs()) + TIE_ABSOLUTE
}

/// Enumerates all `2^M` sign vectors and keeps the one minimizing
/// `J_LS + lambda * J_P`; ties keep the lexicographically first vector.
pub fn resolve_signs(
    refs: &[Vector2<f64>],
    varphis: &[f64],
    epsilon: f64,
    lambda_penalty: f64,
) -> Result<GclSolution> {
    check_inputs(refs, varphis)?;
    let m = refs.len();
    if m > MAX_SIGN_SUBARRAYS {
        return Err(Error::TooManySubarrays {
            got: m,
            limit: MAX_SIGN_SUBARRAYS,
        });
    }
    let mut candidates = Vec::with_capacity(1 << m);
    for k in 0..(1u32 << m) {
        let signs = sign_vector(k, m);
        let sol = solve_position_ls(refs, varphis, &signs, epsilon)?;
        let penalty = direction_penalty(sol.position.x, refs, varphis);
        candidates.push((signs, sol, penalty, sol.cost + lambda_penalty * penalty));
    }
    let mut best = 0;
    for (k, c) in candidates.iter().enumerate().skip(1) {
        let b = candidates[best].3;
        if c.3 < b && !is_tie(c.3, b) {
            best = k;
        }
    }
    let (signs, sol, penalty, total) = candidates[best].clone();
    let ambiguous = candidates.iter().enumerate().any(|(k, c)| {
        k != best && is_tie(c.3, total) && (c.1.position - sol.position).norm() > 1e-3
    });
    Ok(GclSolution {
        signs: SignVector {
            signs,
            cost_ls: sol.cost,
            cost_penalty: penalty,
        },
        position: sol.position,
        total_cost: total,
        lambda_min: sol.lambda_min,
        ambiguous,
        ill_conditioned: sol.ill_conditioned,
        under_determined: m < 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bearings(q: Vector2<f64>, refs: &[Vector2<f64>]) -> (Vec<f64>, Vec<i8>) {
        refs.iter()
            .map(|v| {
                let u = (q - v).normalize();
                (u.x, if u.y >= 0.0 { 1 } else { -1 })
            })
            .unzip()
    }

    #[test]
    fn axis_aligned_projections() {
        assert_eq!(projection_matrix(1.0, 1), Matrix2::new(0.0, 0.0, 0.0, 1.0));
        assert_eq!(projection_matrix(0.0, -1), Matrix2::new(1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn two_bearings_intersect_exactly() {
        let refs = [Vector2::new(0.0, 0.0), Vector2::new(30.0, 0.0)];
        let q = Vector2::new(10.0, 10.0);
        let (c, s) = bearings(q, &refs);
        let sol = solve_position_ls(&refs, &c, &s, 1e-9).unwrap();
        assert!((sol.position - q).norm() < 1e-6);
        assert!(sol.cost < 1e-12);
    }

    #[test]
    fn parallel_bearings_are_ill_conditioned() {
        let refs = [Vector2::new(0.0, 15.0), Vector2::new(10.0, 15.0), Vector2::new(20.0, 15.0)];
        let sol = solve_position_ls(&refs, &[1.0, 1.0, 1.0], &[1, 1, 1], 1e-9).unwrap();
        assert!(sol.ill_conditioned);
        assert!(sol.cost < 1e-9);
        assert!((sol.position.y - 15.0).abs() < 1e-6);
    }

    #[test]
    fn closed_form_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let refs: Vec<Vector2<f64>> = (0..4)
            .map(|_| Vector2::new(rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)))
            .collect();
        let q = Vector2::new(14.0, 9.0);
        let (mut c, s) = bearings(q, &refs);
        for v in c.iter_mut() {
            *v = (*v + rng.random_range(-0.02..0.02)).clamp(-1.0, 1.0);
        }
        let sol = solve_position_ls(&refs, &c, &s, 1e-9).unwrap();
        // coarse-to-fine grid search ending at 1 mm
        let mut center = Vector2::new(15.0, 15.0);
        let mut step = 0.5;
        let mut half = 30;
        while step >= 1e-3 {
            let mut best = (f64::INFINITY, center);
            for i in -half..=half {
                for j in -half..=half {
                    let p = center + Vector2::new(i as f64 * step, j as f64 * step);
                    let cost = ls_cost(&p, &refs, &c, &s);
                    if cost < best.0 {
                        best = (cost, p);
                    }
                }
            }
            center = best.1;
            step /= 5.0;
            half = 10;
        }
        assert!((sol.position - center).amax() <= 1e-3, "{:?} vs {:?}", sol.position, center);
    }

    #[test]
    fn mw_exact_bearings_resolve_uniquely() {
        let refs = [Vector2::new(0.0, 0.0), Vector2::new(29.8, 0.0), Vector2::new(0.0, 30.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let q = Vector2::new(rng.random_range(0.5..29.5), rng.random_range(0.5..29.5));
            let (c, _) = bearings(q, &refs);
            let sol = resolve_signs(&refs, &c, 1e-9, 1.0).unwrap();
            assert!((sol.position - q).norm() < 1e-6, "{q:?} -> {:?}", sol.position);
            assert!(sol.signs.cost_penalty < 1e-20);
            assert!(!sol.ambiguous);
        }
    }

    #[test]
    fn collinear_mirror_is_a_real_tie() {
        let yc = 15.0;
        let refs = [Vector2::new(0.0, yc), Vector2::new(30.0, yc)];
        let q = Vector2::new(12.0, yc + 4.0);
        let (c, s) = bearings(q, &refs);
        let flipped: Vec<i8> = s.iter().map(|v| -v).collect();
        let a = solve_position_ls(&refs, &c, &s, 1e-9).unwrap();
        let b = solve_position_ls(&refs, &c, &flipped, 1e-9).unwrap();
        assert!((a.position - q).norm() < 1e-6);
        assert!((b.position - Vector2::new(12.0, yc - 4.0)).norm() < 1e-6);
        assert!((a.cost - b.cost).abs() < 1e-10);
        assert_eq!(direction_penalty(a.position.x, &refs, &c), direction_penalty(b.position.x, &refs, &c));
        let sol = resolve_signs(&refs, &c, 1e-9, 1.0).unwrap();
        assert!(sol.ambiguous);
        assert_eq!(sol.signs.signs, vec![-1, -1]);
    }

    #[test]
    fn single_bearing_is_under_determined() {
        let refs = [Vector2::new(0.0, 0.0)];
        let sol = resolve_signs(&refs, &[0.6], 1e-9, 1.0).unwrap();
        assert!(sol.under_determined);
        assert!(sol.signs.cost_ls < 1e-12);
        // the regularized point sits on the bearing line through the origin
        let u = Vector2::new(0.6, -0.8);
        assert!((sol.position - u * u.dot(&sol.position)).norm() < 1e-9);
    }

    #[test]
    fn enumeration_guard() {
        let refs = vec![Vector2::new(0.0, 0.0); 21];
        let c = vec![0.5; 21];
        assert!(matches!(
            resolve_signs(&refs, &c, 1e-9, 1.0),
            Err(Error::TooManySubarrays { got: 21, .. })
        ));
    }

    #[test]
    fn sign_order_is_lexicographic() {
        assert_eq!(sign_vector(0, 3), vec![-1, -1, -1]);
        assert_eq!(sign_vector(1, 3), vec![-1, -1, 1]);
        assert_eq!(sign_vector(7, 3), vec![1, 1, 1]);
    }

    proptest! {
        #[test]
        fn projection_algebra(c in -1.0..=1.0f64, up in any::<bool>()) {
            let s = if up { 1 } else { -1 };
            let p = projection_matrix(c, s);
            let u = unit_direction(c, s);
            prop_assert!((p * p - p).amax() < 1e-12);
            prop_assert!((p * u).amax() < 1e-12);
            prop_assert!((p - p.transpose()).amax() == 0.0);
        }

        #[test]
        fn closed_form_is_stationary(
            pts in proptest::collection::vec((0.0..30.0f64, 0.0..30.0f64), 2..6),
            cs in proptest::collection::vec(-0.99..0.99f64, 6),
            bits in 0u32..64,
        ) {
            let refs: Vec<Vector2<f64>> = pts.iter().map(|&(x, y)| Vector2::new(x, y)).collect();
            let m = refs.len();
            let signs = sign_vector(bits % (1 << m), m);
            let c = &cs[..m];
            let sol = solve_position_ls(&refs, c, &signs, 1e-12).unwrap();
            prop_assume!(!sol.ill_conditioned);
            let mut grad = Vector2::zeros();
            for ((v, &ci), &si) in refs.iter().zip(c).zip(&signs) {
                grad += 2.0 * projection_matrix(ci, si) * (sol.position - v);
            }
            prop_assert!(grad.norm() < 1e-8 * (1.0 + sol.position.norm()) , "grad {}", grad.norm());
        }

        #[test]
        fn mirror_signs_mirror_costs(
            xs in proptest::collection::vec(0.0..30.0f64, 2..5),
            cs in proptest::collection::vec(-0.99..0.99f64, 5),
            bits in 0u32..32,
        ) {
            let yc = 15.0;
            let refs: Vec<Vector2<f64>> = xs.iter().map(|&x| Vector2::new(x, yc)).collect();
            let m = refs.len();
            let signs = sign_vector(bits % (1 << m), m);
            let flipped: Vec<i8> = signs.iter().map(|s| -s).collect();
            let c = &cs[..m];
            let sol = solve_position_ls(&refs, c, &signs, 1e-9).unwrap();
            let mirror = Vector2::new(sol.position.x, 2.0 * yc - sol.position.y);
            let a = ls_cost(&sol.position, &refs, c, &signs);
            let b = ls_cost(&mirror, &refs, c, &flipped);
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }
}
