//! Position and height from 3D direction cosines.
//!
//! Subarray `m` at `(x_m, y_m, H_PA)` measuring `cos(vartheta_m)` constrains
//! the target to the cone `z + (y - y_m)^2 = delta_m (x - x_m)^2` with
//! `delta_m = 1 / cos^2 - 1` and `z` the squared height offset. The solver
//! minimizes the summed squared cone residuals over `(x, y, z >= 0)`: a grid
//! over the footprint with the optimal `z` in closed form, then damped
//! Gauss-Newton from the best grid cells.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point3, ServiceRegion};

/// Cosines are clamped away from zero by this much before forming `delta`.
const MIN_COSINE: f64 = 1e-9;
const GRID_CELLS: usize = 60;
const CANDIDATES: usize = 6;
const MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solution3d {
    pub position: Point3,
    /// Squared height offset below the waveguides.
    pub z: f64,
    pub cost: f64,
    pub penalty: f64,
    pub converged: bool,
    pub ambiguous: bool,
    pub iterations: usize,
}

/// `sum_m [z + (y - y_m)^2 - delta_m (x - x_m)^2]^2`.
pub fn gcl3d_cost(x: f64, y: f64, z: f64, refs: &[Point3], deltas: &[f64]) -> f64 {
    refs.iter()
        .zip(deltas)
        .map(|(v, &dm)| {
            let r = z + (y - v.y).powi(2) - dm * (x - v.x).powi(2);
            r * r
        })
        .sum()
}

fn optimal_z(x: f64, y: f64, refs: &[Point3], deltas: &[f64]) -> f64 {
    let mean = refs
        .iter()
        .zip(deltas)
        .map(|(v, &dm)| dm * (x - v.x).powi(2) - (y - v.y).powi(2))
        .sum::<f64>()
        / refs.len() as f64;
    mean.max(0.0)
}

fn penalty(x: f64, refs: &[Point3], cosines: &[f64]) -> f64 {
    refs.iter()
        .zip(cosines)
        .map(|(v, &c)| ((x - v.x) * c).min(0.0).powi(2))
        .sum()
}

struct Refined {
    p: Vector3<f64>,
    cost: f64,
    converged: bool,
    iterations: usize,
}

/// Levenberg-Marquardt on the cone residuals with `z` projected onto
/// `z >= 0`, or pinned at zero when `fix_z`.
fn refine(refs: &[Point3], deltas: &[f64], start: Vector3<f64>, fix_z: bool) -> Refined {
    let mut p = start;
    if fix_z {
        p.z = 0.0;
    }
    let mut cost = gcl3d_cost(p.x, p.y, p.z, refs, deltas);
    let mut mu = 1e-3;
    for it in 0..MAX_ITERS {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (v, &dm) in refs.iter().zip(deltas) {
            let (dx, dy) = (p.x - v.x, p.y - v.y);
            let r = p.z + dy * dy - dm * dx * dx;
            let j = Vector3::new(-2.0 * dm * dx, 2.0 * dy, if fix_z { 0.0 } else { 1.0 });
            jtj += j * j.transpose();
            jtr += j * r;
        }
        if cost == 0.0 || jtr.norm() == 0.0 {
            return Refined { p, cost, converged: true, iterations: it };
        }
        loop {
            let mut a = jtj;
            for k in 0..3 {
                a[(k, k)] += mu * (jtj[(k, k)] + 1e-12);
            }
            let step = if fix_z {
                let a2 = Matrix2::new(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
                a2.try_inverse()
                    .map(|inv| {
                        let s = -(inv * Vector2::new(jtr.x, jtr.y));
                        Vector3::new(s.x, s.y, 0.0)
                    })
            } else {
                a.try_inverse().map(|inv| -(inv * jtr))
            };
            let Some(step) = step else {
                mu *= 4.0;
                if mu > 1e12 {
                    return Refined { p, cost, converged: true, iterations: it };
                }
                continue;
            };
            let mut q = p + step;
            q.z = q.z.max(0.0);
            let trial = gcl3d_cost(q.x, q.y, q.z, refs, deltas);
            if trial < cost {
                let moved = (q - p).norm();
                p = q;
                cost = trial;
                mu = (mu / 3.0).max(1e-15);
                if moved <= 1e-13 * (1.0 + p.norm()) {
                    return Refined { p, cost, converged: true, iterations: it + 1 };
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e12 {
                // no descent direction left: stationary to working precision
                return Refined { p, cost, converged: true, iterations: it + 1 };
            }
        }
    }
    Refined { p, cost, converged: false, iterations: MAX_ITERS }
}

fn is_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) + 1e-18
}

/// Solves for `(x, y, H)` with `H = H_PA - sqrt(z)` clamped to `[0, H_PA]`.
///
/// Cells are ranked by cone cost plus `lambda_penalty` times the
/// direction-consistency penalty; the same score picks among refined
/// candidates. Each candidate is refined both freely and on the `z = 0`
/// face, and the face solution wins when its cost is no worse. A refined
/// point on the wrong side of some subarray's `x` gets an extra start
/// reflected about that subarray.
pub fn solve_position_3d(
    refs: &[Point3],
    varphis: &[f64],
    region: &ServiceRegion,
    lambda_penalty: f64,
) -> Result<Solution3d> {
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
    if let Some(c) = varphis.iter().find(|c| !(c.abs() < 1.0)) {
        return Err(Error::InvalidParameter(format!("direction cosine {c} must satisfy |c| < 1")));
    }
    let deltas: Vec<f64> = varphis
        .iter()
        .map(|&c| {
            let c2 = c.abs().max(MIN_COSINE).powi(2);
            1.0 / c2 - 1.0
        })
        .collect();
    let score = |p: &Vector3<f64>, cost: f64| cost + lambda_penalty * penalty(p.x, refs, varphis);

    let (sx, sy) = (region.size_x, region.size_y);
    let mut cells = Vec::with_capacity((GRID_CELLS + 1) * (GRID_CELLS + 1));
    for i in 0..=GRID_CELLS {
        for j in 0..=GRID_CELLS {
            let x = sx * i as f64 / GRID_CELLS as f64;
            let y = sy * j as f64 / GRID_CELLS as f64;
            let z = optimal_z(x, y, refs, &deltas);
            let p = Vector3::new(x, y, z);
            cells.push((score(&p, gcl3d_cost(x, y, z, refs, &deltas)), p));
        }
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let spacing = 2.0 * sx.max(sy) / GRID_CELLS as f64;
    let mut starts: Vec<Vector3<f64>> = Vec::with_capacity(CANDIDATES);
    for (_, p) in &cells {
        if starts.iter().all(|s| (s.xy() - p.xy()).norm() > spacing) {
            starts.push(*p);
            if starts.len() == CANDIDATES {
                break;
            }
        }
    }

    let refine_both = |start: Vector3<f64>| {
        let free = refine(refs, &deltas, start, false);
        let face = refine(refs, &deltas, start, true);
        if face.cost <= free.cost || is_tie(face.cost, free.cost) { face } else { free }
    };
    let mut refined: Vec<(f64, Refined, Vector3<f64>)> = Vec::with_capacity(2 * starts.len());
    for start in &starts {
        let pick = refine_both(*start);
        let reflect_from = pick.p;
        // the cone cost only sees cos^2, so a minimum on the wrong side of a
        // subarray's x is as deep as the right one; restart reflected about it
        let offenders: Vec<f64> = refs
            .iter()
            .zip(varphis)
            .filter(|(v, &c)| (pick.p.x - v.x) * c < 0.0)
            .map(|(v, _)| v.x)
            .collect();
        refined.push((score(&pick.p, pick.cost), pick, *start));
        for xm in offenders {
            let mirrored = Vector3::new((2.0 * xm - reflect_from.x).clamp(0.0, sx), reflect_from.y, reflect_from.z);
            let pick = refine_both(mirrored);
            refined.push((score(&pick.p, pick.cost), pick, mirrored));
        }
    }
    let best_idx = (0..refined.len())
        .fold(0, |b, k| if refined[k].0 < refined[b].0 && !is_tie(refined[k].0, refined[b].0) { k } else { b });
    let (best_score, best, start) = &refined[best_idx];

    let (p, cost, converged) = if best.converged {
        (best.p, best.cost, true)
    } else {
        let grid_cost = gcl3d_cost(start.x, start.y, start.z, refs, &deltas);
        if grid_cost < best.cost {
            (*start, grid_cost, false)
        } else {
            (best.p, best.cost, false)
        }
    };

    let mut ambiguous = refined
        .iter()
        .enumerate()
        .any(|(k, r)| k != best_idx && is_tie(r.0, *best_score) && (r.1.p.xy() - p.xy()).norm() > 1e-3);
    let y0 = refs[0].y;
    if refs.iter().all(|v| v.y == y0) && (p.y - y0).abs() > 1e-6 {
        let mirror_y = 2.0 * y0 - p.y;
        let mirror = Vector3::new(p.x, mirror_y, p.z);
        let mirror_score = score(&mirror, gcl3d_cost(p.x, mirror_y, p.z, refs, &deltas));
        ambiguous |= is_tie(mirror_score, *best_score);
    }

    let h = (region.h_pa - p.z.sqrt()).clamp(0.0, region.h_pa);
    Ok(Solution3d {
        position: Point3::new(p.x, p.y, h),
        z: p.z,
        cost,
        penalty: penalty(p.x, refs, varphis),
        converged,
        ambiguous,
        iterations: best.iterations,
    })
}
