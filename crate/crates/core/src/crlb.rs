//! Fisher information and Cramér–Rao bounds for bearing-only localization,
//! plus the geometric-diversity metric `lambda_min(sum P_m)`.

use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::sym2_eigen;
use crate::geometry::{ServiceRegion, DEFAULT_DISTANCE_GUARD};

/// Below this (relative to the largest eigenvalue) a matrix is treated as
/// rank deficient.
const SINGULAR_RELATIVE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrlbMode {
    /// `sigma^2 R^2 (sum P_m)^-1` with one common range `R`.
    PaperSimplified,
    /// Inverse of the range-weighted Fisher information.
    Exact,
}

/// Where a bearing-noise level came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    Assumed,
    Calibrated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrlbReport {
    pub target: Vector2<f64>,
    pub sigma2: f64,
    pub mode: CrlbMode,
    pub fim: Matrix2<f64>,
    /// Range used by the simplified bound (geometric mean unless overridden).
    pub common_range: f64,
    /// `None` when `sum P_m` is singular.
    pub crlb_paper: Option<Matrix2<f64>>,
    /// `None` when the Fisher information is singular.
    pub crlb_exact: Option<Matrix2<f64>>,
    pub lambda_min: f64,
    /// Direction of the largest bound eigenvalue; for a singular geometry
    /// this is the unbounded direction.
    pub worst_axis: Vector2<f64>,
}

impl CrlbReport {
    /// Bound selected by `mode`.
    pub fn bound(&self) -> Option<&Matrix2<f64>> {
        match self.mode {
            CrlbMode::PaperSimplified => self.crlb_paper.as_ref(),
            CrlbMode::Exact => self.crlb_exact.as_ref(),
        }
    }

    pub fn is_unbounded(&self) -> bool {
        self.bound().is_none()
    }

    /// Trace of the selected bound, infinite when unbounded.
    pub fn trace(&self) -> f64 {
        self.bound().map_or(f64::INFINITY, |b| b.trace())
    }
}

fn check(q: &Vector2<f64>, refs: &[Vector2<f64>], sigma2: f64) -> Result<()> {
    if refs.is_empty() {
        return Err(Error::InvalidInput("at least one subarray is required".into()));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma2 must be positive, got {sigma2}")));
    }
    for v in refs {
        let r = (q - v).norm();
        if r < DEFAULT_DISTANCE_GUARD {
            return Err(Error::SingularGeometry {
                distance: r,
                guard: DEFAULT_DISTANCE_GUARD,
            });
        }
    }
    Ok(())
}

/// Projector onto the normal of the true bearing from `v` to `q`.
fn true_projection(q: &Vector2<f64>, v: &Vector2<f64>) -> (Matrix2<f64>, f64) {
    let diff = q - v;
    let r = diff.norm();
    let u = diff / r;
    (Matrix2::identity() - u * u.transpose(), r)
}

/// `sum P_m` over the true bearings.
pub fn projection_sum(q: &Vector2<f64>, refs: &[Vector2<f64>]) -> Result<Matrix2<f64>> {
    check(q, refs, 1.0)?;
    Ok(refs.iter().map(|v| true_projection(q, v).0).sum())
}

pub fn fisher_information(q: &Vector2<f64>, refs: &[Vector2<f64>], sigma2: f64) -> Result<Matrix2<f64>> {
    check(q, refs, sigma2)?;
    Ok(refs
        .iter()
        .map(|v| {
            let (p, r) = true_projection(q, v);
            p / (r * r)
        })
        .sum::<Matrix2<f64>>()
        / sigma2)
}

/// Inverse of a symmetric PSD matrix, or `None` with its null direction.
fn spd_inverse(m: &Matrix2<f64>) -> std::result::Result<Matrix2<f64>, Vector2<f64>> {
    let (lmin, vmin, lmax, _) = sym2_eigen(m);
    if lmax <= 0.0 || lmin <= SINGULAR_RELATIVE * lmax {
        return Err(vmin);
    }
    let inv = m.try_inverse().ok_or(vmin)?;
    // symmetrize away round-off
    Ok((inv + inv.transpose()) * 0.5)
}

/// Both bounds at `q`; `mode` selects which one `bound()` and `trace()`
/// report. `common_range` replaces the geometric-mean range of the
/// simplified bound.
pub fn crlb_bound(
    q: &Vector2<f64>,
    refs: &[Vector2<f64>],
    sigma2: f64,
    mode: CrlbMode,
    common_range: Option<f64>,
) -> Result<CrlbReport> {
    check(q, refs, sigma2)?;
    if let Some(r) = common_range {
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(format!("common range must be positive, got {r}")));
        }
    }
    let fim = fisher_information(q, refs, sigma2)?;
    let p_sum = projection_sum(q, refs)?;
    let range = common_range.unwrap_or_else(|| {
        (refs.iter().map(|v| (q - v).norm().ln()).sum::<f64>() / refs.len() as f64).exp()
    });
    let (lambda_min, ..) = sym2_eigen(&p_sum);
    let paper = spd_inverse(&p_sum).map(|inv| inv * (sigma2 * range * range));
    let exact = spd_inverse(&fim);
    let selected = match mode {
        CrlbMode::PaperSimplified => &paper,
        CrlbMode::Exact => &exact,
    };
    let worst_axis = match selected {
        Ok(b) => sym2_eigen(b).3,
        Err(null) => *null,
    };
    Ok(CrlbReport {
        target: *q,
        sigma2,
        mode,
        fim,
        common_range: range,
        crlb_paper: paper.ok(),
        crlb_exact: exact.ok(),
        lambda_min: lambda_min.max(0.0),
        worst_axis,
    })
}

/// RMS angular error between estimated and true direction cosines.
///
/// Feed it per-subarray OMP cosines against the truth at a given SNR to
/// obtain a bearing-noise sigma for the bound.
pub fn calibrate_bearing_sigma(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.is_empty() || estimated.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates against {} true cosines",
            estimated.len(),
            truth.len()
        )));
    }
    let mut acc = 0.0;
    for (&e, &t) in estimated.iter().zip(truth) {
        if !(e.abs() <= 1.0 && t.abs() <= 1.0) {
            return Err(Error::InvalidInput(format!("cosines must lie in [-1, 1], got {e} and {t}")));
        }
        let d = e.acos() - t.acos();
        acc += d * d;
    }
    Ok((acc / estimated.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub x: f64,
    pub y: f64,
    /// Infinite where the bound is unbounded.
    pub trace_crlb: f64,
    pub lambda_min: f64,
}

/// Bound over an `nx` by `ny` grid of cell centers covering the region.
/// Points closer than the distance guard to a reference are skipped.
pub fn crlb_heatmap(
    region: &ServiceRegion,
    refs: &[Vector2<f64>],
    nx: usize,
    ny: usize,
    sigma2: f64,
    mode: CrlbMode,
) -> Result<Vec<HeatmapRow>> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidParameter("heatmap grid must be nonempty".into()));
    }
    let points: Vec<(f64, f64)> = (0..ny)
        .flat_map(|j| {
            (0..nx).map(move |i| {
                (
                    (i as f64 + 0.5) * region.size_x / nx as f64,
                    (j as f64 + 0.5) * region.size_y / ny as f64,
                )
            })
        })
        .collect();
    let rows: Vec<Option<HeatmapRow>> = points
        .par_iter()
        .map(|&(x, y)| match crlb_bound(&Vector2::new(x, y), refs, sigma2, mode, None) {
            Ok(r) => Ok(Some(HeatmapRow {
                x,
                y,
                trace_crlb: r.trace(),
                lambda_min: r.lambda_min,
            })),
            Err(Error::SingularGeometry { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_heatmap_csv<W: Write>(rows: &[HeatmapRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
