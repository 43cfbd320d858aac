//! The full estimation loop: per path, alternate dictionary matching at the
//! current reference distances with geometry-consistent localization, then
//! peel the localized path off the residual.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{omp_direction, resolve_signs, solve_position_3d, DirectionEstimate, EstimatorConfig, RInit};
use crate::channel::{path_response, MeasurementSet, RadioConfig};
use crate::dictionary::{build_dp_dictionary, project_dictionary, AngleGrid};
use crate::error::{Error, Result};
use crate::geometry::{ArrayLayout, Mode, Point3};
use crate::C64;

/// Reference distances are never updated below this.
const MIN_REFERENCE_DISTANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateFlags {
    pub ambiguous: bool,
    pub ill_conditioned: bool,
    pub non_converged: bool,
    pub low_confidence: bool,
    pub under_determined: bool,
}

impl EstimateFlags {
    pub fn merge(&mut self, other: EstimateFlags) {
        self.ambiguous |= other.ambiguous;
        self.ill_conditioned |= other.ill_conditioned;
        self.non_converged |= other.non_converged;
        self.low_confidence |= other.low_confidence;
        self.under_determined |= other.under_determined;
    }

    pub fn any(&self) -> bool {
        self.ambiguous || self.ill_conditioned || self.non_converged || self.low_confidence || self.under_determined
    }
}

/// State after one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Reference distances the dictionaries were built at.
    pub distances: Vec<f64>,
    pub varphis: Vec<f64>,
    /// Resolved bearing signs (planar mode only).
    pub signs: Vec<i8>,
    pub position: Point3,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEstimateResult {
    pub path: usize,
    pub position: Point3,
    /// Final reference distance per subarray (horizontal in planar mode).
    pub distances: Vec<f64>,
    pub directions: Vec<DirectionEstimate>,
    pub signs: Vec<i8>,
    pub scatter_user_distance: Option<f64>,
    /// Refitted complex gain per subarray, relative to the model amplitude.
    pub gains: Vec<C64>,
    /// Reconstructed component per subarray (model response times gain).
    pub components: Vec<DVector<C64>>,
    pub trace: Vec<IterationTrace>,
    pub flags: EstimateFlags,
}

impl PathEstimateResult {
    /// Mean coefficient magnitude over subarrays.
    pub fn coefficient_magnitude(&self) -> f64 {
        self.directions.iter().map(|d| d.coefficient.norm()).sum::<f64>() / self.directions.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpGclOutput {
    pub paths: Vec<PathEstimateResult>,
    /// Reconstructed channel of every subarray.
    pub channels: Vec<DVector<C64>>,
    pub residual_norms: Vec<f64>,
}

impl OmpGclOutput {
    /// Estimated user followed by detected scatterers.
    pub fn positions(&self) -> Vec<Point3> {
        self.paths.iter().map(|p| p.position).collect()
    }

    pub fn user(&self) -> Point3 {
        self.paths[0].position
    }

    pub fn flags(&self) -> EstimateFlags {
        let mut f = EstimateFlags::default();
        for p in &self.paths {
            f.merge(p.flags);
        }
        f
    }

    /// Channel at arbitrary PA positions from the estimated geometry alone.
    pub fn reconstruct(&self, pa_positions: &[Point3], radio: &RadioConfig) -> Result<DVector<C64>> {
        reconstruct_channel(&self.positions(), pa_positions, radio)
    }
}

/// Evaluates the spherical-wave model at `pa_positions` for a user
/// (`positions[0]`) and scatterers (`positions[1..]`).
pub fn reconstruct_channel(
    positions: &[Point3],
    pa_positions: &[Point3],
    radio: &RadioConfig,
) -> Result<DVector<C64>> {
    let user = positions
        .first()
        .ok_or_else(|| Error::InvalidInput("at least the user position is required".into()))?;
    let mut h = path_response(pa_positions, user, None, radio)?;
    for q in &positions[1..] {
        h += path_response(pa_positions, q, Some(q.distance(user)), radio)?;
    }
    Ok(h)
}

fn initial_distances(layout: &ArrayLayout, config: &EstimatorConfig) -> Vec<f64> {
    let center = layout.region.center();
    layout
        .subarrays
        .iter()
        .map(|s| match config.r_init {
            RInit::Fixed(r) => r,
            RInit::RegionCenter => match config.mode {
                Mode::Planar2D => s.reference.horizontal_distance(&center),
                Mode::Full3D => s.reference.distance(&center),
            },
        })
        .map(|r| r.max(MIN_REFERENCE_DISTANCE))
        .collect()
}

pub(super) fn check_consistency(meas: &MeasurementSet, layout: &ArrayLayout) -> Result<()> {
    if meas.subarrays.len() != layout.num_subarrays() {
        return Err(Error::DimensionMismatch(format!(
            "{} measured subarrays, layout has {}",
            meas.subarrays.len(),
            layout.num_subarrays()
        )));
    }
    for (m, sub) in meas.subarrays.iter().enumerate() {
        if sub.w.ncols() != layout.pas_per_subarray || sub.w.nrows() != sub.y.len() {
            return Err(Error::DimensionMismatch(format!("measurement matrix of subarray {m}")));
        }
        if sub.y.is_empty() {
            return Err(Error::InvalidInput(format!("subarray {m} has no observations")));
        }
    }
    Ok(())
}

/// Builds the model response of a localized path on every subarray, refits a
/// complex gain against the residual and subtracts the fitted contribution.
pub(super) fn peel_path(
    layout: &ArrayLayout,
    meas: &MeasurementSet,
    radio: &RadioConfig,
    position: &Point3,
    scatter_user_distance: Option<f64>,
    refit: bool,
    residuals: &mut [DVector<C64>],
) -> Result<(Vec<C64>, Vec<DVector<C64>>)> {
    let amp = radio.p0.sqrt();
    let mut gains = Vec::with_capacity(residuals.len());
    let mut components = Vec::with_capacity(residuals.len());
    for (m, sub) in layout.subarrays.iter().enumerate() {
        let b = path_response(&sub.pa_positions, position, scatter_user_distance, radio)?;
        let w: &DMatrix<C64> = &meas.subarrays[m].w;
        let wb = w * &b;
        let energy = wb.norm_squared();
        let gain = if refit && energy > 0.0 {
            wb.dotc(&residuals[m]) / (energy * amp)
        } else {
            C64::new(1.0, 0.0)
        };
        residuals[m] -= &wb * (gain * amp);
        components.push(&b * gain);
        gains.push(gain);
    }
    Ok((gains, components))
}

/// Joint localization and channel reconstruction from stacked pilots.
///
/// For each path the loop rebuilds every subarray's dictionary at its
/// current reference distance, picks the best atom per subarray, localizes
/// the path from the resulting cosines and updates the distances, for at
/// most `max_outer_iters` rounds or until the position moves less than
/// `tolerance`. Paths whose coefficient falls below the floor end the
/// extraction.
pub fn run_omp_gcl(
    meas: &MeasurementSet,
    layout: &ArrayLayout,
    radio: &RadioConfig,
    config: &EstimatorConfig,
) -> Result<OmpGclOutput> {
    config.validate()?;
    check_consistency(meas, layout)?;
    let grid = AngleGrid::uniform(config.g_theta, config.grid_epsilon)?;
    let region = &layout.region;
    let refs = layout.references();
    let refs_xy = layout.references_xy();
    let planar_height = region.planar_height();
    let dh = region.h_pa - planar_height;

    let mut residuals: Vec<DVector<C64>> = meas.subarrays.iter().map(|s| s.y.clone()).collect();
    let mut paths: Vec<PathEstimateResult> = Vec::new();
    let mut user_coefficient = 0.0;

    for l in 0..config.num_paths {
        let mut distances = initial_distances(layout, config);
        let mut trace = Vec::with_capacity(config.max_outer_iters);
        let mut flags = EstimateFlags::default();
        let mut current: Option<(Point3, Vec<DirectionEstimate>, Vec<i8>)> = None;

        for it in 0..config.max_outer_iters {
            let directions = layout
                .subarrays
                .iter()
                .enumerate()
                .map(|(m, sub)| {
                    let dict = build_dp_dictionary(
                        m,
                        sub,
                        layout.pa_spacing,
                        distances[m],
                        dh,
                        &grid,
                        radio,
                        config.mode,
                    )?;
                    let dict = project_dictionary(&dict, &meas.subarrays[m].w)?;
                    let mut est = omp_direction(&residuals[m], &dict)?;
                    est.path = l;
                    Ok(est)
                })
                .collect::<Result<Vec<_>>>()?;
            let varphis: Vec<f64> = directions.iter().map(|d| d.varphi).collect();
            let mut iter_flags = EstimateFlags {
                low_confidence: directions.iter().any(|d| d.low_confidence),
                ..Default::default()
            };

            let (position, signs, cost) = match config.mode {
                Mode::Planar2D => {
                    let sol = resolve_signs(&refs_xy, &varphis, config.epsilon, config.lambda_penalty)?;
                    iter_flags.ambiguous = sol.ambiguous;
                    iter_flags.ill_conditioned = sol.ill_conditioned;
                    iter_flags.under_determined = sol.under_determined;
                    (
                        Point3::new(sol.position.x, sol.position.y, planar_height),
                        sol.signs.signs,
                        sol.total_cost,
                    )
                }
                Mode::Full3D => {
                    let sol = solve_position_3d(&refs, &varphis, region, config.lambda_penalty)?;
                    iter_flags.ambiguous = sol.ambiguous;
                    iter_flags.non_converged = !sol.converged;
                    iter_flags.under_determined = refs.len() < 3;
                    (sol.position, Vec::new(), sol.cost)
                }
            };
            trace.push(IterationTrace {
                iteration: it,
                distances: distances.clone(),
                varphis,
                signs: signs.clone(),
                position,
                cost,
            });
            flags = iter_flags;

            for (m, v) in refs.iter().enumerate() {
                let r = match config.mode {
                    Mode::Planar2D => v.horizontal_distance(&position),
                    Mode::Full3D => v.distance(&position),
                };
                distances[m] = r.max(MIN_REFERENCE_DISTANCE);
            }
            let moved = current.as_ref().map(|(p, ..)| p.distance(&position));
            current = Some((position, directions, signs));
            if moved.is_some_and(|d| d < config.tolerance) {
                break;
            }
        }

        let (position, directions, signs) = current.expect("at least one outer iteration runs");
        let magnitude = directions.iter().map(|d| d.coefficient.norm()).sum::<f64>() / directions.len() as f64;
        if l == 0 {
            user_coefficient = magnitude;
        } else if magnitude < config.coefficient_floor * user_coefficient {
            break;
        }
        let scatter_user_distance = (l > 0).then(|| position.distance(&paths[0].position));
        let (gains, components) = peel_path(
            layout,
            meas,
            radio,
            &position,
            scatter_user_distance,
            config.refit_coefficients,
            &mut residuals,
        )?;
        paths.push(PathEstimateResult {
            path: l,
            position,
            distances,
            directions,
            signs,
            scatter_user_distance,
            gains,
            components,
            trace,
            flags,
        });
    }

    Ok(assemble_output(layout, paths, &residuals))
}

pub(super) fn assemble_output(
    layout: &ArrayLayout,
    paths: Vec<PathEstimateResult>,
    residuals: &[DVector<C64>],
) -> OmpGclOutput {
    let channels = (0..layout.num_subarrays())
        .map(|m| {
            let mut h = DVector::zeros(layout.pas_per_subarray);
            for p in &paths {
                h += &p.components[m];
            }
            h
        })
        .collect();
    OmpGclOutput {
        paths,
        channels,
        residual_norms: residuals.iter().map(|r| r.norm()).collect(),
    }
}
