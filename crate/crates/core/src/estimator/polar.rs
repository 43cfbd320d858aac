//! Near-field baseline: a single array matched against a joint
//! (distance, angle) dictionary, with the position read off the winning atom.

use nalgebra::DVector;

use super::pipeline::{assemble_output, check_consistency, peel_path};
use super::{omp_direction, EstimateFlags, EstimatorConfig, IterationTrace, OmpGclOutput, PathEstimateResult};
use crate::channel::{MeasurementSet, RadioConfig};
use crate::dictionary::{build_polar_dictionary, geometric_rings, project_dictionary, AngleGrid};
use crate::error::{Error, Result};
use crate::geometry::{ArrayLayout, Mode, Point3};
use crate::C64;

/// Innermost ring of the default distance grid.
const MIN_RING_DISTANCE: f64 = 1.0;

/// Runs the baseline on a one-subarray layout.
///
/// A single line array cannot tell a point from its mirror across the array
/// axis, so the position takes the negative-side bearing and every path is
/// flagged ambiguous. `rings` overrides the geometric ring set spanning 1 m
/// to the region diagonal.
pub fn run_polar_baseline(
    meas: &MeasurementSet,
    layout: &ArrayLayout,
    radio: &RadioConfig,
    config: &EstimatorConfig,
    rings: Option<&[f64]>,
) -> Result<OmpGclOutput> {
    config.validate()?;
    if layout.num_subarrays() != 1 {
        return Err(Error::InvalidInput(format!(
            "the polar baseline needs exactly one array, got {}",
            layout.num_subarrays()
        )));
    }
    if config.mode != Mode::Planar2D {
        return Err(Error::InvalidInput("the polar baseline is planar only".into()));
    }
    check_consistency(meas, layout)?;
    let region = &layout.region;
    let rings = match rings {
        Some(r) => r.to_vec(),
        None => geometric_rings(config.polar_rings, MIN_RING_DISTANCE, region.diagonal())?,
    };
    let grid = AngleGrid::uniform(config.g_theta, config.grid_epsilon)?;
    let sub = &layout.subarrays[0];
    let height = region.planar_height();
    let dh = region.h_pa - height;
    let dict = build_polar_dictionary(0, sub, layout.pa_spacing, dh, radio, &grid, &rings)?;
    let dict = project_dictionary(&dict, &meas.subarrays[0].w)?;

    let mut residuals: Vec<DVector<C64>> = vec![meas.subarrays[0].y.clone()];
    let mut paths: Vec<PathEstimateResult> = Vec::new();
    let mut user_coefficient = 0.0;
    for l in 0..config.num_paths {
        let mut est = omp_direction(&residuals[0], &dict)?;
        est.path = l;
        let magnitude = est.coefficient.norm();
        if l == 0 {
            user_coefficient = magnitude;
        } else if magnitude < config.coefficient_floor * user_coefficient {
            break;
        }
        let v = sub.reference;
        let sin = (1.0 - est.varphi * est.varphi).max(0.0).sqrt();
        let position = Point3::new(v.x + est.distance * est.varphi, v.y - est.distance * sin, height);
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
        let flags = EstimateFlags {
            ambiguous: true,
            low_confidence: est.low_confidence,
            ..Default::default()
        };
        paths.push(PathEstimateResult {
            path: l,
            position,
            distances: vec![est.distance],
            trace: vec![IterationTrace {
                iteration: 0,
                distances: vec![est.distance],
                varphis: vec![est.varphi],
                signs: vec![-1],
                position,
                cost: 0.0,
            }],
            directions: vec![est],
            signs: vec![-1],
            scatter_user_distance,
            gains,
            components,
            flags,
        });
    }
    Ok(assemble_output(layout, paths, &residuals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{make_schedule, measure, synthesize_paths};
    use crate::geometry::{build_mw_layout, build_single_layout, Scene, ServiceRegion};

    #[test]
    fn on_ring_user_is_recovered() {
        let radio = RadioConfig::default();
        let region = ServiceRegion::planar_default();
        let layout = build_single_layout(region, 96, radio.half_wavelength()).unwrap();
        let rings = [4.0, 8.0, 16.0];
        let grid = AngleGrid::uniform(256, 1e-3).unwrap();
        let c = grid.values[160];
        let r = 8.0;
        let v = layout.subarrays[0].reference;
        let user = Point3::new(v.x + r * c, v.y - r * (1.0 - c * c).sqrt(), 0.0);
        let scene = Scene::los_only(user);
        let paths = synthesize_paths(&layout, &scene, &radio).unwrap();
        let sched = make_schedule(&layout, 64, 0.5, 3).unwrap();
        let meas = measure(&layout, &sched, &paths, &radio, f64::INFINITY, 3).unwrap();
        let config = EstimatorConfig {
            g_theta: 256,
            ..Default::default()
        };
        let out = run_polar_baseline(&meas, &layout, &radio, &config, Some(&rings)).unwrap();
        assert!(out.user().distance(&user) < 1e-9, "{:?}", out.user());
        assert!(out.flags().ambiguous);
        assert!(out.residual_norms[0] < 1e-9 * meas.subarrays[0].y.norm());
    }

    #[test]
    fn needs_a_single_array() {
        let radio = RadioConfig::default();
        let layout = build_mw_layout(ServiceRegion::planar_default(), 2, 16, radio.half_wavelength()).unwrap();
        let scene = Scene::los_only(Point3::new(10.0, 10.0, 0.0));
        let paths = synthesize_paths(&layout, &scene, &radio).unwrap();
        let sched = make_schedule(&layout, 16, 0.5, 1).unwrap();
        let meas = measure(&layout, &sched, &paths, &radio, 10.0, 1).unwrap();
        assert!(run_polar_baseline(&meas, &layout, &radio, &EstimatorConfig::default(), None).is_err());
    }
}
