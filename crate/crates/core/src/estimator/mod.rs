//! Direction finding, geometry-consistent localization and channel
//! reconstruction.

mod gcl;
mod omp;
mod pipeline;
mod polar;
mod solver3d;

use serde::{Deserialize, Serialize};

pub(crate) use gcl::sym2_eigen;
pub use gcl::{
    direction_penalty, ls_cost, projection_matrix, resolve_signs, solve_position_ls, GclSolution, LsSolution,
    SignVector, ILL_CONDITIONED_EIGENVALUE, MAX_SIGN_SUBARRAYS,
};
pub use omp::{omp_direction, DirectionEstimate};
pub use pipeline::{
    reconstruct_channel, run_omp_gcl, EstimateFlags, IterationTrace, OmpGclOutput, PathEstimateResult,
};
pub use polar::run_polar_baseline;
pub use solver3d::{gcl3d_cost, solve_position_3d, Solution3d};

use crate::dictionary::{DEFAULT_GRID_EPSILON, DEFAULT_GRID_POINTS, DEFAULT_POLAR_RINGS};
use crate::error::{Error, Result};
use crate::geometry::Mode;

/// Initial reference distance of every subarray's dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RInit {
    /// Distance from each subarray's PA 0 to the region center.
    RegionCenter,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub max_outer_iters: usize,
    pub r_init: RInit,
    pub g_theta: usize,
    pub grid_epsilon: f64,
    /// Tikhonov term of the closed-form position solve.
    pub epsilon: f64,
    /// Weight of the direction-consistency penalty.
    pub lambda_penalty: f64,
    /// Paths to extract, user first.
    pub num_paths: usize,
    pub mode: Mode,
    /// Early exit once the position moves less than this between iterations.
    pub tolerance: f64,
    /// A path is absent when its mean coefficient magnitude falls below this
    /// fraction of the user path's.
    pub coefficient_floor: f64,
    /// Refit one complex gain per subarray and path after localization.
    pub refit_coefficients: bool,
    /// Ring count of the polar-domain baseline dictionary.
    pub polar_rings: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 3,
            r_init: RInit::RegionCenter,
            g_theta: DEFAULT_GRID_POINTS,
            grid_epsilon: DEFAULT_GRID_EPSILON,
            epsilon: 1e-9,
            lambda_penalty: 1.0,
            num_paths: 1,
            mode: Mode::Planar2D,
            tolerance: 1e-3,
            coefficient_floor: 1e-3,
            refit_coefficients: true,
            polar_rings: DEFAULT_POLAR_RINGS,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidParameter("at least one outer iteration is required".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lambda_penalty >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty weight must be non-negative, got {}",
                self.lambda_penalty
            )));
        }
        if self.num_paths == 0 {
            return Err(Error::InvalidParameter("at least the user path must be estimated".into()));
        }
        if self.g_theta < 2 {
            return Err(Error::InvalidParameter("angle grid needs at least 2 points".into()));
        }
        if let RInit::Fixed(r) = self.r_init {
            if !(r > 0.0) {
                return Err(Error::InvalidParameter(format!("initial distance must be positive, got {r}")));
            }
        }
        Ok(())
    }
}
