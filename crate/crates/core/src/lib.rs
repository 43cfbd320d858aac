//! Pinching-antenna subarray localization and channel reconstruction.
//!
//! The crate simulates pilot measurements collected by groups of pinching
//! antennas (subarrays) mounted on dielectric waveguides, estimates per-subarray
//! direction cosines with a distance-parameterized dictionary and orthogonal
//! matching pursuit, fuses them into user/scatterer positions by
//! geometry-consistent least squares, and rebuilds the spherical-wave channel.
//!
//! Module map:
//!
//! - [`geometry`]: service region, single/multi-waveguide layouts, scenes.
//! - [`channel`]: spherical-wave channels, activation schedules, pilots.
//! - [`dictionary`]: angle grids, DP and polar dictionaries, projection.
//! - [`estimator`]: OMP direction finding, sign resolution, 3D solver, the
//!   full estimation loop and the polar-domain baseline.
//! - [`crlb`]: Fisher information and bearing-only localization bounds.
//! - [`harness`]: metrics, experiment configuration and Monte-Carlo sweeps.

pub mod channel;
pub mod crlb;
pub mod dictionary;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;

pub use error::{Error, Result};

/// Complex baseband sample type used throughout the crate.
pub type C64 = num_complex::Complex64;
