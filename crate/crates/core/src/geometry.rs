//! Service region, pinching-antenna placements and scene generation.
//!
//! Coordinates have their origin at a corner of the service region with `z`
//! pointing up; all lengths are in meters. Every subarray axis is parallel
//! to `+x`, so PA `n` of a subarray sits at `reference + (n * d, 0, 0)`.

use std::io::Write;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default minimum PA-to-point distance accepted by [`pa_user_distance`].
pub const DEFAULT_DISTANCE_GUARD: f64 = 1e-6;

/// Highest subarray count with a defined multi-waveguide placement.
pub const MAX_MW_SUBARRAYS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Distance in the horizontal plane, ignoring heights.
    pub fn horizontal_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn xy(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Reflection across the vertical plane `y = y_axis`.
    pub fn mirror_y(&self, y_axis: f64) -> Point3 {
        Point3::new(self.x, 2.0 * y_axis - self.y, self.z)
    }
}

/// Whether heights are a known constant (planar) or jointly estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "2d")]
    Planar2D,
    #[serde(rename = "3d")]
    Full3D,
}

/// Rectangular footprint `[0, size_x] x [0, size_y]` served by the waveguides.
///
/// In [`Mode::Planar2D`] every user/scatterer height equals `h_range.0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceRegion {
    pub size_x: f64,
    pub size_y: f64,
    /// Waveguide height.
    pub h_pa: f64,
    /// Closed interval of admissible user/scatterer heights.
    pub h_range: (f64, f64),
}

impl ServiceRegion {
    pub fn new(size_x: f64, size_y: f64, h_pa: f64, h_range: (f64, f64)) -> Result<Self> {
        let region = Self {
            size_x,
            size_y,
            h_pa,
            h_range,
        };
        region.validate()?;
        Ok(region)
    }

    /// 30 m x 30 m floor, waveguides at 2 m, users on the ground.
    pub fn planar_default() -> Self {
        Self {
            size_x: 30.0,
            size_y: 30.0,
            h_pa: 2.0,
            h_range: (0.0, 0.0),
        }
    }

    /// 30 m x 30 m floor, waveguides at 6 m, heights anywhere in `[0, 6]`.
    pub fn volumetric_default() -> Self {
        Self {
            size_x: 30.0,
            size_y: 30.0,
            h_pa: 6.0,
            h_range: (0.0, 6.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.size_x, self.size_y, self.h_pa, self.h_range.0, self.h_range.1]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidRegion("non-finite dimension".into()));
        }
        if self.size_x <= 0.0 || self.size_y <= 0.0 {
            return Err(Error::InvalidRegion(format!(
                "footprint must be positive, got {} x {}",
                self.size_x, self.size_y
            )));
        }
        let (lo, hi) = self.h_range;
        if lo < 0.0 || hi > self.h_pa || lo > hi {
            return Err(Error::InvalidRegion(format!(
                "height range [{lo}, {hi}] must lie inside [0, {}]",
                self.h_pa
            )));
        }
        Ok(())
    }

    /// Footprint center at mid-range height.
    pub fn center(&self) -> Point3 {
        Point3::new(
            0.5 * self.size_x,
            0.5 * self.size_y,
            0.5 * (self.h_range.0 + self.h_range.1),
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.size_x.hypot(self.size_y)
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        (0.0..=self.size_x).contains(&x) && (0.0..=self.size_y).contains(&y)
    }

    /// Height assumed for every point in planar mode.
    pub fn planar_height(&self) -> f64 {
        self.h_range.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// Single waveguide, subarrays time-multiplexed.
    Sw,
    /// One waveguide per subarray, measured concurrently.
    Mw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubarrayGeometry {
    /// Position of PA 0.
    pub reference: Point3,
    pub pa_positions: Vec<Point3>,
}

impl SubarrayGeometry {
    pub fn new(reference: Point3, n: usize, d: f64) -> Self {
        let pa_positions = (0..n)
            .map(|i| Point3::new(reference.x + i as f64 * d, reference.y, reference.z))
            .collect();
        Self {
            reference,
            pa_positions,
        }
    }

    pub fn len(&self) -> usize {
        self.pa_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pa_positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayLayout {
    pub structure: Structure,
    pub region: ServiceRegion,
    pub subarrays: Vec<SubarrayGeometry>,
    pub pa_spacing: f64,
    pub pas_per_subarray: usize,
}

impl ArrayLayout {
    /// Builds a layout from explicit PA-0 positions in the horizontal plane.
    pub fn from_references(
        structure: Structure,
        region: ServiceRegion,
        references: &[(f64, f64)],
        n: usize,
        d: f64,
    ) -> Result<Self> {
        region.validate()?;
        if references.is_empty() {
            return Err(Error::InvalidLayout("at least one subarray is required".into()));
        }
        if n == 0 {
            return Err(Error::InvalidLayout("subarrays need at least one PA".into()));
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidLayout(format!("PA spacing must be positive, got {d}")));
        }
        if structure == Structure::Sw {
            let y0 = references[0].1;
            if references.iter().any(|r| r.1 != y0) {
                return Err(Error::InvalidLayout(
                    "single-waveguide subarrays must share one y coordinate".into(),
                ));
            }
        }
        let subarrays = references
            .iter()
            .map(|&(x, y)| SubarrayGeometry::new(Point3::new(x, y, region.h_pa), n, d))
            .collect();
        Ok(Self {
            structure,
            region,
            subarrays,
            pa_spacing: d,
            pas_per_subarray: n,
        })
    }

    pub fn num_subarrays(&self) -> usize {
        self.subarrays.len()
    }

    pub fn references(&self) -> Vec<Point3> {
        self.subarrays.iter().map(|s| s.reference).collect()
    }

    pub fn references_xy(&self) -> Vec<Vector2<f64>> {
        self.subarrays.iter().map(|s| s.reference.xy()).collect()
    }

    /// All PA positions, subarray by subarray.
    pub fn all_pa_positions(&self) -> Vec<Point3> {
        self.subarrays
            .iter()
            .flat_map(|s| s.pa_positions.iter().copied())
            .collect()
    }

    /// Writes `subarray,pa,x,y,z` rows for plotting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["subarray", "pa", "x", "y", "z"])?;
        for (m, sub) in self.subarrays.iter().enumerate() {
            for (n, p) in sub.pa_positions.iter().enumerate() {
                w.write_record([
                    m.to_string(),
                    n.to_string(),
                    p.x.to_string(),
                    p.y.to_string(),
                    p.z.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Collinear subarrays on one waveguide at `y = S_y / 2`, PA 0 of subarray
/// `m` at `x = m * S_x / (M - 1)`.
///
/// The last subarray starts at the far edge and extends past it by its own
/// aperture. Subarrays whose apertures would overlap the next reference
/// point are rejected.
pub fn build_sw_layout(region: ServiceRegion, m: usize, n: usize, d: f64) -> Result<ArrayLayout> {
    region.validate()?;
    if m < 2 {
        return Err(Error::InvalidLayout(format!(
            "single-waveguide layout needs at least 2 subarrays, got {m}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidLayout(format!(
            "single-waveguide layout needs at least 2 PAs per subarray, got {n}"
        )));
    }
    let dx = region.size_x / (m - 1) as f64;
    let aperture = (n - 1) as f64 * d;
    if aperture >= dx {
        return Err(Error::LayoutOverflow(format!(
            "subarray aperture {aperture:.4} m reaches the next subarray at spacing {dx:.4} m"
        )));
    }
    let yc = 0.5 * region.size_y;
    let refs: Vec<(f64, f64)> = (0..m).map(|i| (i as f64 * dx, yc)).collect();
    ArrayLayout::from_references(Structure::Sw, region, &refs, n, d)
}

/// Multi-waveguide placement: the four corners first, then the four edge
/// midpoints (bottom, top, left, right).
///
/// Subarrays whose `+x` extent would leave the footprint are pulled back so
/// the last PA sits on the right boundary.
pub fn build_mw_layout(region: ServiceRegion, m: usize, n: usize, d: f64) -> Result<ArrayLayout> {
    region.validate()?;
    if m == 0 || m > MAX_MW_SUBARRAYS {
        return Err(Error::InvalidLayout(format!(
            "multi-waveguide layout supports 1..={MAX_MW_SUBARRAYS} subarrays, got {m}"
        )));
    }
    let aperture = n.saturating_sub(1) as f64 * d;
    if aperture > region.size_x {
        return Err(Error::LayoutOverflow(format!(
            "subarray aperture {aperture:.4} m exceeds region width {}",
            region.size_x
        )));
    }
    let refs: Vec<(f64, f64)> = mw_anchors(&region)
        .into_iter()
        .take(m)
        .map(|(x, y)| {
            let x = if x + aperture > region.size_x {
                region.size_x - aperture
            } else {
                x
            };
            (x, y)
        })
        .collect();
    ArrayLayout::from_references(Structure::Mw, region, &refs, n, d)
}

fn mw_anchors(region: &ServiceRegion) -> [(f64, f64); MAX_MW_SUBARRAYS] {
    let (sx, sy) = (region.size_x, region.size_y);
    [
        (0.0, 0.0),
        (sx, 0.0),
        (0.0, sy),
        (sx, sy),
        (0.5 * sx, 0.0),
        (0.5 * sx, sy),
        (0.0, 0.5 * sy),
        (sx, 0.5 * sy),
    ]
}

/// One subarray of `n` PAs with PA 0 at `(0, S_y / 2)`.
pub fn build_single_layout(region: ServiceRegion, n: usize, d: f64) -> Result<ArrayLayout> {
    ArrayLayout::from_references(Structure::Sw, region, &[(0.0, 0.5 * region.size_y)], n, d)
}

/// Euclidean PA-to-point distance, rejecting near-coincident points.
pub fn pa_user_distance(pa: &Point3, q: &Point3) -> Result<f64> {
    pa_user_distance_guarded(pa, q, DEFAULT_DISTANCE_GUARD)
}

pub fn pa_user_distance_guarded(pa: &Point3, q: &Point3, guard: f64) -> Result<f64> {
    let distance = pa.distance(q);
    if distance < guard {
        return Err(Error::SingularGeometry { distance, guard });
    }
    Ok(distance)
}

/// Ground-truth user (`points()[0]`) and scatterers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub user: Point3,
    pub scatterers: Vec<Point3>,
}

impl Scene {
    pub fn los_only(user: Point3) -> Self {
        Self {
            user,
            scatterers: Vec::new(),
        }
    }

    /// User followed by scatterers.
    pub fn points(&self) -> Vec<Point3> {
        std::iter::once(self.user)
            .chain(self.scatterers.iter().copied())
            .collect()
    }

    pub fn mirror_y(&self, y_axis: f64) -> Scene {
        Scene {
            user: self.user.mirror_y(y_axis),
            scatterers: self.scatterers.iter().map(|p| p.mirror_y(y_axis)).collect(),
        }
    }

    /// Writes `kind,index,x,y,z` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "index", "x", "y", "z"])?;
        for (l, p) in self.points().iter().enumerate() {
            let kind = if l == 0 { "user" } else { "scatterer" };
            w.write_record([
                kind.to_string(),
                l.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                p.z.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Uniform user and `l` scatterers over the footprint.
///
/// Planar mode pins every height to [`ServiceRegion::planar_height`]; 3D
/// mode draws heights uniformly from `h_range`.
pub fn sample_scene(region: &ServiceRegion, l: usize, rng_seed: u64, mode: Mode) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let x = region.size_x * rng.random::<f64>();
        let y = region.size_y * rng.random::<f64>();
        let z = match mode {
            Mode::Planar2D => region.planar_height(),
            Mode::Full3D => {
                let (lo, hi) = region.h_range;
                lo + (hi - lo) * rng.random::<f64>()
            }
        };
        Point3::new(x, y, z)
    };
    let user = draw(&mut rng);
    let scatterers = (0..l).map(|_| draw(&mut rng)).collect();
    Scene { user, scatterers }
}

/// Serializable description of a layout plus the seed of its scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub region: ServiceRegion,
    pub structure: Structure,
    pub m: usize,
    pub n: usize,
    pub d: f64,
    pub seed: u64,
}

impl LayoutConfig {
    pub fn build(&self) -> Result<ArrayLayout> {
        match self.structure {
            Structure::Sw if self.m == 1 => build_single_layout(self.region, self.n, self.d),
            Structure::Sw => build_sw_layout(self.region, self.m, self.n, self.d),
            Structure::Mw => build_mw_layout(self.region, self.m, self.n, self.d),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
