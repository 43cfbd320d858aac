//! Distance-parameterized angle-domain dictionaries and the polar-domain
//! baseline dictionary.
//!
//! An atom is the response of one subarray to a point at reference distance
//! `R` and direction cosine `cos(theta)` relative to PA 0:
//! `psi_n = (1/sqrt(N)) (lambda / (4 pi r_n)) exp(-j kappa r_n)`.
//! Atoms are pushed through the measurement matrix `W_m` and normalized to
//! unit `l2` norm before matching.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::RadioConfig;
use crate::error::{Error, Result};
use crate::geometry::{Mode, SubarrayGeometry};
use crate::C64;

pub const DEFAULT_GRID_POINTS: usize = 1024;
pub const DEFAULT_GRID_EPSILON: f64 = 1e-3;
pub const DEFAULT_POLAR_RINGS: usize = 16;

/// Direction cosines uniform over `[-1 + eps, 1 - eps]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    pub values: Vec<f64>,
}

impl AngleGrid {
    pub fn uniform(points: usize, epsilon: f64) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidParameter(format!("angle grid needs >= 2 points, got {points}")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("grid clip must lie in (0, 1), got {epsilon}")));
        }
        let hi = 1.0 - epsilon;
        let step = 2.0 * hi / (points - 1) as f64;
        // Built from both ends so the grid is exactly antisymmetric.
        let values = (0..points)
            .map(|g| {
                let mirror = points - 1 - g;
                if g <= mirror {
                    -hi + g as f64 * step
                } else {
                    hi - mirror as f64 * step
                }
            })
            .collect();
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// PA-`n` distance for a point at reference distance `r` and direction
/// cosine `cosang`.
///
/// Planar: `sqrt(R^2 + n^2 d^2 - 2 n d R cos + dh^2)` with `R` horizontal.
/// 3D: `sqrt(R^2 + n^2 d^2 - 2 n d R cos)` with `R` the full distance and
/// `dh` ignored.
pub fn parameterized_distance(r: f64, cosang: f64, n: usize, d: f64, dh: f64, mode: Mode) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("reference distance must be positive, got {r}")));
    }
    if !(cosang.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("direction cosine must satisfy |c| < 1, got {cosang}")));
    }
    let nd = n as f64 * d;
    let mut radicand = r * r + nd * nd - 2.0 * nd * r * cosang;
    if mode == Mode::Planar2D {
        radicand += dh * dh;
    }
    if !(radicand > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "non-positive radicand {radicand:e} at R={r}, cos={cosang}, n={n}"
        )));
    }
    Ok(radicand.sqrt())
}

/// Dictionary for one subarray.
///
/// Columns of `atoms` and `measurement_atoms` are aligned; `grid_index[k]`
/// names the original grid point of column `k`. Columns that could not be
/// built or that the measurement matrix annihilates are listed in `dropped`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpDictionary {
    pub subarray: usize,
    pub mode: Mode,
    /// Reference distance of every column (one value for DP dictionaries,
    /// the ring distance per column for polar dictionaries).
    pub distances: Vec<f64>,
    pub cosines: Vec<f64>,
    pub grid_index: Vec<usize>,
    pub atoms: DMatrix<C64>,
    pub measurement_atoms: Option<DMatrix<C64>>,
    /// `||W psi_g||` before normalization.
    pub column_norms: Vec<f64>,
    pub dropped: Vec<usize>,
}

impl DpDictionary {
    pub fn num_columns(&self) -> usize {
        self.cosines.len()
    }

    /// Writes `g,cos,column_norm` rows. Column norms are blank before projection.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["g", "distance", "cos", "column_norm"])?;
        for k in 0..self.num_columns() {
            let norm = self.column_norms.get(k).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                self.grid_index[k].to_string(),
                self.distances[k].to_string(),
                self.cosines[k].to_string(),
                norm,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn atom(
    sub: &SubarrayGeometry,
    d: f64,
    r_param: f64,
    cosang: f64,
    dh: f64,
    radio: &RadioConfig,
    mode: Mode,
) -> Result<Vec<C64>> {
    let n_pas = sub.len();
    let scale = radio.wavelength / (4.0 * PI * (n_pas as f64).sqrt());
    (0..n_pas)
        .map(|n| {
            let r = parameterized_distance(r_param, cosang, n, d, dh, mode)?;
            Ok(C64::from_polar(scale / r, -radio.wavenumber * r))
        })
        .collect()
}

fn assemble(
    subarray: usize,
    mode: Mode,
    n_pas: usize,
    columns: Vec<(usize, f64, f64, Vec<C64>)>,
    dropped: Vec<usize>,
) -> Result<DpDictionary> {
    if columns.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let atoms = DMatrix::from_fn(n_pas, columns.len(), |n, k| columns[k].3[n]);
    Ok(DpDictionary {
        subarray,
        mode,
        distances: columns.iter().map(|c| c.1).collect(),
        cosines: columns.iter().map(|c| c.2).collect(),
        grid_index: columns.iter().map(|c| c.0).collect(),
        atoms,
        measurement_atoms: None,
        column_norms: Vec::new(),
        dropped,
    })
}

/// Angle-domain dictionary at a fixed reference distance `r_param`.
///
/// `dh` is the known PA-to-target height difference used in planar mode.
pub fn build_dp_dictionary(
    subarray: usize,
    sub: &SubarrayGeometry,
    d: f64,
    r_param: f64,
    dh: f64,
    grid: &AngleGrid,
    radio: &RadioConfig,
    mode: Mode,
) -> Result<DpDictionary> {
    if !(r_param > 0.0) {
        return Err(Error::InvalidParameter(format!("reference distance must be positive, got {r_param}")));
    }
    let mut columns = Vec::with_capacity(grid.len());
    let mut dropped = Vec::new();
    for (g, &c) in grid.values.iter().enumerate() {
        match atom(sub, d, r_param, c, dh, radio, mode) {
            Ok(col) => columns.push((g, r_param, c, col)),
            Err(Error::InvalidParameter(_)) => dropped.push(g),
            Err(e) => return Err(e),
        }
    }
    assemble(subarray, mode, sub.len(), columns, dropped)
}

/// Joint (ring distance, angle) dictionary; column `i * G + g` holds ring `i`
/// at angle `g`.
pub fn build_polar_dictionary(
    subarray: usize,
    sub: &SubarrayGeometry,
    d: f64,
    dh: f64,
    radio: &RadioConfig,
    grid: &AngleGrid,
    distance_grid: &[f64],
) -> Result<DpDictionary> {
    if distance_grid.is_empty() || distance_grid.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidParameter("distance grid must be nonempty and positive".into()));
    }
    let mut columns = Vec::with_capacity(grid.len() * distance_grid.len());
    let mut dropped = Vec::new();
    for (i, &r) in distance_grid.iter().enumerate() {
        for (g, &c) in grid.values.iter().enumerate() {
            let idx = i * grid.len() + g;
            match atom(sub, d, r, c, dh, radio, Mode::Planar2D) {
                Ok(col) => columns.push((idx, r, c, col)),
                Err(Error::InvalidParameter(_)) => dropped.push(idx),
                Err(e) => return Err(e),
            }
        }
    }
    assemble(subarray, Mode::Planar2D, sub.len(), columns, dropped)
}

/// `count` distances spaced geometrically over `[min, max]`.
pub fn geometric_rings(count: usize, min: f64, max: f64) -> Result<Vec<f64>> {
    if count == 0 || !(min > 0.0) || max < min {
        return Err(Error::InvalidParameter(format!(
            "ring set needs count >= 1 and 0 < min <= max, got {count}, {min}, {max}"
        )));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let ratio = (max / min).powf(1.0 / (count - 1) as f64);
    Ok((0..count).map(|i| min * ratio.powi(i as i32)).collect())
}

/// Fills `measurement_atoms = normalize(W psi_g)`.
///
/// Columns whose projection vanishes are removed from both matrices.
pub fn project_dictionary(dict: &DpDictionary, w: &DMatrix<C64>) -> Result<DpDictionary> {
    if w.ncols() != dict.atoms.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "measurement matrix has {} columns, atoms have {} rows",
            w.ncols(),
            dict.atoms.nrows()
        )));
    }
    let projected = sparse_row_product(w, &dict.atoms);
    let norms: Vec<f64> = projected.column_iter().map(|c| c.norm()).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let usable: Vec<bool> = norms.iter().map(|&v| v > 0.0 && v > 1e-14 * max_norm).collect();
    let keep: Vec<usize> = (0..norms.len()).filter(|&k| usable[k]).collect();
    if keep.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let mut dropped = dict.dropped.clone();
    dropped.extend((0..norms.len()).filter(|&k| !usable[k]).map(|k| dict.grid_index[k]));
    let select = |m: &DMatrix<C64>| DMatrix::from_fn(m.nrows(), keep.len(), |r, k| m[(r, keep[k])]);
    let mut phi = select(&projected);
    for (k, mut col) in phi.column_iter_mut().enumerate() {
        col /= C64::new(norms[keep[k]], 0.0);
    }
    Ok(DpDictionary {
        subarray: dict.subarray,
        mode: dict.mode,
        distances: keep.iter().map(|&k| dict.distances[k]).collect(),
        cosines: keep.iter().map(|&k| dict.cosines[k]).collect(),
        grid_index: keep.iter().map(|&k| dict.grid_index[k]).collect(),
        atoms: if keep.len() == norms.len() { dict.atoms.clone() } else { select(&dict.atoms) },
        measurement_atoms: Some(phi),
        column_norms: keep.iter().map(|&k| norms[k]).collect(),
        dropped,
    })
}

/// `W * atoms`, skipping the zero entries of `W` (inactive PAs).
fn sparse_row_product(w: &DMatrix<C64>, atoms: &DMatrix<C64>) -> DMatrix<C64> {
    let rows: Vec<Vec<(usize, C64)>> = (0..w.nrows())
        .map(|t| {
            (0..w.ncols())
                .filter_map(|n| {
                    let v = w[(t, n)];
                    (v != C64::new(0.0, 0.0)).then_some((n, v))
                })
                .collect()
        })
        .collect();
    let mut out = DMatrix::zeros(w.nrows(), atoms.ncols());
    for (g, col) in atoms.column_iter().enumerate() {
        for (t, row) in rows.iter().enumerate() {
            out[(t, g)] = row.iter().map(|&(n, v)| v * col[n]).sum();
        }
    }
    out
}

/// Largest `|<phi_a, phi_b>|` between distinct normalized columns.
pub fn mutual_coherence(columns: &DMatrix<C64>) -> f64 {
    let normalized: Vec<DVector<C64>> = columns
        .column_iter()
        .map(|c| {
            let n = c.norm();
            c.into_owned() / C64::new(n, 0.0)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for a in 0..normalized.len() {
        for b in a + 1..normalized.len() {
            worst = worst.max(normalized[a].dotc(&normalized[b]).norm());
        }
    }
    worst
}
