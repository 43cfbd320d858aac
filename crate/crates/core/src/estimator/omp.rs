use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dictionary::DpDictionary;
use crate::error::{Error, Result};
use crate::C64;

/// Best-matching atom of one subarray for one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub subarray: usize,
    pub path: usize,
    /// Direction cosine of the winning atom.
    pub varphi: f64,
    /// Index into the original angle (or polar) grid.
    pub grid_index: usize,
    /// Reference distance of the winning atom.
    pub distance: f64,
    /// Least-squares gain against the unnormalized projected atom.
    pub coefficient: C64,
    /// `|phi^H y|` with `phi` unit-norm.
    pub correlation: f64,
    pub low_confidence: bool,
}

/// Single OMP step: the unit-norm measurement atom most correlated with the
/// residual. Ties go to the lowest column.
pub fn omp_direction(y_res: &DVector<C64>, dict: &DpDictionary) -> Result<DirectionEstimate> {
    let phi = dict
        .measurement_atoms
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("dictionary has not been projected".into()))?;
    if phi.ncols() == 0 {
        return Err(Error::EmptyDictionary);
    }
    if phi.nrows() != y_res.len() {
        return Err(Error::DimensionMismatch(format!(
            "residual has {} samples, atoms have {} rows",
            y_res.len(),
            phi.nrows()
        )));
    }
    let corr = phi.ad_mul(y_res);
    let mut best = 0;
    let mut best_abs = corr[0].norm();
    for (k, c) in corr.iter().enumerate().skip(1) {
        let a = c.norm();
        if a > best_abs {
            best = k;
            best_abs = a;
        }
    }
    let y_norm = y_res.norm();
    Ok(DirectionEstimate {
        subarray: dict.subarray,
        path: 0,
        varphi: dict.cosines[best],
        grid_index: dict.grid_index[best],
        distance: dict.distances[best],
        coefficient: corr[best] / dict.column_norms[best],
        correlation: best_abs,
        low_confidence: y_norm == 0.0 || best_abs <= 1e-9 * y_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{measurement_matrix, waveguide_vector, RadioConfig};
    use crate::dictionary::{build_dp_dictionary, project_dictionary, AngleGrid};
    use crate::geometry::{Mode, Point3, SubarrayGeometry};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (DpDictionary, DMatrix<C64>) {
        let radio = RadioConfig::default();
        let d = radio.half_wavelength();
        let sub = SubarrayGeometry::new(Point3::new(0.0, 0.0, 2.0), 32, d);
        let grid = AngleGrid::uniform(256, 1e-3).unwrap();
        let dict = build_dp_dictionary(0, &sub, d, 12.0, 2.0, &grid, &radio, Mode::Planar2D).unwrap();
        let g = waveguide_vector(&sub, &radio);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let acts: Vec<Vec<bool>> = (0..64).map(|_| (0..32).map(|_| rng.random_bool(0.5)).collect()).collect();
        let w = measurement_matrix(&acts, &g);
        (project_dictionary(&dict, &w).unwrap(), w)
    }

    #[test]
    fn atom_matches_itself() {
        let (dict, _) = setup(1);
        let phi = dict.measurement_atoms.as_ref().unwrap();
        let y = phi.column(7).into_owned();
        let est = omp_direction(&y, &dict).unwrap();
        assert_eq!(est.grid_index, 7);
        assert!((est.correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn on_grid_path_recovered_by_exhaustive_oracle() {
        for seed in 0..5 {
            let (dict, w) = setup(seed);
            let g0 = 37 + 40 * seed as usize;
            let y = (&w * dict.atoms.column(g0)) * C64::new(0.3, -1.1);
            let est = omp_direction(&y, &dict).unwrap();
            // exhaustive correlation over every normalized projected atom
            let mut best = (0, -1.0);
            for g in 0..dict.num_columns() {
                let phi = &w * dict.atoms.column(g);
                let c = phi.dotc(&y).norm() / phi.norm();
                if c > best.1 {
                    best = (g, c);
                }
            }
            assert_eq!(est.grid_index, best.0);
            assert_eq!(est.grid_index, g0);
            assert!((est.coefficient - C64::new(0.3, -1.1)).norm() < 1e-9);
        }
    }

    #[test]
    fn orthogonal_residual_is_low_confidence() {
        let (dict, _) = setup(2);
        let y = DVector::<C64>::zeros(64);
        let est = omp_direction(&y, &dict).unwrap();
        assert!(est.low_confidence);
        assert_eq!(est.coefficient.norm(), 0.0);
        assert_eq!(est.grid_index, 0);
    }

    #[test]
    fn scaling_residual_keeps_selection() {
        let (dict, w) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = DVector::from_fn(32, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let y = &w * h;
        let base = omp_direction(&y, &dict).unwrap().grid_index;
        for c in [C64::new(-2.0, 0.5), C64::new(1e-6, 0.0), C64::new(0.0, 1e4)] {
            assert_eq!(omp_direction(&(&y * c), &dict).unwrap().grid_index, base);
        }
    }

    #[test]
    fn unprojected_dictionary_is_rejected() {
        let radio = RadioConfig::default();
        let sub = SubarrayGeometry::new(Point3::new(0.0, 0.0, 2.0), 4, 0.005);
        let grid = AngleGrid::uniform(8, 1e-3).unwrap();
        let dict = build_dp_dictionary(0, &sub, 0.005, 5.0, 2.0, &grid, &radio, Mode::Planar2D).unwrap();
        assert!(omp_direction(&DVector::zeros(4), &dict).is_err());
    }
}
