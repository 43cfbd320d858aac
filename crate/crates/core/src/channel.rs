//! Spherical-wave channel synthesis, activation schedules and pilot
//! measurements.
//!
//! Each subarray `m` observes `y_{m,t} = sqrt(P0) g_m^H A_{m,t} h_m + n_{m,t}`
//! where `g_m` is the in-waveguide propagation vector, `A_{m,t}` a diagonal
//! binary activation matrix and `h_m` the sum of a line-of-sight and several
//! scatterer components.

use std::f64::consts::PI;
use std::io::{BufRead, Read, Write};
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pa_user_distance, ArrayLayout, Point3, Scene, Structure, SubarrayGeometry};
use crate::C64;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Carrier and waveguide constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    pub frequency: f64,
    pub wavelength: f64,
    pub wavenumber: f64,
    /// Guided refraction index of the dielectric waveguide.
    pub n_eff: f64,
    /// Pilot transmit power (linear).
    pub p0: f64,
}

impl RadioConfig {
    pub fn new(frequency: f64, n_eff: f64, p0: f64) -> Result<Self> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::InvalidParameter(format!("frequency must be positive, got {frequency}")));
        }
        if !(n_eff >= 1.0) {
            return Err(Error::InvalidParameter(format!("n_eff must be >= 1, got {n_eff}")));
        }
        if !(p0 > 0.0) {
            return Err(Error::InvalidParameter(format!("p0 must be positive, got {p0}")));
        }
        let wavelength = SPEED_OF_LIGHT / frequency;
        Ok(Self {
            frequency,
            wavelength,
            wavenumber: 2.0 * PI / wavelength,
            n_eff,
            p0,
        })
    }

    /// Half-wavelength PA spacing.
    pub fn half_wavelength(&self) -> f64 {
        0.5 * self.wavelength
    }
}

impl Default for RadioConfig {
    /// 28 GHz carrier, `n_eff = 1.4`, unit pilot power.
    fn default() -> Self {
        Self::new(28e9, 1.4, 1.0).expect("default radio constants are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathKind {
    LoS,
    NLoS,
}

/// One propagation path as seen by one subarray.
#[derive(Debug, Clone, PartialEq)]
pub struct PathComponent {
    pub index: usize,
    pub source: Point3,
    pub kind: PathKind,
    /// Scatterer-to-user distance, present for scatterer paths only.
    pub scatter_user_distance: Option<f64>,
    /// Per-PA complex response `alpha_n exp(-j kappa r_n)`.
    pub response: DVector<C64>,
}

/// Path response at arbitrary PA positions.
///
/// Line of sight: `lambda / (4 pi r_n) e^{-j kappa r_n}`. With a scatterer
/// distance `r_su` the amplitude becomes
/// `lambda e^{-j kappa r_su} / ((4 pi)^{3/2} r_n r_su)`.
pub fn path_response(
    pas: &[Point3],
    source: &Point3,
    scatter_user_distance: Option<f64>,
    radio: &RadioConfig,
) -> Result<DVector<C64>> {
    let lambda = radio.wavelength;
    let kappa = radio.wavenumber;
    let scale = match scatter_user_distance {
        None => C64::new(lambda / (4.0 * PI), 0.0),
        Some(rsu) => {
            if !(rsu > 0.0) {
                return Err(Error::SingularGeometry {
                    distance: rsu,
                    guard: crate::geometry::DEFAULT_DISTANCE_GUARD,
                });
            }
            C64::from_polar(lambda / ((4.0 * PI).powf(1.5) * rsu), -kappa * rsu)
        }
    };
    let mut out = DVector::zeros(pas.len());
    for (n, pa) in pas.iter().enumerate() {
        let r = pa_user_distance(pa, source)?;
        out[n] = scale * C64::from_polar(1.0 / r, -kappa * r);
    }
    Ok(out)
}

/// Per-subarray path components for every point of the scene.
pub fn synthesize_paths(
    layout: &ArrayLayout,
    scene: &Scene,
    radio: &RadioConfig,
) -> Result<Vec<Vec<PathComponent>>> {
    let points = scene.points();
    layout
        .subarrays
        .iter()
        .map(|sub| {
            points
                .iter()
                .enumerate()
                .map(|(l, q)| {
                    let (kind, rsu) = if l == 0 {
                        (PathKind::LoS, None)
                    } else {
                        (PathKind::NLoS, Some(q.distance(&scene.user)))
                    };
                    Ok(PathComponent {
                        index: l,
                        source: *q,
                        kind,
                        scatter_user_distance: rsu,
                        response: path_response(&sub.pa_positions, q, rsu, radio)?,
                    })
                })
                .collect()
        })
        .collect()
}

/// Sum of all path components of one subarray.
pub fn channel_vector(paths: &[PathComponent]) -> Result<DVector<C64>> {
    let first = paths
        .first()
        .ok_or_else(|| Error::InvalidInput("channel needs at least one path".into()))?;
    let mut h = first.response.clone();
    for p in &paths[1..] {
        if p.response.len() != h.len() {
            return Err(Error::DimensionMismatch("path responses differ in length".into()));
        }
        h += &p.response;
    }
    Ok(h)
}

/// Channels of every subarray for a scene.
pub fn scene_channels(layout: &ArrayLayout, scene: &Scene, radio: &RadioConfig) -> Result<Vec<DVector<C64>>> {
    synthesize_paths(layout, scene, radio)?
        .iter()
        .map(|p| channel_vector(p))
        .collect()
}

/// In-waveguide propagation vector `g_n = exp(j kappa n_eff x_n)`.
pub fn waveguide_vector(sub: &SubarrayGeometry, radio: &RadioConfig) -> DVector<C64> {
    let k = radio.wavenumber * radio.n_eff;
    DVector::from_iterator(
        sub.len(),
        sub.pa_positions.iter().map(|p| C64::from_polar(1.0, k * p.x)),
    )
}

/// Binary PA activations for every slot and subarray.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSchedule {
    pub structure: Structure,
    pub total_slots: usize,
    /// `activations[t][m][n]`.
    pub activations: Vec<Vec<Vec<bool>>>,
    /// Contiguous slot block of each subarray (single-waveguide only).
    pub partition: Option<Vec<Range<usize>>>,
}

impl ActivationSchedule {
    pub fn num_subarrays(&self) -> usize {
        self.activations.first().map_or(0, |slot| slot.len())
    }

    /// Slots in which subarray `m` is measured.
    pub fn observed_slots(&self, m: usize) -> Range<usize> {
        match &self.partition {
            Some(blocks) => blocks[m].clone(),
            None => 0..self.total_slots,
        }
    }

    pub fn is_live(&self, t: usize, m: usize) -> bool {
        self.activations[t][m].iter().any(|&a| a)
    }
}

/// Random activation schedule.
///
/// Single waveguide: slots split into `M` contiguous equal blocks (remainder
/// to the last), only the block's own subarray draws Bernoulli activations.
/// Multi waveguide: every subarray draws independently in every slot. A
/// drawn all-zero vector is redrawn.
pub fn make_schedule(
    layout: &ArrayLayout,
    total_slots: usize,
    density: f64,
    rng_seed: u64,
) -> Result<ActivationSchedule> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidSchedule(format!("density must lie in (0, 1], got {density}")));
    }
    let m_count = layout.num_subarrays();
    let n = layout.pas_per_subarray;
    if total_slots == 0 {
        return Err(Error::InvalidSchedule("at least one slot is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let draw = |rng: &mut ChaCha8Rng| loop {
        let v: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
        if v.iter().any(|&a| a) {
            break v;
        }
    };
    let mut activations = vec![vec![vec![false; n]; m_count]; total_slots];
    let partition = match layout.structure {
        Structure::Sw => {
            if total_slots < m_count {
                return Err(Error::InvalidSchedule(format!(
                    "{total_slots} slots cannot be split among {m_count} subarrays"
                )));
            }
            let block = total_slots / m_count;
            let blocks: Vec<Range<usize>> = (0..m_count)
                .map(|m| {
                    let end = if m + 1 == m_count { total_slots } else { (m + 1) * block };
                    m * block..end
                })
                .collect();
            for (m, range) in blocks.iter().enumerate() {
                for t in range.clone() {
                    activations[t][m] = draw(&mut rng);
                }
            }
            Some(blocks)
        }
        Structure::Mw => {
            for slot in activations.iter_mut() {
                for sub in slot.iter_mut() {
                    *sub = draw(&mut rng);
                }
            }
            None
        }
    };
    Ok(ActivationSchedule {
        structure: layout.structure,
        total_slots,
        activations,
        partition,
    })
}

/// Stacked observations of one subarray.
#[derive(Debug, Clone, PartialEq)]
pub struct SubarrayMeasurement {
    /// Global slot index of each observation.
    pub slots: Vec<usize>,
    pub activations: Vec<Vec<bool>>,
    pub y: DVector<C64>,
    /// Measurement matrix with rows `(A_{m,t} g_m)^H`.
    pub w: DMatrix<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub subarrays: Vec<SubarrayMeasurement>,
    pub noise_variance: f64,
    pub snr_db: f64,
}

impl MeasurementSet {
    /// Number of distinct time slots used by the whole set.
    pub fn total_slots(&self) -> usize {
        let mut slots: Vec<usize> = self.subarrays.iter().flat_map(|s| s.slots.iter().copied()).collect();
        slots.sort_unstable();
        slots.dedup();
        slots.len()
    }
}

/// Stacks `(A_t g)^H` rows for a list of activation vectors.
pub fn measurement_matrix(activations: &[Vec<bool>], g: &DVector<C64>) -> DMatrix<C64> {
    let n = g.len();
    DMatrix::from_fn(activations.len(), n, |t, i| {
        if activations[t][i] {
            g[i].conj()
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Noisy pilot observations for every subarray.
///
/// The noise variance is the mean live-slot signal power over all subarrays
/// divided by `10^(snr_db / 10)`; `snr_db = +inf` gives noiseless data.
pub fn measure(
    layout: &ArrayLayout,
    schedule: &ActivationSchedule,
    paths: &[Vec<PathComponent>],
    radio: &RadioConfig,
    snr_db: f64,
    rng_seed: u64,
) -> Result<MeasurementSet> {
    let m_count = layout.num_subarrays();
    if schedule.num_subarrays() != m_count || paths.len() != m_count {
        return Err(Error::DimensionMismatch(format!(
            "layout has {m_count} subarrays, schedule {} and paths {}",
            schedule.num_subarrays(),
            paths.len()
        )));
    }
    let amp = radio.p0.sqrt();
    let mut clean = Vec::with_capacity(m_count);
    let (mut power, mut live) = (0.0, 0usize);
    for (m, sub) in layout.subarrays.iter().enumerate() {
        let h = channel_vector(&paths[m])?;
        if h.len() != sub.len() {
            return Err(Error::DimensionMismatch("channel length differs from PA count".into()));
        }
        let g = waveguide_vector(sub, radio);
        let slots: Vec<usize> = schedule
            .observed_slots(m)
            .filter(|&t| schedule.is_live(t, m))
            .collect();
        let activations: Vec<Vec<bool>> = slots.iter().map(|&t| schedule.activations[t][m].clone()).collect();
        let w = measurement_matrix(&activations, &g);
        let y = (&w * &h) * C64::new(amp, 0.0);
        power += y.iter().map(|v| v.norm_sqr()).sum::<f64>();
        live += y.len();
        clean.push(SubarrayMeasurement {
            slots,
            activations,
            y,
            w,
        });
    }
    if live == 0 {
        return Err(Error::InvalidSchedule("no subarray is active in any slot".into()));
    }
    let noise_variance = if snr_db == f64::INFINITY {
        0.0
    } else {
        power / live as f64 / 10f64.powf(snr_db / 10.0)
    };
    if noise_variance > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let sd = (0.5 * noise_variance).sqrt();
        for sub in clean.iter_mut() {
            for v in sub.y.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *v += C64::new(sd * re, sd * im);
            }
        }
    }
    Ok(MeasurementSet {
        subarrays: clean,
        noise_variance,
        snr_db,
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("not a number: {s:?}")))
}

/// Writes `subarray,slot,re,im` rows (17 significant digits) preceded by
/// `# snr_db=` and `# noise_variance=` comment lines, and an activation
/// sidecar with `subarray,slot,bits` rows.
pub fn write_measurements<W1: Write, W2: Write>(
    set: &MeasurementSet,
    mut observations: W1,
    activations: W2,
) -> Result<()> {
    writeln!(observations, "# snr_db={}", fmt_f64(set.snr_db))?;
    writeln!(observations, "# noise_variance={}", fmt_f64(set.noise_variance))?;
    let mut obs = csv::Writer::from_writer(observations);
    let mut act = csv::Writer::from_writer(activations);
    obs.write_record(["subarray", "slot", "re", "im"])?;
    act.write_record(["subarray", "slot", "bits"])?;
    for (m, sub) in set.subarrays.iter().enumerate() {
        for (k, &t) in sub.slots.iter().enumerate() {
            obs.write_record([m.to_string(), t.to_string(), fmt_f64(sub.y[k].re), fmt_f64(sub.y[k].im)])?;
            let bits: String = sub.activations[k].iter().map(|&a| if a { '1' } else { '0' }).collect();
            act.write_record([m.to_string(), t.to_string(), bits])?;
        }
    }
    obs.flush()?;
    act.flush()?;
    Ok(())
}

/// Reads files written by [`write_measurements`] and rebuilds each `W_m`
/// from the activation bits and the layout's waveguide vectors.
pub fn read_measurements<R1: Read, R2: Read>(
    observations: R1,
    activations: R2,
    layout: &ArrayLayout,
    radio: &RadioConfig,
) -> Result<MeasurementSet> {
    let mut reader = std::io::BufReader::new(observations);
    let (mut snr_db, mut noise_variance) = (f64::NAN, f64::NAN);
    let mut body = String::new();
    let mut line = String::new();
    while reader.read_line(&mut line)? > 0 {
        if let Some(rest) = line.trim_end().strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("snr_db=") {
                snr_db = parse_f64(v)?;
            } else if let Some(v) = rest.strip_prefix("noise_variance=") {
                noise_variance = parse_f64(v)?;
            }
        } else {
            body.push_str(&line);
        }
        line.clear();
    }

    let m_count = layout.num_subarrays();
    let n = layout.pas_per_subarray;
    let mut slots = vec![Vec::new(); m_count];
    let mut ys = vec![Vec::new(); m_count];
    let mut acts = vec![Vec::new(); m_count];
    let index = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad index {s:?}")))
    };

    let mut obs = csv::Reader::from_reader(body.as_bytes());
    for rec in obs.records() {
        let rec = rec?;
        let m = index(&rec[0])?;
        if m >= m_count {
            return Err(Error::DimensionMismatch(format!("subarray {m} not in layout")));
        }
        slots[m].push(index(&rec[1])?);
        ys[m].push(C64::new(parse_f64(&rec[2])?, parse_f64(&rec[3])?));
    }
    let mut act = csv::Reader::from_reader(activations);
    for rec in act.records() {
        let rec = rec?;
        let m = index(&rec[0])?;
        if m >= m_count {
            return Err(Error::DimensionMismatch(format!("subarray {m} not in layout")));
        }
        let bits: Vec<bool> = rec[2].chars().map(|c| c == '1').collect();
        if bits.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "activation row has {} bits, layout has {n} PAs",
                bits.len()
            )));
        }
        acts[m].push((index(&rec[1])?, bits));
    }

    let mut subarrays = Vec::with_capacity(m_count);
    for (m, sub) in layout.subarrays.iter().enumerate() {
        let activations: Vec<Vec<bool>> = acts[m].iter().map(|(_, b)| b.clone()).collect();
        let act_slots: Vec<usize> = acts[m].iter().map(|(t, _)| *t).collect();
        if act_slots != slots[m] {
            return Err(Error::InvalidInput(format!(
                "observation and activation slots disagree for subarray {m}"
            )));
        }
        let g = waveguide_vector(sub, radio);
        subarrays.push(SubarrayMeasurement {
            slots: slots[m].clone(),
            w: measurement_matrix(&activations, &g),
            activations,
            y: DVector::from_vec(ys[m].clone()),
        });
    }
    Ok(MeasurementSet {
        subarrays,
        noise_variance,
        snr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mw_layout, build_sw_layout, sample_scene, Mode, ServiceRegion};

    fn mw3() -> (ArrayLayout, RadioConfig) {
        let radio = RadioConfig::default();
        let layout = build_mw_layout(ServiceRegion::planar_default(), 3, 32, radio.half_wavelength()).unwrap();
        (layout, radio)
    }

    #[test]
    fn radio_constants() {
        let r = RadioConfig::default();
        assert!((r.wavenumber * r.wavelength - 2.0 * PI).abs() < 1e-12);
        assert!(RadioConfig::new(-1.0, 1.4, 1.0).is_err());
        assert!(RadioConfig::new(28e9, 0.9, 1.0).is_err());
    }

    #[test]
    fn los_magnitude_single_pa() {
        let radio = RadioConfig::default();
        let pa = Point3::new(0.0, 0.0, 2.0);
        let q = Point3::new(3.0, 4.0, 0.0);
        let b = path_response(&[pa], &q, None, &radio).unwrap();
        let r = 29f64.sqrt();
        assert!((b[0].norm() - radio.wavelength / (4.0 * PI * r)).abs() < 1e-15);
    }

    #[test]
    fn equidistant_pas_get_equal_entries() {
        let radio = RadioConfig::default();
        let pas = [Point3::new(0.0, 0.0, 2.0), Point3::new(2.0, 0.0, 2.0)];
        let q = Point3::new(1.0, 5.0, 0.0);
        let b = path_response(&pas, &q, None, &radio).unwrap();
        assert_eq!(b[0], b[1]);
    }

    #[test]
    fn nlos_magnitudes() {
        let (layout, radio) = mw3();
        let scene = sample_scene(&layout.region, 1, 3, Mode::Planar2D);
        let paths = synthesize_paths(&layout, &scene, &radio).unwrap();
        let q = scene.scatterers[0];
        let rsu = ((q.x - scene.user.x).powi(2) + (q.y - scene.user.y).powi(2) + (q.z - scene.user.z).powi(2)).sqrt();
        for (m, sub) in layout.subarrays.iter().enumerate() {
            let p = &paths[m][1];
            assert_eq!(p.kind, PathKind::NLoS);
            for (n, pa) in sub.pa_positions.iter().enumerate() {
                let r = ((pa.x - q.x).powi(2) + (pa.y - q.y).powi(2) + (pa.z - q.z).powi(2)).sqrt();
                let expected = radio.wavelength / ((4.0 * PI).powf(1.5) * r * rsu);
                assert!((p.response[n].norm() - expected).abs() <= 1e-12 * expected);
            }
        }
    }

    #[test]
    fn channel_vector_sums_paths() {
        let (layout, radio) = mw3();
        let scene = sample_scene(&layout.region, 0, 5, Mode::Planar2D);
        let paths = synthesize_paths(&layout, &scene, &radio).unwrap();
        assert_eq!(channel_vector(&paths[0]).unwrap(), paths[0][0].response);
        let doubled = vec![paths[0][0].clone(), paths[0][0].clone()];
        assert_eq!(channel_vector(&doubled).unwrap(), &paths[0][0].response * C64::new(2.0, 0.0));
        assert!(channel_vector(&[]).is_err());
    }

    #[test]
    fn channel_vector_matches_scalar_loop() {
        let (layout, radio) = mw3();
        let scene = sample_scene(&layout.region, 2, 11, Mode::Planar2D);
        let h = scene_channels(&layout, &scene, &radio).unwrap();
        let lambda = radio.wavelength;
        let kappa = 2.0 * PI / lambda;
        for (m, sub) in layout.subarrays.iter().enumerate() {
            for (n, pa) in sub.pa_positions.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for (l, q) in scene.points().iter().enumerate() {
                    let r = ((pa.x - q.x).powi(2) + (pa.y - q.y).powi(2) + (pa.z - q.z).powi(2)).sqrt();
                    let alpha = if l == 0 {
                        C64::new(lambda / (4.0 * PI * r), 0.0)
                    } else {
                        let u = scene.user;
                        let rsu = ((q.x - u.x).powi(2) + (q.y - u.y).powi(2) + (q.z - u.z).powi(2)).sqrt();
                        C64::new(0.0, -kappa * rsu).exp() * (lambda / ((4.0 * PI).powf(1.5) * r * rsu))
                    };
                    acc += alpha * C64::new(0.0, -kappa * r).exp();
                }
                assert!((acc - h[m][n]).norm() <= 1e-12 * acc.norm());
            }
        }
    }

    #[test]
    fn waveguide_vector_phases() {
        let radio = RadioConfig::default();
        let d = radio.half_wavelength();
        let sub = SubarrayGeometry::new(Point3::new(0.0, 0.0, 2.0), 8, d);
        let g = waveguide_vector(&sub, &radio);
        assert_eq!(g[0], C64::new(1.0, 0.0));
        for v in g.iter() {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        // kappa * n_eff * lambda / 2 = 1.4 pi
        let step = (g[1] * g[0].conj()).arg();
        let expected = (1.4 * PI + PI).rem_euclid(2.0 * PI) - PI;
        assert!((step - expected).abs() < 1e-9);
    }

    #[test]
    fn sw_schedule_partitions_slots() {
        let layout = build_sw_layout(ServiceRegion::planar_default(), 2, 8, 0.01).unwrap();
        let s = make_schedule(&layout, 8, 0.5, 1).unwrap();
        for t in 0..4 {
            assert!(!s.is_live(t, 1));
            assert!(s.is_live(t, 0));
        }
        for t in 4..8 {
            assert!(!s.is_live(t, 0));
        }
        let s = make_schedule(
            &build_sw_layout(ServiceRegion::planar_default(), 3, 8, 0.01).unwrap(),
            50,
            0.5,
            9,
        )
        .unwrap();
        for t in 0..50 {
            assert!((0..3).filter(|&m| s.is_live(t, m)).count() <= 1);
        }
        assert_eq!(s.partition.as_ref().unwrap()[2], 32..50);
    }

    #[test]
    fn schedule_rejects_bad_density() {
        let (layout, _) = mw3();
        assert!(make_schedule(&layout, 8, 0.0, 1).is_err());
        assert!(make_schedule(&layout, 8, 1.5, 1).is_err());
        let sw = build_sw_layout(ServiceRegion::planar_default(), 3, 8, 0.01).unwrap();
        assert!(make_schedule(&sw, 2, 0.5, 1).is_err());
    }

    #[test]
    fn mw_activation_rate() {
        let (layout, _) = mw3();
        let s = make_schedule(&layout, 64, 0.5, 17).unwrap();
        for m in 0..3 {
            let on: usize = (0..64).map(|t| s.activations[t][m].iter().filter(|&&a| a).count()).sum();
            let rate = on as f64 / (64.0 * 32.0);
            assert!((0.4..=0.6).contains(&rate), "rate {rate}");
            assert!((0..64).all(|t| s.is_live(t, m)));
        }
    }

    #[test]
    fn noiseless_measurement_is_w_times_h() {
        let (layout, radio) = mw3();
        let scene = sample_scene(&layout.region, 1, 2, Mode::Planar2D);
        let paths = synthesize_paths(&layout, &scene, &radio).unwrap();
        let sched = make_schedule(&layout, 16, 0.5, 4).unwrap();
        let set = measure(&layout, &sched, &paths, &radio, f64::INFINITY, 0).unwrap();
        assert_eq!(set.noise_variance, 0.0);
        for (m, sub) in set.subarrays.iter().enumerate() {
            let h = channel_vector(&paths[m]).unwrap();
            let g = waveguide_vector(&layout.subarrays[m], &radio);
            let wh = &sub.w * &h;
            for (k, &t) in sub.slots.iter().enumerate() {
                assert_eq!(sub.y[k], wh[k]);
                // slot-by-slot scalar evaluation of g^H A h
                let mut acc = C64::new(0.0, 0.0);
                for n in 0..h.len() {
                    if sched.activations[t][m][n] {
                        acc += g[n].conj() * h[n];
                    }
                }
                assert!((acc - wh[k]).norm() <= 1e-10 * acc.norm());
            }
        }
    }

    #[test]
    fn single_pa_scalar_model() {
        let radio = RadioConfig::new(28e9, 1.4, 4.0).unwrap();
        let region = ServiceRegion::planar_default();
        let layout = ArrayLayout::from_references(Structure::Mw, region, &[(3.0, 1.0)], 1, 0.01).unwrap();
        let scene = Scene::los_only(Point3::new(10.0, 10.0, 0.0));
        let paths = synthesize_paths(&layout, &scene, &radio).unwrap();
        let sched = make_schedule(&layout, 1, 1.0, 0).unwrap();
        let set = measure(&layout, &sched, &paths, &radio, f64::INFINITY, 0).unwrap();
        let g = waveguide_vector(&layout.subarrays[0], &radio);
        let expected = g[0].conj() * paths[0][0].response[0] * 2.0;
        assert!((set.subarrays[0].y[0] - expected).norm() < 1e-18);
    }

    #[test]
    fn doubling_power_scales_by_sqrt2() {
        let (layout, _) = mw3();
        let r1 = RadioConfig::new(28e9, 1.4, 1.0).unwrap();
        let r2 = RadioConfig::new(28e9, 1.4, 2.0).unwrap();
        let scene = sample_scene(&layout.region, 1, 8, Mode::Planar2D);
        let paths = synthesize_paths(&layout, &scene, &r1).unwrap();
        let sched = make_schedule(&layout, 8, 0.5, 3).unwrap();
        let a = measure(&layout, &sched, &paths, &r1, f64::INFINITY, 0).unwrap();
        let b = measure(&layout, &sched, &paths, &r2, f64::INFINITY, 0).unwrap();
        for (sa, sb) in a.subarrays.iter().zip(&b.subarrays) {
            for (x, y) in sa.y.iter().zip(sb.y.iter()) {
                assert!((x * 2f64.sqrt() - y).norm() <= 1e-15 * y.norm());
            }
        }
    }

    #[test]
    fn empirical_snr_matches_request() {
        let (layout, radio) = mw3();
        let scene = sample_scene(&layout.region, 0, 21, Mode::Planar2D);
        let paths = synthesize_paths(&layout, &scene, &radio).unwrap();
        let sched = make_schedule(&layout, 1000, 0.5, 5).unwrap();
        let clean = measure(&layout, &sched, &paths, &radio, f64::INFINITY, 0).unwrap();
        let noisy = measure(&layout, &sched, &paths, &radio, 10.0, 99).unwrap();
        let (mut ps, mut pn, mut count) = (0.0, 0.0, 0.0);
        for (c, n) in clean.subarrays.iter().zip(&noisy.subarrays) {
            for (a, b) in c.y.iter().zip(n.y.iter()) {
                ps += a.norm_sqr();
                pn += (b - a).norm_sqr();
                count += 1.0;
            }
        }
        let snr = 10.0 * (ps / pn).log10();
        assert!((snr - 10.0).abs() < 0.5, "snr {snr}");
        assert!((noisy.noise_variance - ps / count / 10.0).abs() < 1e-12 * noisy.noise_variance);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let (layout, radio) = mw3();
        let scene = sample_scene(&layout.region, 1, 6, Mode::Planar2D);
        let paths = synthesize_paths(&layout, &scene, &radio).unwrap();
        let sched = make_schedule(&layout, 12, 0.5, 8).unwrap();
        let set = measure(&layout, &sched, &paths, &radio, 15.0, 2).unwrap();
        let (mut obs, mut act) = (Vec::new(), Vec::new());
        write_measurements(&set, &mut obs, &mut act).unwrap();
        let back = read_measurements(obs.as_slice(), act.as_slice(), &layout, &radio).unwrap();
        assert_eq!(back, set);
    }
}
