use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scenario};
use super::metrics::{median, nmse, nmse_db, rmse};
use crate::channel::{make_schedule, measure, scene_channels, synthesize_paths, MeasurementSet, RadioConfig};
use crate::error::{Error, Result};
use crate::estimator::{run_omp_gcl, run_polar_baseline, EstimateFlags, OmpGclOutput};
use crate::geometry::{sample_scene, ArrayLayout, Point3, Scene};
use crate::C64;

/// Written as the first line of every CSV output.
pub const CSV_VERSION_HEADER: &str = "# pass-sweep csv v1";

const STREAM_SCENE: u64 = 0x5c3e;
const STREAM_SCHEDULE: u64 = 0x5ced;
const STREAM_NOISE: u64 = 0x0153;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed splitting rule: fold each word into a splitmix64 chain started at
/// the master seed.
///
/// Scenes use `(scene stream, trial)` only, so every scenario and SNR sees
/// the same scene for a given trial. Schedules and noise use
/// `(stream, scenario, snr index, trial)`.
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    words.iter().fold(splitmix(master), |acc, &w| splitmix(acc ^ splitmix(w)))
}

pub fn scene_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, &[STREAM_SCENE, trial as u64])
}

/// Everything one trial feeds to the estimator.
#[derive(Debug, Clone)]
pub struct SimulatedTrial {
    pub scenario: Scenario,
    pub snr_db: f64,
    pub trial: usize,
    pub layout: ArrayLayout,
    pub radio: RadioConfig,
    pub scene: Scene,
    pub measurements: MeasurementSet,
    /// True channel of every subarray.
    pub channels: Vec<DVector<C64>>,
}

/// Samples the scene and pilots of one (scenario, SNR, trial) cell.
pub fn simulate_trial(
    config: &ExperimentConfig,
    scenario: Scenario,
    snr_index: usize,
    trial: usize,
) -> Result<SimulatedTrial> {
    let snr_db = *config
        .snr_db
        .get(snr_index)
        .ok_or_else(|| Error::InvalidInput(format!("SNR index {snr_index} out of range")))?;
    let radio = config.radio()?;
    let layout = config.layout(scenario)?;
    let master = config.master_seed;
    let scene = sample_scene(&layout.region, config.num_scatterers, scene_seed(master, trial), config.mode);
    let cell = [scenario.tag(), snr_index as u64, trial as u64];
    let schedule = make_schedule(
        &layout,
        config.total_slots(scenario),
        config.density,
        derive_seed(master, &[&[STREAM_SCHEDULE][..], &cell].concat()),
    )?;
    let paths = synthesize_paths(&layout, &scene, &radio)?;
    let measurements = measure(
        &layout,
        &schedule,
        &paths,
        &radio,
        snr_db,
        derive_seed(master, &[&[STREAM_NOISE][..], &cell].concat()),
    )?;
    let channels = scene_channels(&layout, &scene, &radio)?;
    Ok(SimulatedTrial {
        scenario,
        snr_db,
        trial,
        layout,
        radio,
        scene,
        measurements,
        channels,
    })
}

/// Runs the scenario's estimator on stored measurements.
pub fn estimate(
    config: &ExperimentConfig,
    scenario: Scenario,
    layout: &ArrayLayout,
    measurements: &MeasurementSet,
    radio: &RadioConfig,
) -> Result<OmpGclOutput> {
    let est = config.estimator();
    match scenario {
        Scenario::NfBaseline => run_polar_baseline(measurements, layout, radio, &est, None),
        _ => run_omp_gcl(measurements, layout, radio, &est),
    }
}

fn concat(parts: &[DVector<C64>]) -> DVector<C64> {
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scenario: Scenario,
    pub snr_db: f64,
    pub trial: usize,
    pub scene_seed: u64,
    pub scene: Scene,
    pub estimates: Vec<Point3>,
    /// Error per path for every path present in both truth and estimate.
    pub position_errors: Vec<f64>,
    /// Linear NMSE of the concatenated subarray channels.
    pub nmse: Option<f64>,
    pub flags: EstimateFlags,
    pub failure: Option<String>,
}

impl TrialRecord {
    pub fn user_error(&self) -> Option<f64> {
        self.position_errors.first().copied()
    }

    pub fn flagged(&self) -> bool {
        self.failure.is_some() || self.flags.any()
    }
}

pub fn run_trial(config: &ExperimentConfig, scenario: Scenario, snr_index: usize, trial: usize) -> TrialRecord {
    let seed = scene_seed(config.master_seed, trial);
    let mut record = TrialRecord {
        scenario,
        snr_db: config.snr_db.get(snr_index).copied().unwrap_or(f64::NAN),
        trial,
        scene_seed: seed,
        scene: Scene::los_only(Point3::new(0.0, 0.0, 0.0)),
        estimates: Vec::new(),
        position_errors: Vec::new(),
        nmse: None,
        flags: EstimateFlags::default(),
        failure: None,
    };
    let outcome = simulate_trial(config, scenario, snr_index, trial).and_then(|sim| {
        record.scene = sim.scene.clone();
        let out = estimate(config, scenario, &sim.layout, &sim.measurements, &sim.radio)?;
        let truth = sim.scene.points();
        let estimates = out.positions();
        let errors = truth.iter().zip(&estimates).map(|(t, e)| t.distance(e)).collect();
        let value = nmse(&concat(&sim.channels), &concat(&out.channels))?;
        Ok((estimates, errors, value, out.flags()))
    });
    match outcome {
        Ok((estimates, errors, value, flags)) => {
            record.estimates = estimates;
            record.position_errors = errors;
            record.nmse = Some(value);
            record.flags = flags;
        }
        Err(e) => record.failure = Some(e.to_string()),
    }
    record
}

/// Aggregates of one (scenario, SNR) cell over its successful trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub scenario: Scenario,
    pub snr_db: f64,
    pub rmse_m: f64,
    pub median_m: f64,
    /// Mean linear NMSE.
    pub nmse: f64,
    pub nmse_db: f64,
    /// Fraction of trials that failed or raised any flag.
    pub flag_rate: f64,
    pub total_slots: usize,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Scenario-major, then SNR, then trial.
    pub records: Vec<TrialRecord>,
}

impl SweepResult {
    pub fn records_for(&self, scenario: Scenario, snr_db: f64) -> impl Iterator<Item = &TrialRecord> {
        self.records.iter().filter(move |r| r.scenario == scenario && r.snr_db == snr_db)
    }

    pub fn point(&self, scenario: Scenario, snr_db: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.scenario == scenario && p.snr_db == snr_db)
    }
}

fn aggregate(config: &ExperimentConfig, scenario: Scenario, snr_db: f64, records: &[TrialRecord]) -> SweepPoint {
    let errors: Vec<f64> = records.iter().filter_map(TrialRecord::user_error).collect();
    let nmses: Vec<f64> = records.iter().filter_map(|r| r.nmse).collect();
    let mean_nmse = if nmses.is_empty() {
        f64::NAN
    } else {
        nmses.iter().sum::<f64>() / nmses.len() as f64
    };
    SweepPoint {
        scenario,
        snr_db,
        rmse_m: rmse(&errors).unwrap_or(f64::NAN),
        median_m: median(&errors).unwrap_or(f64::NAN),
        nmse: mean_nmse,
        nmse_db: nmse_db(mean_nmse),
        flag_rate: records.iter().filter(|r| r.flagged()).count() as f64 / records.len() as f64,
        total_slots: config.total_slots(scenario),
        trials: records.len(),
        failures: records.iter().filter(|r| r.failure.is_some()).count(),
    }
}

/// Every scenario at every SNR over `config.trials` trials.
///
/// Trials run in parallel; records are collected in job order so the
/// result does not depend on scheduling. Fails when more than half of all
/// trials error.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let jobs: Vec<(Scenario, usize, usize)> = config
        .scenarios
        .iter()
        .flat_map(|&s| (0..config.snr_db.len()).flat_map(move |k| (0..config.trials).map(move |t| (s, k, t))))
        .collect();
    let records: Vec<TrialRecord> = jobs.par_iter().map(|&(s, k, t)| run_trial(config, s, k, t)).collect();
    let failures = records.iter().filter(|r| r.failure.is_some()).count();
    if 2 * failures > records.len() {
        let example = records.iter().find_map(|r| r.failure.clone()).unwrap_or_default();
        return Err(Error::SweepFailed(format!(
            "{failures} of {} trials failed, e.g. {example}",
            records.len()
        )));
    }
    let points = records
        .chunks(config.trials)
        .map(|chunk| aggregate(config, chunk[0].scenario, chunk[0].snr_db, chunk))
        .collect();
    Ok(SweepResult { points, records })
}

fn csv_writer<W: Write>(mut writer: W) -> Result<csv::Writer<W>> {
    writeln!(writer, "{CSV_VERSION_HEADER}")?;
    Ok(csv::Writer::from_writer(writer))
}

pub fn write_rmse_csv<W: Write>(result: &SweepResult, writer: W) -> Result<()> {
    let mut w = csv_writer(writer)?;
    w.write_record(["scenario", "snr_db", "rmse_m", "median_m", "flag_rate", "total_slots"])?;
    for p in &result.points {
        w.write_record([
            p.scenario.name().to_string(),
            p.snr_db.to_string(),
            p.rmse_m.to_string(),
            p.median_m.to_string(),
            p.flag_rate.to_string(),
            p.total_slots.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_nmse_csv<W: Write>(result: &SweepResult, writer: W) -> Result<()> {
    let mut w = csv_writer(writer)?;
    w.write_record(["scenario", "snr_db", "nmse_db"])?;
    for p in &result.points {
        w.write_record([p.scenario.name().to_string(), p.snr_db.to_string(), p.nmse_db.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Meta<'a> {
    format: &'a str,
    crate_version: &'a str,
    trials_run: usize,
    trial_failures: usize,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct Records<'a> {
    record: &'a [TrialRecord],
}

/// Writes `rmse.csv`, `nmse.csv`, `meta.toml` and, when asked,
/// `records.toml` into `dir`.
pub fn write_outputs(result: &SweepResult, config: &ExperimentConfig, dir: &Path, verbose_records: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rmse_csv(result, std::fs::File::create(dir.join("rmse.csv"))?)?;
    write_nmse_csv(result, std::fs::File::create(dir.join("nmse.csv"))?)?;
    let meta = Meta {
        format: CSV_VERSION_HEADER.trim_start_matches("# "),
        crate_version: env!("CARGO_PKG_VERSION"),
        trials_run: result.records.len(),
        trial_failures: result.records.iter().filter(|r| r.failure.is_some()).count(),
        config,
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("meta.toml"), text)?;
    if verbose_records {
        let text = toml::to_string(&Records { record: &result.records }).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join("records.toml"), text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::EstimatorConfig;

    fn small(scenarios: Vec<Scenario>) -> ExperimentConfig {
        ExperimentConfig {
            scenarios,
            snr_db: vec![20.0, 25.0],
            trials: 3,
            estimator: EstimatorConfig {
                g_theta: 256,
                polar_rings: 6,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn seeds_split_by_every_word() {
        let a = derive_seed(7, &[1, 2, 3]);
        assert_ne!(a, derive_seed(7, &[1, 2, 4]));
        assert_ne!(a, derive_seed(8, &[1, 2, 3]));
        assert_ne!(a, derive_seed(7, &[2, 1, 3]));
        assert_eq!(a, derive_seed(7, &[1, 2, 3]));
    }

    #[test]
    fn noiseless_single_trial_localizes() {
        let cfg = ExperimentConfig {
            scenarios: vec![Scenario::Mw],
            snr_db: vec![f64::INFINITY],
            trials: 1,
            num_scatterers: 0,
            ..Default::default()
        };
        let result = run_sweep(&cfg).unwrap();
        assert_eq!(result.records.len(), 1);
        // sampled scenes are off-grid, so the centimetre class is the bar here
        assert!(result.records[0].user_error().unwrap() < 5e-2, "{:?}", result.records[0]);
    }

    #[test]
    fn paired_scenarios_share_scenes() {
        let result = run_sweep(&small(vec![Scenario::Mw, Scenario::NfBaseline])).unwrap();
        for t in 0..3 {
            let mw = result.records_for(Scenario::Mw, 20.0).nth(t).unwrap();
            let nf = result.records_for(Scenario::NfBaseline, 20.0).nth(t).unwrap();
            let mw25 = result.records_for(Scenario::Mw, 25.0).nth(t).unwrap();
            assert_eq!(mw.scene, nf.scene);
            assert_eq!(mw.scene, mw25.scene);
        }
        assert_eq!(result.points.len(), 4);
    }

    #[test]
    fn outputs_are_deterministic() {
        let cfg = small(vec![Scenario::Mw, Scenario::Sw]);
        let dir = tempfile::tempdir().unwrap();
        let mut texts = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(run.to_string());
            write_outputs(&run_sweep(&cfg).unwrap(), &cfg, &out, true).unwrap();
            texts.push((
                std::fs::read(out.join("rmse.csv")).unwrap(),
                std::fs::read(out.join("nmse.csv")).unwrap(),
            ));
            assert!(out.join("meta.toml").exists() && out.join("records.toml").exists());
        }
        assert_eq!(texts[0], texts[1]);
        let rmse = String::from_utf8(texts[0].0.clone()).unwrap();
        let mut lines = rmse.lines();
        assert_eq!(lines.next(), Some(CSV_VERSION_HEADER));
        assert_eq!(lines.next(), Some("scenario,snr_db,rmse_m,median_m,flag_rate,total_slots"));
        assert_eq!(rmse.lines().count(), 2 + 4);
    }

    #[test]
    fn slot_accounting_is_reported() {
        let result = run_sweep(&small(vec![Scenario::Mw, Scenario::Sw])).unwrap();
        let mw = result.point(Scenario::Mw, 20.0).unwrap().total_slots;
        let sw = result.point(Scenario::Sw, 20.0).unwrap().total_slots;
        assert_eq!(sw, 3 * mw);
    }
}
