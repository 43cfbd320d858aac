use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::RadioConfig;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::geometry::{build_mw_layout, build_single_layout, build_sw_layout, ArrayLayout, Mode, ServiceRegion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `m` collinear subarrays on one waveguide.
    Sw,
    /// `m` subarrays on separate waveguides.
    Mw,
    /// One long array with a polar-domain dictionary.
    NfBaseline,
    /// Two subarrays on one waveguide.
    Sw2Baseline,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Sw => "sw",
            Scenario::Mw => "mw",
            Scenario::NfBaseline => "nf_baseline",
            Scenario::Sw2Baseline => "sw2_baseline",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sw" => Ok(Scenario::Sw),
            "mw" => Ok(Scenario::Mw),
            "nf_baseline" | "nf" => Ok(Scenario::NfBaseline),
            "sw2_baseline" | "sw2" => Ok(Scenario::Sw2Baseline),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }

    /// Stable small integer used in seed derivation.
    pub(crate) fn tag(&self) -> u64 {
        match self {
            Scenario::Sw => 1,
            Scenario::Mw => 2,
            Scenario::NfBaseline => 3,
            Scenario::Sw2Baseline => 4,
        }
    }
}

/// One experiment: shared scene statistics, radio and estimator settings,
/// swept over scenarios and SNRs.
///
/// Pilot budget: every subarray observes `slots_per_subarray` slots. The
/// single-waveguide scenarios therefore use `m` (or 2) times as many slots
/// as the multi-waveguide one. `estimator.mode` and `estimator.num_paths`
/// are overridden by `mode` and `num_scatterers + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenarios: Vec<Scenario>,
    pub mode: Mode,
    pub m: usize,
    pub n: usize,
    /// PA spacing; half a wavelength when absent.
    pub d: Option<f64>,
    pub frequency: f64,
    pub n_eff: f64,
    pub p0: f64,
    /// Mode default (30 x 30 m, planar or volumetric) when absent.
    pub region: Option<ServiceRegion>,
    pub num_scatterers: usize,
    pub slots_per_subarray: usize,
    /// Bernoulli activation probability of each PA per slot.
    pub density: f64,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    /// PA count of the single-array baseline.
    pub nf_pas: usize,
    pub estimator: EstimatorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![Scenario::Mw, Scenario::Sw, Scenario::Sw2Baseline, Scenario::NfBaseline],
            mode: Mode::Planar2D,
            m: 3,
            n: 32,
            d: None,
            frequency: 28e9,
            n_eff: 1.4,
            p0: 1.0,
            region: None,
            num_scatterers: 1,
            slots_per_subarray: 64,
            density: 0.5,
            snr_db: vec![5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0, 22.5, 25.0],
            trials: 500,
            master_seed: 2025,
            nf_pas: 96,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.scenarios.is_empty() {
            return bad("at least one scenario is required".into());
        }
        if self.snr_db.is_empty() {
            return bad("snr_db must list at least one value".into());
        }
        if self.snr_db.iter().any(|s| s.is_nan()) {
            return bad("snr_db values must be numbers".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.slots_per_subarray == 0 {
            return bad("slots_per_subarray must be at least 1".into());
        }
        if self.nf_pas < 2 {
            return bad("nf_pas must be at least 2".into());
        }
        if self.mode == Mode::Full3D && self.scenarios.contains(&Scenario::NfBaseline) {
            return bad("the nf_baseline scenario is planar only".into());
        }
        self.radio()?;
        self.region().validate()?;
        self.estimator().validate()?;
        for s in &self.scenarios {
            self.layout(*s)?;
        }
        Ok(())
    }

    pub fn radio(&self) -> Result<RadioConfig> {
        RadioConfig::new(self.frequency, self.n_eff, self.p0)
    }

    pub fn region(&self) -> ServiceRegion {
        self.region.unwrap_or(match self.mode {
            Mode::Planar2D => ServiceRegion::planar_default(),
            Mode::Full3D => ServiceRegion::volumetric_default(),
        })
    }

    pub fn spacing(&self) -> Result<f64> {
        match self.d {
            Some(d) if d > 0.0 => Ok(d),
            Some(d) => Err(Error::Config(format!("PA spacing must be positive, got {d}"))),
            None => Ok(self.radio()?.half_wavelength()),
        }
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            mode: self.mode,
            num_paths: self.num_scatterers + 1,
            ..self.estimator.clone()
        }
    }

    pub fn layout(&self, scenario: Scenario) -> Result<ArrayLayout> {
        let region = self.region();
        let d = self.spacing()?;
        match scenario {
            Scenario::Sw => build_sw_layout(region, self.m, self.n, d),
            Scenario::Mw => build_mw_layout(region, self.m, self.n, d),
            Scenario::NfBaseline => build_single_layout(region, self.nf_pas, d),
            Scenario::Sw2Baseline => build_sw_layout(region, 2, self.n, d),
        }
    }

    /// Total pilot slots of a scenario.
    pub fn total_slots(&self, scenario: Scenario) -> usize {
        match scenario {
            Scenario::Sw => self.m * self.slots_per_subarray,
            Scenario::Sw2Baseline => 2 * self.slots_per_subarray,
            Scenario::Mw | Scenario::NfBaseline => self.slots_per_subarray,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "scenarios = [\"mw\", \"nf_baseline\"]\nsnr_db = [20.0]\ntrials = 3\n[estimator]\ng_theta = 512\n",
        )
        .unwrap();
        assert_eq!(cfg.scenarios, vec![Scenario::Mw, Scenario::NfBaseline]);
        assert_eq!(cfg.estimator.g_theta, 512);
        assert_eq!(cfg.estimator.max_outer_iters, 3);
        assert_eq!(cfg.m, 3);
        assert_eq!(cfg.estimator().num_paths, 2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "snr_db = []",
            "trials = 0",
            "scenarios = [\"bogus\"]",
            "mode = \"3d\"",
            "unknown_key = 1",
            "m = 9\nscenarios = [\"mw\"]",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
        assert!(ExperimentConfig::from_toml("mode = \"3d\"\nscenarios = [\"mw\", \"sw\"]").is_ok());
    }

    #[test]
    fn single_waveguide_uses_more_slots() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.total_slots(Scenario::Sw), cfg.m * cfg.total_slots(Scenario::Mw));
        assert_eq!(cfg.layout(Scenario::NfBaseline).unwrap().pas_per_subarray, 96);
        assert_eq!(cfg.layout(Scenario::Sw2Baseline).unwrap().num_subarrays(), 2);
    }
}
