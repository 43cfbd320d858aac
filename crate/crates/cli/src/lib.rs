//! Command-line front end: `simulate`, `estimate`, `crlb` and `sweep`.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
//! failures while running.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pass_core::channel::{read_measurements, write_measurements};
use pass_core::crlb::{crlb_heatmap, write_heatmap_csv, CrlbMode};
use pass_core::geometry::Mode;
use pass_core::harness::{estimate, run_sweep, simulate_trial, write_outputs, ExperimentConfig, Scenario};
use pass_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "pass", version, about = "Pinching-antenna localization and channel estimation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample one scene and write its pilot measurements.
    Simulate(SimulateArgs),
    /// Run the estimator on measurements written by `simulate`.
    Estimate(EstimateArgs),
    /// Write a bound heatmap (x, y, trace_crlb, lambda_min) for a layout.
    Crlb(CrlbArgs),
    /// Run a full Monte-Carlo sweep and write rmse.csv, nmse.csv and meta.toml.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Subarray count override.
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "mw")]
    scenario: String,
    /// SNR in dB; the first configured value when omitted. `inf` is noiseless.
    #[arg(long)]
    snr: Option<f64>,
    /// Trial index, selects the scene.
    #[arg(long, default_value_t = 0)]
    trial: usize,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// Directory written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "mw")]
    scenario: String,
}

#[derive(Args, Debug)]
struct CrlbArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "mw")]
    scenario: String,
    /// Grid points per axis.
    #[arg(long, default_value_t = 31)]
    grid: usize,
    /// Bearing-noise standard deviation in radians (assumed, not calibrated).
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    #[arg(long, value_enum, default_value_t = BoundArg::Exact)]
    bound: BoundArg,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Restrict to one scenario.
    #[arg(long)]
    scenario: Option<String>,
    /// Restrict to one SNR in dB.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Also write per-trial records (records.toml).
    #[arg(long)]
    verbose_records: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    #[value(name = "2d")]
    Planar,
    #[value(name = "3d")]
    Full,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum BoundArg {
    Exact,
    Simplified,
}

/// Failure split by exit code.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn config_error(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("configuration error: {e}"))
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(config_error)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.mode = match mode {
            ModeArg::Planar => Mode::Planar2D,
            ModeArg::Full => Mode::Full3D,
        };
        if cfg.mode == Mode::Full3D {
            cfg.scenarios.retain(|s| *s != Scenario::NfBaseline);
        }
    }
    if let Some(m) = common.m {
        cfg.m = m;
    }
    Ok(cfg)
}

fn scenario(name: &str) -> Result<Scenario, Failure> {
    Scenario::parse(name).map_err(config_error)
}

fn create(dir: &Path, name: &str) -> Result<File, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    File::create(&path).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::Usage(format!("cannot open {}: {e}", path.display())))
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.common)?;
    let scen = scenario(&args.scenario)?;
    cfg.scenarios = vec![scen];
    if let Some(snr) = args.snr {
        cfg.snr_db = vec![snr];
    }
    cfg.validate().map_err(config_error)?;
    let sim = simulate_trial(&cfg, scen, 0, args.trial)?;
    let out = &args.common.out;
    write_measurements(
        &sim.measurements,
        create(out, "observations.csv")?,
        create(out, "activations.csv")?,
    )?;
    sim.layout.write_csv(create(out, "layout.csv")?)?;
    sim.scene.write_csv(create(out, "scene.csv")?)?;
    let text = cfg.to_toml().map_err(config_error)?;
    create(out, "config.toml")?
        .write_all(text.as_bytes())
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(())
}

fn estimate_cmd(args: EstimateArgs) -> Result<(), Failure> {
    let mut common = args.common.clone();
    if common.config.is_none() {
        let saved = args.input.join("config.toml");
        if saved.exists() {
            common.config = Some(saved);
        }
    }
    let cfg = load_config(&common)?;
    cfg.validate().map_err(config_error)?;
    let scen = scenario(&args.scenario)?;
    let layout = cfg.layout(scen).map_err(config_error)?;
    let radio = cfg.radio().map_err(config_error)?;
    let meas = read_measurements(
        open(&args.input.join("observations.csv"))?,
        open(&args.input.join("activations.csv"))?,
        &layout,
        &radio,
    )?;
    let out = estimate(&cfg, scen, &layout, &meas, &radio)?;
    let mut w = create(&common.out, "estimate.csv")?;
    let io = |e: std::io::Error| Failure::Runtime(e.to_string());
    writeln!(w, "path,x,y,z,ambiguous,ill_conditioned,non_converged,low_confidence,under_determined").map_err(io)?;
    for p in &out.paths {
        let f = p.flags;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            p.path,
            p.position.x,
            p.position.y,
            p.position.z,
            f.ambiguous,
            f.ill_conditioned,
            f.non_converged,
            f.low_confidence,
            f.under_determined
        )
        .map_err(io)?;
    }
    Ok(())
}

fn crlb_cmd(args: CrlbArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.common)?;
    let scen = scenario(&args.scenario)?;
    if args.grid == 0 {
        return Err(Failure::Usage("--grid must be at least 1".into()));
    }
    if !(args.sigma > 0.0) {
        return Err(Failure::Usage("--sigma must be positive".into()));
    }
    let layout = cfg.layout(scen).map_err(config_error)?;
    let mode = match args.bound {
        BoundArg::Exact => CrlbMode::Exact,
        BoundArg::Simplified => CrlbMode::PaperSimplified,
    };
    let rows = crlb_heatmap(
        &layout.region,
        &layout.references_xy(),
        args.grid,
        args.grid,
        args.sigma * args.sigma,
        mode,
    )?;
    let name = format!("crlb_{}_m{}.csv", scen.name(), layout.num_subarrays());
    write_heatmap_csv(&rows, create(&args.common.out, &name)?)?;
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.common)?;
    if let Some(name) = &args.scenario {
        cfg.scenarios = vec![scenario(name)?];
    }
    if let Some(snr) = args.snr {
        cfg.snr_db = vec![snr];
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    cfg.validate().map_err(config_error)?;
    let result = run_sweep(&cfg)?;
    write_outputs(&result, &cfg, &args.common.out, args.verbose_records)?;
    Ok(())
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Crlb(a) => crlb_cmd(a),
        Command::Sweep(a) => sweep(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}
