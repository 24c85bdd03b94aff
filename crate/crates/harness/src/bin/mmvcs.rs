use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use thz_core::channel::ChannelRealization;
use thz_core::estimators::{track_protocol, EstimatorKind, FrameInput, PriorSource};
use thz_core::training::Observation;
use thz_harness::config::{EstimationSection, EstimatorSpec, ExperimentSpec, Scale, SystemSection};
use thz_harness::metrics::{nmse, spectral_efficiency};
use thz_harness::report;
use thz_harness::runner::{run_experiment, Domain, PointSetup};

#[derive(Parser)]
#[command(name = "mmvcs", version, about = "Wideband THz MIMO channel estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
#[group(multiple = false)]
struct ScaleArgs {
    /// Replace [system] with the small desk preset.
    #[arg(long)]
    desk_scale: bool,
    /// Replace [system] with the full-size preset.
    #[arg(long)]
    paper_scale: bool,
}

impl ScaleArgs {
    fn scale(self) -> Option<Scale> {
        match (self.desk_scale, self.paper_scale) {
            (true, _) => Some(Scale::Desk),
            (_, true) => Some(Scale::Paper),
            _ => None,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw channels and noisy pilot observations into a JSON file.
    Simulate {
        /// Experiment TOML whose [system] is used (default: desk preset).
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        scale: ScaleArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long, default_value_t = 1)]
        frames: usize,
        #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
        snr_db: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run one estimator over a simulated file and print per-frame metrics.
    Estimate {
        input: PathBuf,
        #[arg(long, default_value = "ts")]
        estimator: EstimatorKind,
        #[arg(long, default_value = "tracked")]
        prior: String,
        /// Experiment TOML whose [estimation] is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the estimates as JSON.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run a Monte-Carlo sweep.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        scale: ScaleArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Rebuild summary.csv and plots from a records.csv.
    Report {
        records: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Serialize, Deserialize)]
struct SimFile {
    system: SystemSection,
    seed: u64,
    trial: usize,
    snr_db: f64,
    frames: Vec<SimFileFrame>,
}

#[derive(Serialize, Deserialize)]
struct SimFileFrame {
    truth: ChannelRealization,
    observation: Observation,
}

type Res<T> = Result<T, String>;

fn load_spec(path: &Path) -> Res<ExperimentSpec> {
    ExperimentSpec::load(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn simulate(
    config: Option<PathBuf>,
    scale: Option<Scale>,
    seed: u64,
    trial: usize,
    frames: usize,
    snr_db: f64,
    out: &Path,
) -> Res<()> {
    if frames == 0 {
        return Err("--frames must be at least 1".into());
    }
    let system = match (scale, config) {
        (Some(s), _) => SystemSection::preset(s),
        (None, Some(p)) => load_spec(&p)?.system,
        (None, None) => SystemSection::preset(Scale::Desk),
    };
    let sys = system.system();
    sys.validate().map_err(|e| e.to_string())?;
    system.training().validate(&sys).map_err(|e| e.to_string())?;
    let setup = PointSetup { sys, training: system.training(), grid: system.grid(), snr_db, section: system.clone() };
    let sim = setup.simulate(seed, Domain::Sweep, trial, frames).map_err(|e| e.to_string())?;
    let file = SimFile {
        system,
        seed,
        trial,
        snr_db,
        frames: sim.into_iter().map(|f| SimFileFrame { truth: f.truth, observation: f.input.observation }).collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| e.to_string())?;
    std::fs::write(out, text).map_err(|e| format!("{}: {e}", out.display()))?;
    println!("wrote {} frame(s) to {}", file.frames.len(), out.display());
    Ok(())
}

fn estimate(input: &Path, kind: EstimatorKind, prior: &str, config: Option<PathBuf>, out: Option<PathBuf>) -> Res<()> {
    let text = std::fs::read_to_string(input).map_err(|e| format!("{}: {e}", input.display()))?;
    let file: SimFile = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", input.display()))?;
    let prior: PriorSource = serde_json::from_value(serde_json::Value::String(prior.into()))
        .map_err(|_| format!("unknown prior '{prior}' (tracked, true-previous, empty)"))?;
    let shared = match config {
        Some(p) => load_spec(&p)?.estimation,
        None => EstimationSection::default(),
    };
    let sys = file.system.system();
    let spec = EstimatorSpec { prior, ..EstimatorSpec::new(kind) };
    let params = spec.params(&sys, &shared);
    let frames: Vec<FrameInput> = file
        .frames
        .iter()
        .map(|f| FrameInput { observation: f.observation.clone(), truth: Some(f.truth.clone()) })
        .collect();
    let outcome = track_protocol(&sys, file.system.grid(), &frames, kind, prior, &params).map_err(|e| e.to_string())?;
    println!("frame,nmse,se,residual_ratio,support");
    for (f, (res, frame)) in outcome.results.iter().zip(&file.frames).enumerate() {
        let truth: Vec<_> = (1..=sys.subcarriers)
            .map(|k| thz_core::channel::channel_matrix(&frame.truth, k, &sys))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let est = res.channels(&sys);
        let pilots = frame.observation.subcarriers();
        let pick = |all: &[thz_core::CMatrix]| pilots.iter().map(|&k| all[k - 1].clone()).collect::<Vec<_>>();
        let e = nmse(&pick(&truth), &pick(&est)).map_err(|e| e.to_string())?;
        let setup = thz_harness::metrics::RateSetup {
            transmit_power: 1.0,
            noise_variance: frame.observation.noise_variance,
            streams: file.system.data_streams,
            bandwidth_hz: sys.bandwidth_hz,
            training_fraction: file.system.training_fraction(),
        };
        let se = spectral_efficiency(&truth, &est, &pilots, &setup).map_err(|e| e.to_string())?;
        println!("{f},{e:.6e},{se:.6},{:.3e},{:?}", res.diagnostics.residual_ratio, res.support);
    }
    for r in &outcome.resets {
        eprintln!("reset at frame {} (residual ratio {:.3e})", r.frame, r.residual_ratio);
    }
    if let Some(out) = out {
        let estimates: Vec<_> = outcome.results.iter().map(|r| (&r.support, &r.estimate, &r.diagnostics)).collect();
        let text = serde_json::to_string(&estimates).map_err(|e| e.to_string())?;
        std::fs::write(&out, text).map_err(|e| format!("{}: {e}", out.display()))?;
    }
    Ok(())
}

fn sweep(config: &Path, scale: Option<Scale>, seed: Option<u64>, threads: usize, out_dir: Option<PathBuf>) -> Res<()> {
    let mut spec = load_spec(config)?;
    if let Some(s) = scale {
        spec = spec.with_scale(s);
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| e.to_string())?;
    let dir = out_dir.unwrap_or_else(|| PathBuf::from(&spec.output.dir));
    let out = run_experiment(&spec, threads).map_err(|e| e.to_string())?;
    let rows = report::write_all(&dir, &spec, &out).map_err(|e| e.to_string())?;
    println!("{:<22} {:>10} {:>6} {:>12} {:>12}", "estimator", spec.sweep.axis.name(), "n", "NMSE", "SE");
    for r in &rows {
        println!("{:<22} {:>10} {:>6} {:>12.4e} {:>12.4}", r.estimator, r.axis_value, r.count, r.nmse_mean, r.se_mean);
    }
    if !out.failures.is_empty() {
        eprintln!("{} trial(s) aborted; see the log", out.failures.len());
    }
    println!("results in {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, scale, seed, trial, frames, snr_db, out } => {
            simulate(config, scale.scale(), seed, trial, frames, snr_db, &out)
        }
        Command::Estimate { input, estimator, prior, config, out } => estimate(&input, estimator, &prior, config, out),
        Command::Sweep { config, scale, seed, threads, out_dir } => sweep(&config, scale.scale(), seed, threads, out_dir),
        Command::Report { records, out_dir } => {
            let dir = out_dir.unwrap_or_else(|| records.parent().map(Path::to_path_buf).unwrap_or_default());
            report::report(&records, &dir).map(|rows| println!("{} summary rows in {}", rows.len(), dir.display()))
                .map_err(|e| e.to_string())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
