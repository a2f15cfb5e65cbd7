use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emitterscope::sim::Channel;

mod commands;
mod config;

use commands::{Figure, Status};
use config::{ConfigFile, Overrides, PowerBasis, RunConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "emitterscope",
    version,
    about = "Extinction and fluorescence SNR of single quantum emitters"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON parameter file (a preset plus section overrides).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Preset to start from: fig3_dbatt, fig5_ideal or fig5_realistic.
    #[arg(long, global = true)]
    preset: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "EMITTERSCOPE_OUT")]
    out: Option<PathBuf>,

    /// Simulated repetitions per sweep point and channel.
    #[arg(long, global = true)]
    reps: Option<usize>,

    /// Laser power in cps.
    #[arg(long, global = true)]
    power: Option<f64>,

    /// Powers refer to the detector, after losses (default).
    #[arg(long, global = true, conflicts_with = "incident")]
    detected: bool,

    /// Powers refer to the laser incident on the emitter.
    #[arg(long, global = true)]
    incident: bool,

    /// Restrict to one channel; repeat for both.
    #[arg(long = "channel", global = true)]
    channels: Vec<Channel>,

    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form SNRs, visibility and linewidth at one power.
    Analytic,
    /// Simulate, fit and score one spectrum per channel.
    Simulate,
    /// Fit a spectrum file (CSV or JSON) and report its SNR.
    Fit { spectrum: PathBuf },
    /// Analytic and simulated SNR over a power grid.
    Sweep,
    /// Regenerate the data behind one of the standard comparisons.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
    },
}

fn load(c: &Common) -> anyhow::Result<RunConfig> {
    let file = match &c.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let basis = match (c.detected, c.incident) {
        (_, true) => Some(PowerBasis::Incident),
        (true, _) => Some(PowerBasis::Detected),
        _ => None,
    };
    let overrides = Overrides {
        preset: c.preset.clone(),
        seed: c.seed,
        out: c.out.clone(),
        reps: c.reps,
        power: c.power,
        basis,
        channels: (!c.channels.is_empty()).then(|| c.channels.clone()),
    };
    RunConfig::resolve(file, overrides)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli.common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INVALID_CONFIG);
        }
    };
    if matches!(cli.command, Command::Analytic | Command::Simulate) && cfg.p_las.is_none() {
        eprintln!("error: drive.power_cps: required (set it in the config or pass --power)");
        return ExitCode::from(EXIT_INVALID_CONFIG);
    }
    let verbose = cli.common.verbose;
    let result = match &cli.command {
        Command::Analytic => commands::analytic(&cfg),
        Command::Simulate => commands::simulate(&cfg, verbose),
        Command::Fit { spectrum } => commands::fit(&cfg, spectrum),
        Command::Sweep => commands::sweep(&cfg, verbose),
        Command::Reproduce { figure } => commands::reproduce(&cfg, *figure, verbose),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
