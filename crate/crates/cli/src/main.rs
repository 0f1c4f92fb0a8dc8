use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use hops::commands::{self, RunOverrides};
use hops::config::{Config, Preset};
use hops::CliError;
use hops_core::pipeline::Mode;

/// Human and object motion reconstruction from body-worn IMU and camera streams.
///
/// Log level comes from the HOPS_LOG environment variable (default: warn).
#[derive(Parser)]
#[command(name = "hops", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the simulator and the RANSAC sampler (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for the output files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Static,
    Interpolate,
    Full,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Static => Mode::Static,
            ModeArg::Interpolate => Mode::Interpolate,
            ModeArg::Full => Mode::Full,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence and its ground-truth sidecar.
    Simulate {
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        noiseless: bool,
    },
    /// Run the pipeline on a sequence file.
    Run {
        sequence: PathBuf,
        /// Ground truth (default: <sequence>.truth.json when present).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Camera-minus-IMU clock offset in seconds; skips the search.
        #[arg(long, allow_negative_numbers = true)]
        time_offset_override: Option<f64>,
    },
    /// Run one of the comparison modes.
    Baseline {
        sequence: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, allow_negative_numbers = true)]
        time_offset_override: Option<f64>,
    },
    /// Score a solution file against ground truth.
    Eval { solution: PathBuf, truth: PathBuf },
    /// Write CSV series from a run directory.
    ExportPlots { run_dir: PathBuf },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut config = Config::load(cli.config.as_deref())?;
    let out = &cli.out_dir;
    let written = match cli.command {
        Command::Simulate { preset, noiseless } => {
            if let Some(p) = preset {
                config.simulate.preset = p;
                config.simulate.scenario = None;
            }
            config.simulate.noiseless |= noiseless;
            commands::simulate(&config, cli.seed, out)?
        }
        Command::Run {
            sequence,
            truth,
            mode,
            time_offset_override,
        } => {
            let o = RunOverrides {
                mode: mode.map(Mode::from),
                seed: cli.seed,
                time_offset: time_offset_override,
            };
            let (report, written) = commands::run_sequence(&sequence, truth.as_deref(), &config, &o, out)?;
            print_errors(&report);
            written
        }
        Command::Baseline {
            sequence,
            truth,
            mode,
            time_offset_override,
        } => {
            let o = RunOverrides {
                mode: Some(mode.into()),
                seed: cli.seed,
                time_offset: time_offset_override,
            };
            let (report, written) = commands::run_sequence(&sequence, truth.as_deref(), &config, &o, out)?;
            print_errors(&report);
            written
        }
        Command::Eval { solution, truth } => {
            let (report, written) = commands::eval(&solution, &truth, out)?;
            println!(
                "E_obj {:.6} m  E_body {:.6} m",
                report.errors.e_obj, report.errors.e_body
            );
            written
        }
        Command::ExportPlots { run_dir } => commands::export_plots(&run_dir, out)?,
    };
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn print_errors(report: &hops::files::RunReport) {
    for w in &report.stages.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(e) = report.errors {
        println!(
            "{}: E_obj {:.6} m  E_body {:.6} m",
            report.config.mode.name(),
            e.e_obj,
            e.e_body
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HOPS_LOG", "warn")).init();
    let cli = Cli::parse();
    let started = Instant::now();
    let result = execute(cli);
    log::info!("finished in {:.2?}", started.elapsed());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
