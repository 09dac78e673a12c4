use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use airl_mppi::dynamics::VehicleState;
use airl_mppi::harness::{process_activation_file, process_activation_file_to, render_state, run_experiment, ExperimentConfig};
use airl_mppi::Error;

#[derive(Parser)]
#[command(name = "airl-mppi", about = "Image-space MPPI over activation costmaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment batch.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding `experiment.out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// First seed, overriding `experiment.seed_base`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Write a PGM per control step.
        #[arg(long)]
        dump_frames: bool,
        #[arg(long, value_parser = ["0", "1"])]
        blur: Option<String>,
    },
    /// Turn an activation file into a 160x128 costmap PGM.
    Costmap {
        input: PathBuf,
        /// PGM path; defaults to the input with a .pgm extension.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = ["0", "1"], default_value = "0")]
        blur: String,
    },
    /// Render the configured world from one vehicle pose.
    Render {
        #[arg(long)]
        config: PathBuf,
        /// `x,y,yaw` in meters and radians.
        #[arg(long, value_parser = parse_state)]
        state: VehicleState,
        #[arg(long)]
        out: PathBuf,
    },
    Version,
}

fn parse_state(s: &str) -> Result<VehicleState, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [x, y, yaw] if parts.iter().all(|v| v.is_finite()) => Ok(VehicleState::at(x, y, yaw)),
        _ => Err("expected three finite numbers x,y,yaw".into()),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter { .. } | Error::MissingFile(_) => 2,
        Error::Parse { .. } => 3,
        Error::Stage { .. } | Error::Diverged { .. } | Error::Io { .. } => 4,
    }
}

fn run(cli: Cli) -> airl_mppi::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            episodes,
            dump_frames,
            blur,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(out) = out {
                // taken as given, not relative to the config file
                cfg.experiment.out_dir = std::path::absolute(&out).map_err(|source| Error::Io { path: out, source })?;
            }
            if let Some(seed) = seed {
                cfg.experiment.seed_base = seed;
            }
            if let Some(n) = episodes {
                cfg.experiment.episodes = n;
            }
            if let Some(b) = blur {
                cfg.experiment.blur = b == "1";
            }
            cfg.experiment.dump_frames |= dump_frames;
            let record = run_experiment(&cfg)?;
            print!("{}", record.summary_text());
            println!("wrote {}", cfg.out_dir().display());
        }
        Command::Costmap { input, out, blur } => {
            let blur = blur == "1";
            let map = match &out {
                Some(out) => process_activation_file_to(&input, blur, out)?,
                None => process_activation_file(&input, blur)?,
            };
            let (lo, hi) = map.min_max();
            println!("{}x{} {} min {lo} max {hi}", map.width(), map.height(), map.stage().name());
        }
        Command::Render { config, state, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let map = render_state(&cfg, &state, &out)?;
            println!("{} occupied pixels", map.sum());
        }
        Command::Version => println!("airl-mppi {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
