use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lidar_pose_calib::pipeline::{self, exit_code, parse_stages, PipelineConfig};
use lidar_pose_calib::Result;

#[derive(Parser)]
#[command(name = "lpcalib", version, about = "LiDAR to pose-sensor extrinsic calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the calibration stages on a recorded drive.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of rough,refine,zfix.
        #[arg(long)]
        stages: Option<String>,
        /// Extrinsic JSON to report errors against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Generate a synthetic drive with ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare result files against a reference extrinsic.
    Evaluate {
        /// Glob of result JSON files.
        #[arg(long)]
        results: String,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Assemble and export the point-cloud map under an extrinsic.
    Map {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        extrinsic: PathBuf,
        #[arg(long)]
        deskew: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { config, stages, reference } => {
            let cfg = PipelineConfig::from_path(&config)?;
            let stages = stages.as_deref().map(parse_stages).transpose()?;
            let out = pipeline::cmd_calibrate(&cfg, stages.as_deref(), reference.as_deref())?;
            let last = out.run.last().expect("at least one stage");
            println!("{}", serde_json::to_string_pretty(&last.to_json()).expect("serializable"));
            if let Some(e) = out.error {
                eprintln!("mae {:?}", e.mae);
            }
            eprintln!("outputs in {}", out.output_dir.display());
        }
        Command::Simulate { config, out } => {
            let cfg = PipelineConfig::from_path(&config)?;
            let n = pipeline::cmd_simulate(&cfg, &out)?;
            eprintln!("{n} frames written to {}", out.display());
        }
        Command::Evaluate { results, reference } => {
            let report = pipeline::cmd_evaluate(&results, &reference)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
        Command::Map { config, extrinsic, deskew } => {
            let cfg = PipelineConfig::from_path(&config)?;
            let (path, n) = pipeline::cmd_map(&cfg, &extrinsic, deskew)?;
            eprintln!("{n} points written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
