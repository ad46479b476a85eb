//! `etalon`: simulate multi-aperture Fabry-Perot spectrometer acquisitions
//! and characterize interferometer responses from them.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 data
//! mismatch (shapes, format versions, incompatible result sets).

mod commands;
mod config;
mod error;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use commands::{CharacterizeArgs, ReportKind};
use config::PipelineFlags;
use etalon_core::estimate::Initializer;
use etalon_core::model::WaveRegime;

#[derive(Parser)]
#[command(name = "etalon", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic monochromatic flat-field datacube from a device
    /// description and ground-truth parameters.
    Simulate {
        /// Run configuration (layout, grid, truth, noise, seed).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for manifest.json, frames.bin, truth.json and
        /// layout.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Noise RNG seed; overrides the config value.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recover per-interferometer response parameters from a datacube.
    Characterize {
        /// Datacube directory or manifest path.
        cube: PathBuf,
        /// Device layout JSON; defaults to layout.json next to the cube.
        #[arg(long)]
        layout: Option<PathBuf>,
        /// Run configuration with an `irca` section.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for results.json and results.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Which pixels to characterize.
        #[arg(long, value_parser = ["central", "all"])]
        pixels: Option<String>,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Tabulate, per wave count, the maximum reflectivity at which the
    /// finite-wave model stays within an RMSE threshold of the Airy
    /// distribution.
    Regimes {
        /// Comma-separated wave counts, e.g. 2,3,5,10.
        #[arg(long, value_delimiter = ',', required = true)]
        waves: Vec<u32>,
        /// RMSE threshold between mean-scaled responses.
        #[arg(long)]
        threshold: f64,
        /// Phase samples per RMSE evaluation.
        #[arg(long, default_value_t = 4096)]
        phase_samples: usize,
        /// Write regimes.csv here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Produce analysis artifacts from characterization results.
    Report {
        /// results.json from a characterize run.
        results: PathBuf,
        /// rmse | opd-steps | maps.
        #[arg(long)]
        kind: ReportKind,
        /// Output directory (default: next to the results file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Wave model: two | finite:W | infinite.
    #[arg(long)]
    regime: Option<WaveRegime>,
    /// Step-2 initializer: ml | es.
    #[arg(long)]
    initializer: Option<Initializer>,
    /// Polynomial degree for gain and reflectivity.
    #[arg(long)]
    degree: Option<usize>,
    /// Neighborhood-mean kernel size (odd).
    #[arg(long)]
    kernel: Option<usize>,
    /// Flat-field percentile.
    #[arg(long)]
    percentile: Option<f64>,
    /// Freeze the gain polynomial shape from step 1; fit only its scale.
    #[arg(long)]
    fixed_gain: bool,
    /// Use the legacy amplitude-to-reflectivity mapping 1 - sqrt(1 - a^2).
    #[arg(long)]
    paper_reflectivity_inversion: bool,
}

impl From<PipelineArgs> for PipelineFlags {
    fn from(a: PipelineArgs) -> Self {
        PipelineFlags {
            regime: a.regime,
            initializer: a.initializer,
            degree: a.degree,
            kernel: a.kernel,
            percentile: a.percentile,
            fixed_gain: a.fixed_gain,
            paper_reflectivity_inversion: a.paper_reflectivity_inversion,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { config, out, seed } => {
            commands::simulate(&config, out.as_deref(), seed)
        }
        Command::Characterize {
            cube,
            layout,
            config,
            out,
            pipeline,
            pixels,
            jobs,
        } => commands::characterize(CharacterizeArgs {
            cube: &cube,
            layout: layout.as_deref(),
            config: config.as_deref(),
            out: out.as_deref(),
            pixels: pixels.as_deref(),
            jobs,
            flags: pipeline.into(),
        }),
        Command::Regimes {
            waves,
            threshold,
            phase_samples,
            out,
        } => commands::regimes(&waves, threshold, phase_samples, out.as_deref()),
        Command::Report { results, kind, out } => {
            commands::report(&results, kind, out.as_deref())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
