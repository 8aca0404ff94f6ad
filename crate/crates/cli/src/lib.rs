//! Command-line front end: explain images, sweep coverage metrics over
//! detectors and segment counts, and generate synthetic phantoms.

pub mod config;
pub mod error;
pub mod overlay;
pub mod phantom;
pub mod pipeline;

use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::info;

use segrefine_core::predictor::wire::serve_request;
use segrefine_core::predictor::BlobPredictor;

use crate::config::{Extras, PipelineArgs, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "segrefine", version, about = "Superpixel explanations refined by a brain mask")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Explain images and write heatmap JSON plus overlays
    Explain {
        /// Input image (repeatable)
        #[arg(long = "image", num_args = 1..)]
        images: Vec<PathBuf>,
        /// Also refine with this detector: canny, laplace or otsu
        #[arg(long)]
        refine: Option<String>,
        /// Write the brain mask used for refinement as PNG
        #[arg(long)]
        save_mask: bool,
        #[command(flatten)]
        common: PipelineArgs,
    },
    /// Coverage sweep over detectors, top-n values and raw/refined heatmaps
    Evaluate {
        /// VGG Image Annotator JSON with tumor polygons
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Comma-separated detectors
        #[arg(long, value_delimiter = ',')]
        detectors: Option<Vec<String>>,
        #[command(flatten)]
        common: PipelineArgs,
    },
    /// Generate synthetic scans with tumor annotations
    Phantom {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 224)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer predictor requests on stdin with the builtin model
    #[command(hide = true)]
    ServeStdio,
}

fn serve_stdio() -> Result<()> {
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| CliError::io("reading stdin", e))?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(stdout, "{}", serve_request(&line, &BlobPredictor))
            .and_then(|_| stdout.flush())
            .map_err(|e| CliError::io("writing stdout", e))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Explain {
            images,
            refine,
            save_mask,
            common,
        } => {
            let extras = Extras {
                images,
                refine,
                save_mask,
                ..Extras::default()
            };
            let cfg = RunConfig::resolve(&common, &extras)?;
            let outputs = pipeline::cmd_explain(&cfg)?;
            info!("explained {} of {} images into {}", outputs.len(), cfg.images.len(), cfg.out.display());
        }
        Command::Evaluate {
            annotations,
            detectors,
            common,
        } => {
            let extras = Extras {
                annotations,
                detectors,
                ..Extras::default()
            };
            let cfg = RunConfig::resolve(&common, &extras)?;
            let report = pipeline::cmd_evaluate(&cfg)?;
            info!(
                "{} coverage rows for {} images written to {}",
                report.rows.len(),
                cfg.images.len() - report.failed_images.len(),
                cfg.out.join("coverage.csv").display()
            );
        }
        Command::Phantom { count, size, seed, out } => {
            let set = phantom::write_phantom_set(count, size, seed, &out)?;
            info!("wrote {} phantoms, manifest {}", set.images.len(), set.manifest.display());
        }
        Command::ServeStdio => serve_stdio()?,
    }
    Ok(())
}
