//! Run configuration: command-line flags layered over an optional TOML file.
//!
//! File keys mirror the long flag names (`top-n = [1, 3, 5]`,
//! `kernel-size = 4.0`, ...). A flag given on the command line always wins.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use segrefine_core::{DetectorKind, EdgeDetector, ExplainerParams, FillMode, QuickShiftParams, RefineParams};

use crate::error::{CliError, Result};

pub const DEFAULT_TOP_N: [usize; 3] = [1, 3, 5];
pub const DEFAULT_OUT: &str = "segrefine-out";

/// Flags shared by `explain` and `evaluate`.
#[derive(Args, Clone, Debug, Default)]
pub struct PipelineArgs {
    /// TOML file with defaults for any of these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Image list, one path per line (relative to the manifest)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// builtin, exec:<command> or http:<url>
    #[arg(long)]
    pub predictor: Option<String>,
    /// Largest number of images per predictor call
    #[arg(long)]
    pub batch_limit: Option<usize>,
    /// Perturbation samples per image
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated segment counts, strictly increasing
    #[arg(long, value_delimiter = ',')]
    pub top_n: Option<Vec<usize>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Side length images are resized to
    #[arg(long)]
    pub size: Option<usize>,
    /// Hidden-segment fill: `mean` or a constant intensity such as `0`
    #[arg(long)]
    pub fill: Option<String>,
    #[arg(long)]
    pub kernel_width: Option<f64>,
    #[arg(long)]
    pub ridge_lambda: Option<f64>,
    /// Quick-shift Parzen kernel width
    #[arg(long)]
    pub kernel_size: Option<f64>,
    /// Quick-shift link cutoff
    #[arg(long)]
    pub max_dist: Option<f64>,
    /// Quick-shift colour/space balance
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Pre-blur for the edge detectors
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub canny_low: Option<f64>,
    #[arg(long)]
    pub canny_high: Option<f64>,
    #[arg(long)]
    pub laplace_threshold: Option<f64>,
    /// Fraction of a segment that must lie in the brain mask to keep it
    #[arg(long)]
    pub inside_fraction: Option<f64>,
    /// Refine even when the brain mask is degenerate
    #[arg(long)]
    pub no_fallback: bool,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub image: Option<Vec<PathBuf>>,
    pub manifest: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub predictor: Option<String>,
    pub batch_limit: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub top_n: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub size: Option<usize>,
    pub fill: Option<String>,
    pub kernel_width: Option<f64>,
    pub ridge_lambda: Option<f64>,
    pub kernel_size: Option<f64>,
    pub max_dist: Option<f64>,
    pub ratio: Option<f64>,
    pub sigma: Option<f64>,
    pub canny_low: Option<f64>,
    pub canny_high: Option<f64>,
    pub laplace_threshold: Option<f64>,
    pub inside_fraction: Option<f64>,
    pub no_fallback: Option<bool>,
    pub refine: Option<String>,
    pub detectors: Option<Vec<String>>,
    pub save_mask: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Fully resolved settings for one run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub images: Vec<PathBuf>,
    pub predictor: String,
    pub batch_limit: Option<usize>,
    pub explainer: ExplainerParams,
    pub segmentation: QuickShiftParams,
    /// Detector parameters; `kind` is overridden per detector.
    pub detector: EdgeDetector,
    pub refine: RefineParams,
    /// Detector used by `explain --refine`.
    pub refine_with: Option<DetectorKind>,
    /// Detectors compared by `evaluate`.
    pub detectors: Vec<DetectorKind>,
    pub annotations: Option<PathBuf>,
    pub top_n: Vec<usize>,
    pub out: PathBuf,
    pub size: usize,
    pub save_mask: bool,
}

/// Command-specific inputs that sit next to [`PipelineArgs`].
#[derive(Clone, Debug, Default)]
pub struct Extras {
    pub images: Vec<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub refine: Option<String>,
    pub detectors: Option<Vec<String>>,
    pub save_mask: bool,
}

pub fn parse_top_n(values: &[usize]) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(CliError::Config("top-n list is empty".into()));
    }
    if values.contains(&0) {
        return Err(CliError::Config("top-n entries must be at least 1".into()));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config(format!("top-n list {values:?} must be strictly increasing")));
    }
    Ok(values.to_vec())
}

/// Reads a manifest: one image path per line, `#` comments and blank lines
/// ignored, relative paths resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading manifest {}", path.display()), e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

fn config_err(e: segrefine_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

impl RunConfig {
    pub fn resolve(args: &PipelineArgs, extras: &Extras) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        // Paths in the config file are relative to the file itself.
        let file_base = args.config.as_deref().and_then(Path::parent).unwrap_or(Path::new("")).to_path_buf();
        let from_file = |p: &PathBuf| file_base.join(p);

        let mut images: Vec<PathBuf> = if extras.images.is_empty() {
            file.image.iter().flatten().map(from_file).collect()
        } else {
            extras.images.clone()
        };
        let manifest = args.manifest.clone().or(file.manifest.as_ref().map(from_file));
        if let Some(m) = &manifest {
            images.extend(read_manifest(m)?);
        }

        let seed = args.seed.or(file.seed).unwrap_or(0);
        let fill = match args.fill.as_ref().or(file.fill.as_ref()) {
            Some(s) => s.parse::<FillMode>().map_err(config_err)?,
            None => FillMode::SegmentMean,
        };
        let defaults = ExplainerParams::default();
        let explainer = ExplainerParams {
            num_samples: args.samples.or(file.samples).unwrap_or(defaults.num_samples),
            kernel_width: args.kernel_width.or(file.kernel_width).unwrap_or(defaults.kernel_width),
            ridge_lambda: args.ridge_lambda.or(file.ridge_lambda).unwrap_or(defaults.ridge_lambda),
            fill_mode: fill,
            seed,
        };
        explainer.validate().map_err(config_err)?;

        let qs = QuickShiftParams::default();
        let segmentation = QuickShiftParams {
            kernel_size: args.kernel_size.or(file.kernel_size).unwrap_or(qs.kernel_size),
            max_dist: args.max_dist.or(file.max_dist).unwrap_or(qs.max_dist),
            ratio: args.ratio.or(file.ratio).unwrap_or(qs.ratio),
            seed,
        };
        segmentation.validate().map_err(config_err)?;

        let base = EdgeDetector::default();
        let detector = EdgeDetector {
            kind: base.kind,
            gaussian_sigma: args.sigma.or(file.sigma).unwrap_or(base.gaussian_sigma),
            canny_low: args.canny_low.or(file.canny_low).unwrap_or(base.canny_low),
            canny_high: args.canny_high.or(file.canny_high).unwrap_or(base.canny_high),
            laplace_threshold: args.laplace_threshold.or(file.laplace_threshold).unwrap_or(base.laplace_threshold),
        };
        detector.validate().map_err(config_err)?;

        let refine = RefineParams {
            inside_fraction: args
                .inside_fraction
                .or(file.inside_fraction)
                .unwrap_or(RefineParams::default().inside_fraction),
            fallback_on_degenerate: !(args.no_fallback || file.no_fallback.unwrap_or(false)),
        };
        refine.validate().map_err(config_err)?;

        let refine_with = extras
            .refine
            .as_ref()
            .or(file.refine.as_ref())
            .map(|s| s.parse::<DetectorKind>())
            .transpose()
            .map_err(config_err)?;
        let detectors = match extras.detectors.as_ref().or(file.detectors.as_ref()) {
            Some(list) => list
                .iter()
                .map(|s| s.parse::<DetectorKind>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(config_err)?,
            None => DetectorKind::ALL.to_vec(),
        };
        if detectors.is_empty() {
            return Err(CliError::Config("no detectors selected".into()));
        }

        let top_n = parse_top_n(args.top_n.as_deref().or(file.top_n.as_deref()).unwrap_or(&DEFAULT_TOP_N))?;
        let size = args.size.or(file.size).unwrap_or(segrefine_core::imagecore::DEFAULT_SIDE);
        if size == 0 {
            return Err(CliError::Config("size must be positive".into()));
        }
        let batch_limit = args.batch_limit.or(file.batch_limit);
        if batch_limit == Some(0) {
            return Err(CliError::Config("batch-limit must be positive".into()));
        }

        Ok(Self {
            images,
            predictor: args.predictor.clone().or(file.predictor).unwrap_or_else(|| "builtin".into()),
            batch_limit,
            explainer,
            segmentation,
            detector,
            refine,
            refine_with,
            detectors,
            annotations: extras.annotations.clone().or(file.annotations.as_ref().map(from_file)),
            top_n,
            out: args.out.clone().or(file.out.map(|p| file_base.join(p))).unwrap_or_else(|| DEFAULT_OUT.into()),
            size,
            save_mask: extras.save_mask || file.save_mask.unwrap_or(false),
        })
    }

    pub fn detector_for(&self, kind: DetectorKind) -> EdgeDetector {
        EdgeDetector { kind, ..self.detector }
    }
}
