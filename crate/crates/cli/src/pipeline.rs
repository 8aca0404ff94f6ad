//! The `explain` and `evaluate` commands.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use segrefine_core::maskgen::brain_mask;
use segrefine_core::metrics::{brain_mask_segment_coverage, mann_whitney_u, tumor_segment_coverage, ViaAnnotations};
use segrefine_core::{
    explain, explanation_pixels, load_gray, quickshift_segment, refine_heatmap, resize_normalize, BrainMaskResult,
    CoverageReport, DetectorKind, GrayImage, Heatmap, PredictorHandle, SegmentMap,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::overlay::render_overlay;

pub const CSV_HEADER: [&str; 6] = ["image", "detector", "refined", "n", "tumor_coverage", "brain_coverage"];
/// `image` column of the per-configuration mean rows.
pub const SUMMARY_IMAGE: &str = "mean";

pub fn build_predictor(cfg: &RunConfig) -> Result<PredictorHandle> {
    let handle = PredictorHandle::from_spec(&cfg.predictor)?;
    Ok(match cfg.batch_limit {
        Some(limit) => handle.with_batch_limit(limit)?,
        None => handle,
    })
}

/// An image prepared for explanation.
pub struct Prepared {
    /// Size before resizing, for scaling annotations.
    pub original_dims: (usize, usize),
    pub image: GrayImage,
    pub segments: SegmentMap,
    pub heatmap: Heatmap,
}

pub fn prepare(path: &Path, cfg: &RunConfig, predictor: &PredictorHandle) -> Result<Prepared> {
    let original = load_gray(path)?;
    let image = resize_normalize(&original, cfg.size)?;
    let segments = quickshift_segment(&image, &cfg.segmentation)?;
    let heatmap = explain(&image, &segments, predictor, &cfg.explainer)?;
    info!(
        "{}: {} segments, intercept {:.4}",
        path.display(),
        segments.num_segments(),
        heatmap.intercept
    );
    Ok(Prepared {
        original_dims: original.dims(),
        image,
        segments,
        heatmap,
    })
}

fn file_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn save_rgb(img: &image::RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| CliError::io(format!("writing {}", path.display()), std::io::Error::other(e)))
}

/// Artifacts written for one image by `explain`.
#[derive(Clone, Debug, Default)]
pub struct ExplainOutput {
    pub heatmaps: Vec<PathBuf>,
    pub overlays: Vec<PathBuf>,
    pub masks: Vec<PathBuf>,
}

fn explain_one(path: &Path, cfg: &RunConfig, predictor: &PredictorHandle) -> Result<ExplainOutput> {
    let prep = prepare(path, cfg, predictor)?;
    let stem = file_stem(path);
    let mut out = ExplainOutput::default();

    let raw_json = cfg.out.join(format!("{stem}.heatmap.json"));
    write_text(&raw_json, &prep.heatmap.to_json())?;
    out.heatmaps.push(raw_json);
    for n in &cfg.top_n {
        let p = cfg.out.join(format!("{stem}.top{n}.png"));
        save_rgb(&render_overlay(&prep.image, &prep.heatmap, &prep.segments, *n, None)?, &p)?;
        out.overlays.push(p);
    }

    if let Some(kind) = cfg.refine_with {
        let bm = brain_mask(&prep.image, &cfg.detector_for(kind));
        let refined = refine_heatmap(&prep.heatmap, &prep.segments, &bm, &cfg.refine)?;
        for w in &refined.warnings {
            warn!("{}: {w}", path.display());
        }
        let json = cfg.out.join(format!("{stem}.refined-{kind}.heatmap.json"));
        write_text(&json, &refined.to_json())?;
        out.heatmaps.push(json);
        for n in &cfg.top_n {
            let p = cfg.out.join(format!("{stem}.refined-{kind}.top{n}.png"));
            save_rgb(&render_overlay(&prep.image, &refined.heatmap, &prep.segments, *n, Some(&bm))?, &p)?;
            out.overlays.push(p);
        }
        if cfg.save_mask {
            let p = cfg.out.join(format!("{stem}.mask-{kind}.png"));
            bm.mask.save_png(&p)?;
            out.masks.push(p);
        }
    }
    Ok(out)
}

/// Explains every configured image. Failures are logged per image; the
/// command fails only when no image succeeds.
pub fn cmd_explain(cfg: &RunConfig) -> Result<Vec<ExplainOutput>> {
    if cfg.images.is_empty() {
        return Err(CliError::Config("no input images (use --image or --manifest)".into()));
    }
    create_out(&cfg.out)?;
    let predictor = build_predictor(cfg)?;
    let mut done = Vec::new();
    let mut last_err = None;
    for path in &cfg.images {
        match explain_one(path, cfg, &predictor) {
            Ok(o) => done.push(o),
            Err(e) => {
                warn!("{}: {e}", path.display());
                last_err = Some(e);
            }
        }
    }
    match (done.is_empty(), last_err) {
        (true, Some(e)) => Err(CliError::AllImagesFailed(e.to_string())),
        _ => Ok(done),
    }
}

/// One CSV data row.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageRow {
    pub image: String,
    pub report: CoverageReport,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn image_label(path: &Path) -> String {
    path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn evaluate_one(
    path: &Path,
    cfg: &RunConfig,
    predictor: &PredictorHandle,
    annotations: Option<&ViaAnnotations>,
) -> Result<Vec<CoverageRow>> {
    let prep = prepare(path, cfg, predictor)?;
    let label = image_label(path);
    let (ow, oh) = prep.original_dims;
    let (w, h) = prep.image.dims();
    let tumor = annotations.and_then(|a| a.tumor_mask(&label, w, h, w as f64 / ow as f64, h as f64 / oh as f64));
    let tumor = match tumor {
        Some(m) if m.is_empty() => {
            warn!("{label}: annotation has zero area, tumor coverage skipped");
            None
        }
        other => other,
    };

    let mut rows = Vec::new();
    for kind in &cfg.detectors {
        let bm: BrainMaskResult = brain_mask(&prep.image, &cfg.detector_for(*kind));
        let refined = refine_heatmap(&prep.heatmap, &prep.segments, &bm, &cfg.refine)?;
        for w in &refined.warnings {
            warn!("{label}: {w}");
        }
        for (is_refined, hm) in [(false, &prep.heatmap), (true, &refined.heatmap)] {
            for n in &cfg.top_n {
                let expl = explanation_pixels(hm, &prep.segments, *n)?;
                let tumor_coverage = tumor.as_ref().map(|t| tumor_segment_coverage(&expl, t)).transpose()?;
                let brain_coverage = brain_mask_segment_coverage(&expl, &bm.mask).ok();
                rows.push(CoverageRow {
                    image: label.clone(),
                    report: CoverageReport {
                        tumor_coverage,
                        brain_coverage,
                        n_segments_used: *n,
                        detector: *kind,
                        refined: is_refined,
                    },
                });
            }
        }
    }
    Ok(rows)
}

/// Mean coverage of one (detector, refined, n) configuration over images.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub detector: DetectorKind,
    pub refined: bool,
    pub n: usize,
    pub mean_tumor_coverage: Option<f64>,
    pub mean_brain_coverage: Option<f64>,
    pub images_with_tumor: usize,
}

/// Raw versus refined tumor coverage for one detector and n.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementTest {
    pub detector: DetectorKind,
    pub n: usize,
    pub u: f64,
    pub p_two_sided: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EvaluateReport {
    #[serde(skip)]
    pub rows: Vec<CoverageRow>,
    pub summaries: Vec<ConfigSummary>,
    pub refinement_tests: Vec<RefinementTest>,
    pub failed_images: Vec<String>,
}

impl EvaluateReport {
    pub fn summary(&self, detector: DetectorKind, refined: bool, n: usize) -> Option<&ConfigSummary> {
        self.summaries
            .iter()
            .find(|s| s.detector == detector && s.refined == refined && s.n == n)
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn summarize(rows: &[CoverageRow], cfg: &RunConfig) -> (Vec<ConfigSummary>, Vec<RefinementTest>) {
    let select = |kind: DetectorKind, refined: bool, n: usize| {
        rows.iter()
            .map(|r| &r.report)
            .filter(move |r| r.detector == kind && r.refined == refined && r.n_segments_used == n)
    };
    let mut summaries = Vec::new();
    let mut tests = Vec::new();
    for kind in &cfg.detectors {
        for refined in [false, true] {
            for n in &cfg.top_n {
                let tumor: Vec<f64> = select(*kind, refined, *n).filter_map(|r| r.tumor_coverage).collect();
                let brain: Vec<f64> = select(*kind, refined, *n).filter_map(|r| r.brain_coverage).collect();
                summaries.push(ConfigSummary {
                    detector: *kind,
                    refined,
                    n: *n,
                    mean_tumor_coverage: mean(&tumor),
                    mean_brain_coverage: mean(&brain),
                    images_with_tumor: tumor.len(),
                });
            }
        }
        for n in &cfg.top_n {
            let raw: Vec<f64> = select(*kind, false, *n).filter_map(|r| r.tumor_coverage).collect();
            let refined: Vec<f64> = select(*kind, true, *n).filter_map(|r| r.tumor_coverage).collect();
            if let Ok(t) = mann_whitney_u(&refined, &raw) {
                tests.push(RefinementTest {
                    detector: *kind,
                    n: *n,
                    u: t.u,
                    p_two_sided: t.p_two_sided,
                });
            }
        }
    }
    (summaries, tests)
}

/// Writes the coverage CSV: data rows in manifest order, then one `mean` row
/// per configuration.
pub fn write_csv(path: &Path, report: &EvaluateReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for row in &report.rows {
        let r = &row.report;
        w.write_record([
            row.image.clone(),
            r.detector.to_string(),
            r.refined.to_string(),
            r.n_segments_used.to_string(),
            fmt_opt(r.tumor_coverage),
            fmt_opt(r.brain_coverage),
        ])?;
    }
    for s in &report.summaries {
        w.write_record([
            SUMMARY_IMAGE.to_string(),
            s.detector.to_string(),
            s.refined.to_string(),
            s.n.to_string(),
            fmt_opt(s.mean_tumor_coverage),
            fmt_opt(s.mean_brain_coverage),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

/// Runs the coverage sweep over every image, detector, top-n value and
/// raw/refined heatmap, writing `coverage.csv` and `summary.json`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateReport> {
    if cfg.images.is_empty() {
        return Err(CliError::Config("no input images (use --manifest)".into()));
    }
    create_out(&cfg.out)?;
    let annotations = cfg.annotations.as_ref().map(ViaAnnotations::load).transpose()?;
    if let Some(a) = &annotations {
        if a.skipped_regions > 0 {
            warn!("{} annotation regions are not usable polygons and were skipped", a.skipped_regions);
        }
    }
    let predictor = build_predictor(cfg)?;

    let results: Vec<Result<Vec<CoverageRow>>> = cfg
        .images
        .par_iter()
        .map(|p| evaluate_one(p, cfg, &predictor, annotations.as_ref()))
        .collect();

    let mut report = EvaluateReport::default();
    let mut last_err = None;
    for (path, res) in cfg.images.iter().zip(results) {
        match res {
            Ok(rows) => report.rows.extend(rows),
            Err(e) => {
                warn!("{}: {e}", path.display());
                report.failed_images.push(image_label(path));
                last_err = Some(e);
            }
        }
    }
    if report.rows.is_empty() {
        if let Some(e) = last_err {
            return Err(CliError::AllImagesFailed(e.to_string()));
        }
    }
    let (summaries, tests) = summarize(&report.rows, cfg);
    report.summaries = summaries;
    report.refinement_tests = tests;

    write_csv(&cfg.out.join("coverage.csv"), &report)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&cfg.out.join("summary.json"), &json)?;
    Ok(report)
}
