//! Synthetic brain scans with known tumor and brain masks.
//!
//! Each phantom is a dark frame holding a smoothly textured elliptical
//! "brain", a bright multi-lobed tumor inside it, and a bright extracranial blob
//! outside it. Both blobs exceed the builtin predictor's brightness level;
//! brain tissue never does.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use segrefine_core::imagecore::rasterize_polygon;
use segrefine_core::{BinaryMask, GrayImage, Polygon};

use crate::error::{CliError, Result};

/// Vertices of the tumor outline polygon.
const OUTLINE_VERTICES: usize = 48;
/// Minimum gap in pixels between the brain and the extracranial blob, at
/// the 224 px reference size.
const DISTRACTOR_GAP: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct Phantom {
    pub image: GrayImage,
    pub brain: BinaryMask,
    pub tumor: BinaryMask,
    /// One outline per tumor lobe; their union is the tumor.
    pub tumor_outlines: Vec<Polygon>,
    pub distractor: BinaryMask,
}

fn ellipse_outline(cx: f64, cy: f64, rx: f64, ry: f64, tilt: f64) -> Polygon {
    let (s, c) = tilt.sin_cos();
    Polygon::new(
        (0..OUTLINE_VERTICES)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / OUTLINE_VERTICES as f64;
                let (ex, ey) = (rx * t.cos(), ry * t.sin());
                (cx + ex * c - ey * s, cy + ex * s + ey * c)
            })
            .collect(),
    )
    .expect("ellipse outline has distinct vertices")
}

/// One phantom of `size x size` pixels. Phantom `index` of a run with
/// `seed` is reproducible on its own.
pub fn generate_phantom(size: usize, seed: u64, index: u64) -> Phantom {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s = size as f64;
    let scale = s / 224.0;

    let (bcx, bcy) = (s / 2.0 + rng.random_range(-0.03..0.03) * s, s / 2.0 + rng.random_range(-0.03..0.03) * s);
    let (ba, bb) = (rng.random_range(0.28..0.33) * s, rng.random_range(0.33..0.38) * s);
    let brain = BinaryMask::from_fn(size, size, |x, y| {
        let (dx, dy) = ((x as f64 + 0.5 - bcx) / ba, (y as f64 + 0.5 - bcy) / bb);
        dx * dx + dy * dy <= 1.0
    });

    // Tumor of two or three overlapping lobes of different brightness,
    // centred well inside the brain so its segments stay inside too.
    let (angle, reach) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..0.5f64).sqrt());
    let (tcx, tcy) = (bcx + 0.8 * reach * ba * angle.cos(), bcy + 0.8 * reach * bb * angle.sin());
    let tr = rng.random_range(0.045..0.065) * s;
    let lobes = rng.random_range(2..=3usize);
    let turn = rng.random_range(0.0..2.0 * PI);
    let mut tumor_outlines = Vec::with_capacity(lobes);
    let mut lobe_masks = Vec::with_capacity(lobes);
    let mut lobe_levels = Vec::with_capacity(lobes);
    for k in 0..lobes {
        let a = turn + 2.0 * PI * k as f64 / lobes as f64 + rng.random_range(-0.3..0.3);
        let (lx, ly) = (tcx + 0.5 * tr * a.cos(), tcy + 0.5 * tr * a.sin());
        let lr = tr * rng.random_range(0.55..0.7);
        let outline = ellipse_outline(
            lx,
            ly,
            lr * rng.random_range(0.9..1.1),
            lr * rng.random_range(0.9..1.1),
            rng.random_range(0.0..PI),
        );
        lobe_masks.push(rasterize_polygon(&outline, size, size).intersection(&brain).expect("same dimensions"));
        lobe_levels.push(0.84 + 0.06 * k as f64 + rng.random_range(0.0..0.03));
        tumor_outlines.push(outline);
    }
    let tumor = lobe_masks
        .iter()
        .fold(BinaryMask::new(size, size), |acc, m| acc.union(m).expect("same dimensions"));

    // Extracranial blob by rejection sampling in the frame corners.
    let dr = rng.random_range(0.04..0.065) * s;
    let gap = DISTRACTOR_GAP * scale + dr;
    let mut distractor = BinaryMask::new(size, size);
    for _ in 0..1000 {
        let (x, y) = (rng.random_range(dr + 2.0..s - dr - 2.0), rng.random_range(dr + 2.0..s - dr - 2.0));
        let (dx, dy) = ((x - bcx) / (ba + gap), (y - bcy) / (bb + gap));
        if dx * dx + dy * dy >= 1.0 {
            distractor = BinaryMask::from_fn(size, size, |px, py| {
                (px as f64 + 0.5 - x).powi(2) + (py as f64 + 0.5 - y).powi(2) <= dr * dr
            });
            break;
        }
    }

    let (fx, fy) = (rng.random_range(0.8..1.6) * PI / s, rng.random_range(0.8..1.6) * PI / s);
    let (px, py) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let tissue = rng.random_range(0.42..0.5);
    let noise: Vec<f32> = (0..size * size).map(|_| rng.random_range(-0.02f32..0.02)).collect();
    let image = GrayImage::from_fn(size, size, |x, y| {
        let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
        let base = if let Some(k) = lobe_masks.iter().position(|m| m.get(x, y)) {
            lobe_levels[k]
        } else if distractor.get(x, y) {
            0.9
        } else if brain.get(x, y) {
            tissue + 0.06 * (fx * xf + px).sin() * (fy * yf + py).cos()
        } else {
            0.05
        };
        base as f32 + noise[y * size + x]
    });

    Phantom {
        image,
        brain,
        tumor,
        tumor_outlines,
        distractor,
    }
}

/// File layout written by [`write_phantom_set`].
#[derive(Clone, Debug)]
pub struct PhantomSet {
    pub images: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub annotations: PathBuf,
}

pub fn phantom_name(index: usize) -> String {
    format!("phantom_{index:03}.png")
}

/// Writes `count` phantoms as PNGs, ground-truth masks under `masks/`, a
/// manifest listing the images, and a VGG Image Annotator export with the
/// tumor outlines.
pub fn write_phantom_set(count: usize, size: usize, seed: u64, out: &Path) -> Result<PhantomSet> {
    if count == 0 || size < 32 {
        return Err(CliError::Config("phantom needs count >= 1 and size >= 32".into()));
    }
    let masks = out.join("masks");
    std::fs::create_dir_all(&masks).map_err(|e| CliError::io(format!("creating {}", masks.display()), e))?;

    let mut images = Vec::with_capacity(count);
    let mut via = serde_json::Map::new();
    let mut manifest = String::new();
    for i in 0..count {
        let p = generate_phantom(size, seed, i as u64);
        let name = phantom_name(i);
        let path = out.join(&name);
        p.image.save_png(&path)?;
        let stem = name.trim_end_matches(".png");
        p.tumor.save_png(masks.join(format!("{stem}_tumor.png")))?;
        p.brain.save_png(masks.join(format!("{stem}_brain.png")))?;

        let regions: Vec<serde_json::Value> = p
            .tumor_outlines
            .iter()
            .map(|outline| {
                let (xs, ys): (Vec<f64>, Vec<f64>) = outline
                    .vertices()
                    .iter()
                    .map(|(x, y)| ((x * 100.0).round() / 100.0, (y * 100.0).round() / 100.0))
                    .unzip();
                json!({
                    "shape_attributes": {"name": "polygon", "all_points_x": xs, "all_points_y": ys},
                    "region_attributes": {"label": "tumor"}
                })
            })
            .collect();
        let byte_len = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
        via.insert(
            format!("{name}{byte_len}"),
            json!({
                "filename": name,
                "size": byte_len,
                "regions": regions,
                "file_attributes": {}
            }),
        );
        manifest.push_str(&name);
        manifest.push('\n');
        images.push(path);
    }

    let manifest_path = out.join("manifest.txt");
    std::fs::write(&manifest_path, manifest).map_err(|e| CliError::io("writing manifest", e))?;
    let annotations = out.join("annotations.json");
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(via)).expect("annotations serialize");
    std::fs::write(&annotations, text).map_err(|e| CliError::io("writing annotations", e))?;
    Ok(PhantomSet {
        images,
        manifest: manifest_path,
        annotations,
    })
}
