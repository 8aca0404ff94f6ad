//! Heatmap overlays: the scan in gray with the top segments tinted.

use image::{Rgb, RgbImage};

use segrefine_core::explainer::top_segments;
use segrefine_core::{BinaryMask, BrainMaskResult, GrayImage, Heatmap, SegmentMap};

use crate::error::Result;

pub const POSITIVE: [u8; 3] = [0, 200, 0];
pub const NEGATIVE: [u8; 3] = [220, 0, 0];
pub const SEGMENT_EDGE: [u8; 3] = [255, 230, 0];
pub const BRAIN_CONTOUR: [u8; 3] = [40, 90, 255];

const MIN_ALPHA: f64 = 0.15;
const ALPHA_SPAN: f64 = 0.55;

fn gray_rgb(v: f32) -> Rgb<u8> {
    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([g, g, g])
}

fn blend(base: Rgb<u8>, color: [u8; 3], alpha: f64) -> Rgb<u8> {
    let mix = |b: u8, c: u8| ((1.0 - alpha) * b as f64 + alpha * c as f64).round() as u8;
    Rgb([mix(base[0], color[0]), mix(base[1], color[1]), mix(base[2], color[2])])
}

fn on_boundary(labels: &[u32], w: usize, h: usize, x: usize, y: usize) -> bool {
    let l = labels[y * w + x];
    [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize && labels[ny as usize * w + nx as usize] != l
    })
}

fn mask_contour(mask: &BinaryMask, x: usize, y: usize) -> bool {
    let (w, h) = mask.dims();
    mask.get(x, y)
        && [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize || !mask.get(nx as usize, ny as usize)
        })
}

/// Renders the top `n` segments over the gray image. Segment interiors are
/// blended green (positive) or red (negative) with opacity growing with
/// `|importance|`; their boundaries are drawn solid. The brain-mask contour
/// is drawn in blue when a mask is given.
pub fn render_overlay(img: &GrayImage, hm: &Heatmap, seg: &SegmentMap, n: usize, bm: Option<&BrainMaskResult>) -> Result<RgbImage> {
    let (w, h) = img.dims();
    if seg.dims() != (w, h) || hm.num_segments() != seg.num_segments() {
        return Err(segrefine_core::Error::ShapeMismatch(format!(
            "image {:?}, segment map {:?} with {} segments, heatmap with {}",
            img.dims(),
            seg.dims(),
            seg.num_segments(),
            hm.num_segments()
        ))
        .into());
    }
    if let Some(bm) = bm {
        if bm.mask.dims() != (w, h) {
            return Err(segrefine_core::Error::ShapeMismatch("brain mask size differs from image".into()).into());
        }
    }

    let chosen = top_segments(hm, n);
    let max_abs = chosen.iter().map(|id| hm.importance(*id).abs()).fold(0.0f64, f64::max);
    let mut tint: Vec<Option<([u8; 3], f64)>> = vec![None; seg.num_segments()];
    for id in &chosen {
        let v = hm.importance(*id);
        let alpha = MIN_ALPHA + ALPHA_SPAN * if max_abs > 0.0 { v.abs() / max_abs } else { 0.0 };
        tint[*id as usize] = Some((if v >= 0.0 { POSITIVE } else { NEGATIVE }, alpha));
    }

    let labels = seg.labels();
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let base = gray_rgb(img.get(x, y));
            let mut px = match tint[labels[y * w + x] as usize] {
                Some(_) if on_boundary(labels, w, h, x, y) => Rgb(SEGMENT_EDGE),
                Some((color, alpha)) => blend(base, color, alpha),
                None => base,
            };
            if let Some(bm) = bm {
                if mask_contour(&bm.mask, x, y) {
                    px = Rgb(BRAIN_CONTOUR);
                }
            }
            out.put_pixel(x as u32, y as u32, px);
        }
    }
    Ok(out)
}

/// The gray image promoted to RGB, as the overlay renders it underneath.
pub fn base_rgb(img: &GrayImage) -> RgbImage {
    RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| gray_rgb(img.get(x as usize, y as usize)))
}
