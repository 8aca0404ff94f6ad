//! Brain masks from edge or threshold maps.
//!
//! Each detector turns the image into a binary map; the largest
//! 8-connected component of that map is hole-filled to give the mask.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{fill_holes, label_components, quantize, BinaryMask, Connectivity, GrayImage};

/// Masks covering less than this fraction of the frame are blank.
pub const BLANK_FRACTION: f64 = 0.05;
/// Masks covering more than this fraction of the frame are full-image.
pub const FULL_FRACTION: f64 = 0.95;
/// Rings thinner than this (pixels) with nothing inside are blank-interior.
pub const MIN_RING_THICKNESS: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Canny,
    Laplace,
    Otsu,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Canny, DetectorKind::Laplace, DetectorKind::Otsu];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Canny => "canny",
            DetectorKind::Laplace => "laplace",
            DetectorKind::Otsu => "otsu",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "canny" => Ok(DetectorKind::Canny),
            "laplace" => Ok(DetectorKind::Laplace),
            "otsu" => Ok(DetectorKind::Otsu),
            other => Err(Error::InvalidParameter(format!("unknown detector {other:?}"))),
        }
    }
}

/// Detector choice and its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeDetector {
    pub kind: DetectorKind,
    pub gaussian_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub laplace_threshold: f64,
}

impl Default for EdgeDetector {
    fn default() -> Self {
        Self::new(DetectorKind::Canny)
    }
}

impl EdgeDetector {
    pub fn new(kind: DetectorKind) -> Self {
        Self {
            kind,
            gaussian_sigma: 1.4,
            canny_low: 0.1,
            canny_high: 0.2,
            laplace_threshold: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("gaussian_sigma", self.gaussian_sigma),
            ("canny_low", self.canny_low),
            ("canny_high", self.canny_high),
            ("laplace_threshold", self.laplace_threshold),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.canny_low >= self.canny_high {
            return Err(Error::InvalidParameter(format!(
                "canny_low {} must be below canny_high {}",
                self.canny_low, self.canny_high
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Degeneracy {
    FullImage,
    Blank,
    BlankInterior,
}

impl fmt::Display for Degeneracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Degeneracy::FullImage => "full-image",
            Degeneracy::Blank => "blank",
            Degeneracy::BlankInterior => "blank-interior",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrainMaskResult {
    pub mask: BinaryMask,
    pub detector: DetectorKind,
    pub degenerate: Option<Degeneracy>,
}

impl BrainMaskResult {
    pub fn is_degenerate(&self) -> bool {
        self.degenerate.is_some()
    }
}

/// Separable Gaussian blur with clamped borders, truncated at 3 sigma.
/// `sigma <= 0` returns the image unchanged.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Vec<f64> {
    let (w, h) = img.dims();
    let src: Vec<f64> = img.data().iter().map(|v| *v as f64).collect();
    if sigma <= 0.0 {
        return src;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[y * w + clamp(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

fn at(buf: &[f64], w: usize, h: usize, x: isize, y: isize) -> f64 {
    buf[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize]
}

/// Sobel gradients scaled by 1/4, so a unit step has magnitude 1.
pub fn sobel(buf: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| at(buf, w, h, x + dx, y + dy);
            let i = y as usize * w + x as usize;
            gx[i] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1)) / 4.0;
            gy[i] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1)) / 4.0;
        }
    }
    (gx, gy)
}

/// Canny edges: blur, Sobel, non-maximum suppression over four direction
/// bins, then 8-connected hysteresis between `canny_low` and `canny_high`.
pub fn canny_edges(img: &GrayImage, det: &EdgeDetector) -> BinaryMask {
    let (w, h) = img.dims();
    let blurred = gaussian_blur(img, det.gaussian_sigma);
    let (gx, gy) = sobel(&blurred, w, h);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();

    let mut thin = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dx, dy) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let a = at(&mag, w, h, x + dx, y + dy);
            let b = at(&mag, w, h, x - dx, y - dy);
            if m >= a && m >= b {
                thin[i] = m;
            }
        }
    }

    let mut edges = BinaryMask::new(w, h);
    let mut queue = VecDeque::new();
    for (i, m) in thin.iter().enumerate() {
        if *m > 0.0 && *m >= det.canny_high {
            edges.set_index(i, true);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in Connectivity::Eight.offsets() {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !edges.bits()[j] && thin[j] > 0.0 && thin[j] >= det.canny_low {
                edges.set_index(j, true);
                queue.push_back(j);
            }
        }
    }
    edges
}

/// Blur followed by the 3x3 Laplacian `(0,1,0; 1,-4,1; 0,1,0)` with clamped
/// borders.
pub fn laplace_response(img: &GrayImage, sigma: f64) -> Vec<f64> {
    let (w, h) = img.dims();
    let buf = gaussian_blur(img, sigma);
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let c = at(&buf, w, h, x, y);
            out[y as usize * w + x as usize] = at(&buf, w, h, x + 1, y)
                + at(&buf, w, h, x - 1, y)
                + at(&buf, w, h, x, y + 1)
                + at(&buf, w, h, x, y - 1)
                - 4.0 * c;
        }
    }
    out
}

/// Zero crossings of the Laplacian response, marked on the bright side: a
/// pixel with negative response is an edge when some 4-neighbour is positive
/// and the jump between them exceeds `laplace_threshold`.
pub fn laplace_edges(img: &GrayImage, det: &EdgeDetector) -> BinaryMask {
    let (w, h) = img.dims();
    let r = laplace_response(img, det.gaussian_sigma);
    BinaryMask::from_fn(w, h, |x, y| {
        let v = r[y * w + x];
        v < 0.0
            && Connectivity::Four.offsets().iter().any(|(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    return false;
                }
                let q = r[ny as usize * w + nx as usize];
                q > 0.0 && q - v > det.laplace_threshold
            })
    })
}

/// 256-bin histogram with bin `round(255 v)`.
pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for v in img.data() {
        hist[quantize(*v) as usize] += 1;
    }
    hist
}

/// Smallest threshold bin maximizing the between-class variance.
///
/// Candidates are compared exactly on `(s0 n1 - s1 n0)^2 / (n0 n1)`, which is
/// the between-class variance up to a positive constant, by integer cross
/// multiplication.
pub fn otsu_threshold(img: &GrayImage) -> Result<u8> {
    let hist = histogram(img);
    let total_n: u64 = hist.iter().sum();
    let total_s: u64 = hist.iter().enumerate().map(|(i, c)| i as u64 * c).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best: Option<(u8, u128, u128)> = None;
    for (t, count) in hist.iter().enumerate().take(255) {
        n0 += count;
        s0 += t as u64 * count;
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_s - s0;
        let diff = (s0 as i128 * n1 as i128 - s1 as i128 * n0 as i128).unsigned_abs();
        let num = diff * diff;
        let den = n0 as u128 * n1 as u128;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|(t, _, _)| t).ok_or(Error::UniformImage)
}

/// Pixels brighter than the Otsu threshold.
pub fn otsu_mask(img: &GrayImage) -> Result<BinaryMask> {
    let t = otsu_threshold(img)?;
    let (w, h) = img.dims();
    Ok(BinaryMask::from_bits(w, h, img.data().iter().map(|v| quantize(*v) > t).collect()).expect("same dimensions"))
}

/// Raw detector output before component selection.
pub fn detector_map(img: &GrayImage, det: &EdgeDetector) -> Result<BinaryMask> {
    Ok(match det.kind {
        DetectorKind::Canny => canny_edges(img, det),
        DetectorKind::Laplace => laplace_edges(img, det),
        DetectorKind::Otsu => otsu_mask(img)?,
    })
}

/// Count of pixel sides between the mask and anything outside it.
fn perimeter_edges(mask: &BinaryMask) -> usize {
    let (w, h) = mask.dims();
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for (dx, dy) in Connectivity::Four.offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize || !mask.get(nx as usize, ny as usize) {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Brain mask: detector map, largest 8-connected component, holes filled,
/// with degeneracy flags.
pub fn brain_mask(img: &GrayImage, det: &EdgeDetector) -> BrainMaskResult {
    let (w, h) = img.dims();
    let raw = match detector_map(img, det) {
        Ok(m) => m,
        Err(_) => BinaryMask::new(w, h),
    };
    let component = label_components(&raw, Connectivity::Eight)
        .largest()
        .unwrap_or_else(|| BinaryMask::new(w, h));
    let mask = fill_holes(&component);

    let frame = (w * h) as f64;
    let area = mask.area() as f64;
    let degenerate = if area < BLANK_FRACTION * frame {
        Some(Degeneracy::Blank)
    } else if area > FULL_FRACTION * frame {
        Some(Degeneracy::FullImage)
    } else {
        let interior = mask.area() - component.area();
        let thickness = 2.0 * component.area() as f64 / perimeter_edges(&component) as f64;
        (interior == 0 && thickness < MIN_RING_THICKNESS).then_some(Degeneracy::BlankInterior)
    };
    BrainMaskResult {
        mask,
        detector: det.kind,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::connected_components;
    use num::rational::Ratio;
    use proptest::prelude::*;

    fn disk(size: usize, r: f64) -> (GrayImage, BinaryMask) {
        let c = size as f64 / 2.0;
        let inside = |x: usize, y: usize| (x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2) <= r * r;
        (
            GrayImage::from_fn(size, size, |x, y| if inside(x, y) { 1.0 } else { 0.0 }),
            BinaryMask::from_fn(size, size, inside),
        )
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = GrayImage::filled(20, 20, 0.6);
        let det = EdgeDetector::default();
        assert!(canny_edges(&img, &det).is_empty());
        assert!(laplace_edges(&img, &det).is_empty());
    }

    #[test]
    fn step_edges_are_localized() {
        let img = GrayImage::from_fn(32, 32, |x, _| if x >= 16 { 1.0 } else { 0.0 });
        let edges = canny_edges(&img, &EdgeDetector::default());
        assert!(!edges.is_empty());
        for y in 0..32 {
            for x in 0..32 {
                if edges.get(x, y) {
                    assert!((14..=17).contains(&x), "edge at column {x}");
                }
            }
        }
    }

    #[test]
    fn disk_edges_form_one_closed_ring() {
        let (img, _) = disk(64, 10.0);
        let edges = canny_edges(&img, &EdgeDetector::default());
        assert_eq!(connected_components(&edges, Connectivity::Eight).len(), 1);
        assert!(fill_holes(&edges).area() > edges.area());
    }

    #[test]
    fn laplacian_of_impulse() {
        let img = GrayImage::from_fn(5, 5, |x, y| if (x, y) == (2, 2) { 1.0 } else { 0.0 });
        let r = laplace_response(&img, 0.0);
        assert_eq!(r[2 * 5 + 2], -4.0);
        for i in [7, 11, 13, 17] {
            assert_eq!(r[i], 1.0);
        }
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn laplacian_annihilates_ramp() {
        let img = GrayImage::from_fn(16, 16, |x, y| (x + 2 * y) as f32 / 64.0);
        let r = laplace_response(&img, 0.0);
        for y in 1..15 {
            for x in 1..15 {
                assert!(r[y * 16 + x].abs() < 1e-6);
            }
        }
    }

    #[test]
    fn otsu_on_two_levels() {
        let img = GrayImage::from_fn(8, 8, |x, _| if x < 4 { 0.0 } else { 1.0 });
        assert_eq!(otsu_threshold(&img).unwrap(), 0);
        let m = otsu_mask(&img).unwrap();
        assert_eq!(m, BinaryMask::from_fn(8, 8, |x, _| x >= 4));
    }

    #[test]
    fn otsu_rejects_uniform() {
        assert!(matches!(otsu_mask(&GrayImage::filled(6, 6, 0.3)), Err(Error::UniformImage)));
    }

    #[test]
    fn disk_masks_match_for_all_detectors() {
        let (img, truth) = disk(64, 16.0);
        for kind in DetectorKind::ALL {
            let res = brain_mask(&img, &EdgeDetector::new(kind));
            let iou = res.mask.iou(&truth).unwrap();
            assert!(iou >= 0.95, "{kind}: IoU {iou}");
            assert_eq!(res.degenerate, None, "{kind}");
        }
    }

    #[test]
    fn blank_and_bright_images_are_degenerate() {
        for kind in DetectorKind::ALL {
            let det = EdgeDetector::new(kind);
            assert!(brain_mask(&GrayImage::filled(32, 32, 0.0), &det).is_degenerate());
            assert!(brain_mask(&GrayImage::filled(32, 32, 1.0), &det).is_degenerate());
        }
        let res = brain_mask(&GrayImage::filled(32, 32, 1.0), &EdgeDetector::new(DetectorKind::Otsu));
        assert_eq!(res.degenerate, Some(Degeneracy::Blank));
    }

    #[test]
    fn nearly_full_frame_is_flagged() {
        let img = GrayImage::from_fn(40, 40, |x, y| if x == 0 && y == 0 { 0.0 } else { 1.0 });
        let res = brain_mask(&img, &EdgeDetector::new(DetectorKind::Otsu));
        assert_eq!(res.degenerate, Some(Degeneracy::FullImage));
    }

    #[test]
    fn thin_open_curve_is_blank_interior() {
        // A one-pixel comb open towards the bottom border encloses nothing.
        let img = GrayImage::from_fn(40, 40, |x, y| if y == 20 || (x % 4 == 0 && y > 20) { 1.0 } else { 0.0 });
        let res = brain_mask(&img, &EdgeDetector::new(DetectorKind::Otsu));
        assert_eq!(res.degenerate, Some(Degeneracy::BlankInterior));
    }

    #[test]
    fn detector_parsing_and_validation() {
        assert_eq!("Laplace".parse::<DetectorKind>().unwrap(), DetectorKind::Laplace);
        assert!("sobel".parse::<DetectorKind>().is_err());
        let mut det = EdgeDetector::default();
        assert!(det.validate().is_ok());
        det.canny_low = 0.3;
        assert!(det.validate().is_err());
    }

    /// Between-class variance as an exact rational, straight from the
    /// class weights and means.
    fn exhaustive_otsu(img: &GrayImage) -> Option<u8> {
        let bins: Vec<i128> = img.data().iter().map(|v| (v * 255.0).round() as i128).collect();
        let n = bins.len() as i128;
        let mut best: Option<(u8, Ratio<i128>)> = None;
        for t in 0..=255i128 {
            let (lo, hi): (Vec<i128>, Vec<i128>) = bins.iter().partition(|b| **b <= t);
            if lo.is_empty() || hi.is_empty() {
                continue;
            }
            let w0 = Ratio::new(lo.len() as i128, n);
            let w1 = Ratio::new(hi.len() as i128, n);
            let m0 = Ratio::new(lo.iter().sum(), lo.len() as i128);
            let m1 = Ratio::new(hi.iter().sum(), hi.len() as i128);
            let var = w0 * w1 * (m0 - m1) * (m0 - m1);
            if best.is_none_or(|(_, b)| var > b) {
                best = Some((t as u8, var));
            }
        }
        best.map(|(t, _)| t)
    }

    fn arb_image(max: usize) -> impl Strategy<Value = GrayImage> {
        (2usize..=max, 2usize..=max).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0u8..=255, w * h)
                .prop_map(move |v| GrayImage::new(w, h, v.into_iter().map(|b| b as f32 / 255.0).collect()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn otsu_matches_exhaustive_search(img in arb_image(12)) {
            prop_assert_eq!(otsu_threshold(&img).ok(), exhaustive_otsu(&img));
        }

        #[test]
        fn otsu_inversion_flips_mask(img in arb_image(12)) {
            let (Ok(t), Ok(ti)) = (otsu_threshold(&img), otsu_threshold(&img.inverted())) else {
                return Ok(());
            };
            let m = otsu_mask(&img).unwrap();
            let mi = otsu_mask(&img.inverted()).unwrap();
            // The inverted image selects bins below 255 - ti; bins between the
            // two tied optima may land on either side.
            let (lo, hi) = (t.min(254 - ti), t.max(254 - ti));
            for (i, v) in img.data().iter().enumerate() {
                let b = quantize(*v);
                if m.bits()[i] == mi.bits()[i] {
                    prop_assert!(b > lo && b <= hi, "bin {} outside ({}, {}]", b, lo, hi);
                }
            }
        }

        #[test]
        fn brain_mask_is_hole_free(img in arb_image(24), k in 0usize..3) {
            let res = brain_mask(&img, &EdgeDetector::new(DetectorKind::ALL[k]));
            prop_assert_eq!(fill_holes(&res.mask), res.mask.clone());
            if res.degenerate.is_none() {
                let frac = res.mask.area() as f64 / (img.width() * img.height()) as f64;
                prop_assert!((BLANK_FRACTION..=FULL_FRACTION).contains(&frac));
            }
        }

        #[test]
        fn canny_nonincreasing_in_high(img in arb_image(20), a in 11u32..60, b in 11u32..60) {
            let (lo, hi) = (a.min(b) as f64 / 100.0, a.max(b) as f64 / 100.0);
            let mut det = EdgeDetector { canny_low: 0.1, ..EdgeDetector::default() };
            det.canny_high = lo;
            let loose = canny_edges(&img, &det);
            det.canny_high = hi;
            let strict = canny_edges(&img, &det);
            prop_assert!(strict.is_subset_of(&loose));
        }
    }
}
