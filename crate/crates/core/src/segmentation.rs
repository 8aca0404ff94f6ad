//! Quick-shift superpixels.
//!
//! Every pixel gets a Parzen density estimate in the joint
//! `(colour, x, y)` space and is linked to the nearest pixel of higher density
//! inside the kernel window. Links longer than `max_dist` are cut; each
//! remaining tree is a segment.
//!
//! Intensity enters the joint space on a 0..100 lightness scale multiplied by
//! `ratio`, so the customary `ratio = 0.2` / `max_dist = 200` settings keep
//! the colour-vs-space balance they have on Lab images.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, Connectivity, GrayImage};

/// Lightness range intensities are mapped onto before `ratio` is applied.
pub const LIGHTNESS_SCALE: f64 = 100.0;

/// Upper bound of the density jitter used to break plateaus.
pub const JITTER: f64 = 1e-6;

/// Per-pixel segment labels `0..num_segments`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    num_segments: usize,
}

impl SegmentMap {
    /// Validates that labels are exactly `{0, .., d-1}` with each present.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if labels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        let d = labels.iter().copied().max().unwrap() as usize + 1;
        let mut seen = vec![false; d];
        for l in &labels {
            seen[*l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidParameter(format!("segment {missing} has no pixels")));
        }
        Ok(Self {
            width,
            height,
            labels,
            num_segments: d,
        })
    }

    /// Every pixel in one segment.
    pub fn single(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            num_segments: 1,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn segment_mask(&self, id: u32) -> BinaryMask {
        BinaryMask::from_bits(self.width, self.height, self.labels.iter().map(|l| *l == id).collect())
            .expect("label buffer matches dimensions")
    }

    /// Applies `new_id = permutation[old_id]`.
    pub fn relabeled(&self, permutation: &[u32]) -> Result<Self> {
        if permutation.len() != self.num_segments {
            return Err(Error::ShapeMismatch("permutation length differs from segment count".into()));
        }
        Self::from_labels(
            self.width,
            self.height,
            self.labels.iter().map(|l| permutation[*l as usize]).collect(),
        )
    }
}

/// Pixel count of every segment, indexed by segment ID.
pub fn segment_pixel_counts(seg: &SegmentMap) -> Vec<usize> {
    let mut counts = vec![0usize; seg.num_segments];
    for l in &seg.labels {
        counts[*l as usize] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuickShiftParams {
    /// Gaussian bandwidth of the density estimate, in pixels.
    pub kernel_size: f64,
    /// Links longer than this in the joint space are cut.
    pub max_dist: f64,
    /// Weight of intensity relative to position, in `[0, 1]`.
    pub ratio: f64,
    pub seed: u64,
}

impl Default for QuickShiftParams {
    fn default() -> Self {
        Self {
            kernel_size: 4.0,
            max_dist: 200.0,
            ratio: 0.2,
            seed: 0,
        }
    }
}

impl QuickShiftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kernel_size >= 1.0) {
            return Err(Error::InvalidParameter(format!("kernel_size {} < 1", self.kernel_size)));
        }
        if !(self.max_dist > 0.0) {
            return Err(Error::InvalidParameter(format!("max_dist {} must be positive", self.max_dist)));
        }
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::InvalidParameter(format!("ratio {} outside [0, 1]", self.ratio)));
        }
        Ok(())
    }
}

/// Segments `img` by quick-shift mode seeking.
///
/// Trees that are not spatially contiguous are split into their 8-connected
/// pieces, so every returned segment is one connected region. Labels are
/// numbered in raster order of each segment's first pixel.
pub fn quickshift_segment(img: &GrayImage, params: &QuickShiftParams) -> Result<SegmentMap> {
    params.validate()?;
    let (w, h) = img.dims();
    let scale = params.ratio * LIGHTNESS_SCALE;
    let colour: Vec<f64> = img.data().iter().map(|v| *v as f64 * scale).collect();
    let radius = (3.0 * params.kernel_size).ceil() as isize;
    let inv_bw = -0.5 / (params.kernel_size * params.kernel_size);

    let window = |x: usize, y: usize| {
        let x0 = (x as isize - radius).max(0) as usize;
        let x1 = (x as isize + radius).min(w as isize - 1) as usize;
        let y0 = (y as isize - radius).max(0) as usize;
        let y1 = (y as isize + radius).min(h as isize - 1) as usize;
        (x0, x1, y0, y1)
    };

    // Rows are independent; each pixel sums its window in a fixed order.
    let mut density: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let colour = &colour;
            (0..w).map(move |x| {
                let c = colour[y * w + x];
                let (x0, x1, y0, y1) = window(x, y);
                let mut sum = 0.0;
                for ny in y0..=y1 {
                    let dy = ny as f64 - y as f64;
                    for nx in x0..=x1 {
                        let dx = nx as f64 - x as f64;
                        let dc = colour[ny * w + nx] - c;
                        sum += (inv_bw * (dx * dx + dy * dy + dc * dc)).exp();
                    }
                }
                sum
            })
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for d in &mut density {
        *d += rng.random::<f64>() * JITTER;
    }

    let max_dist_sq = params.max_dist * params.max_dist;
    let parent: Vec<usize> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let (colour, density) = (&colour, &density);
            (0..w).map(move |x| {
                let i = y * w + x;
                let (x0, x1, y0, y1) = window(x, y);
                let mut best = f64::INFINITY;
                let mut best_j = i;
                for ny in y0..=y1 {
                    let dy = ny as f64 - y as f64;
                    for nx in x0..=x1 {
                        let j = ny * w + nx;
                        if density[j] > density[i] {
                            let dx = nx as f64 - x as f64;
                            let dc = colour[j] - colour[i];
                            let dist = dx * dx + dy * dy + dc * dc;
                            if dist < best {
                                best = dist;
                                best_j = j;
                            }
                        }
                    }
                }
                if best > max_dist_sq {
                    i
                } else {
                    best_j
                }
            })
        })
        .collect();

    let mut root = parent.clone();
    for i in 0..root.len() {
        let mut r = root[i];
        while root[r] != r {
            r = root[r];
        }
        // Path compression.
        let mut j = i;
        while root[j] != r {
            let next = root[j];
            root[j] = r;
            j = next;
        }
    }

    Ok(split_into_connected(w, h, &root))
}

/// Relabels so that each label is one 8-connected region of equal `tree` ids.
fn split_into_connected(w: usize, h: usize, tree: &[usize]) -> SegmentMap {
    const UNSET: u32 = u32::MAX;
    let mut labels = vec![UNSET; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if labels[start] != UNSET {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in Connectivity::Eight.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if labels[j] == UNSET && tree[j] == tree[i] {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    SegmentMap {
        width: w,
        height: h,
        labels,
        num_segments: next as usize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::connected_components;
    use proptest::prelude::*;

    fn params(kernel_size: f64, max_dist: f64, ratio: f64) -> QuickShiftParams {
        QuickShiftParams {
            kernel_size,
            max_dist,
            ratio,
            seed: 7,
        }
    }

    fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |x, y| {
            let base = if (x / 5 + y / 4) % 2 == 0 { 0.2 } else { 0.7 };
            base + rand::Rng::random::<f32>(&mut rng) * 0.2
        })
    }

    #[test]
    fn constant_image_collapses_to_one_segment() {
        let img = GrayImage::filled(16, 16, 0.4);
        let diag = (16f64 * 16.0 * 2.0).sqrt();
        let seg = quickshift_segment(&img, &params(4.0, diag, 0.2)).unwrap();
        assert_eq!(seg.num_segments(), 1);
    }

    #[test]
    fn step_edge_is_never_crossed() {
        let img = GrayImage::from_fn(16, 16, |x, _| if x < 8 { 0.0 } else { 1.0 });
        let seg = quickshift_segment(&img, &params(4.0, 2.0, 1.0)).unwrap();
        for id in 0..seg.num_segments() as u32 {
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for y in 0..16 {
                for x in 0..16 {
                    if seg.label(x, y) == id {
                        lo = lo.min(img.get(x, y));
                        hi = hi.max(img.get(x, y));
                    }
                }
            }
            assert!(hi - lo < 1.0, "segment {id} spans both halves");
        }
    }

    #[test]
    fn pixel_counts_examples() {
        let seg = SegmentMap::from_labels(2, 2, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(segment_pixel_counts(&seg), vec![2, 2]);
        assert_eq!(segment_pixel_counts(&SegmentMap::single(5, 3)), vec![15]);
    }

    #[test]
    fn from_labels_rejects_gaps() {
        assert!(SegmentMap::from_labels(2, 2, vec![0, 0, 2, 2]).is_err());
        assert!(SegmentMap::from_labels(2, 2, vec![0, 0, 1]).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        let img = GrayImage::filled(4, 4, 0.0);
        assert!(quickshift_segment(&img, &params(0.5, 10.0, 0.2)).is_err());
        assert!(quickshift_segment(&img, &params(2.0, 0.0, 0.2)).is_err());
        assert!(quickshift_segment(&img, &params(2.0, 10.0, 1.5)).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let img = noise_image(40, 30, 3);
        let p = QuickShiftParams::default();
        assert_eq!(quickshift_segment(&img, &p).unwrap(), quickshift_segment(&img, &p).unwrap());
    }

    #[test]
    fn labels_follow_first_pixel_order() {
        let img = noise_image(30, 30, 11);
        let seg = quickshift_segment(&img, &params(2.0, 6.0, 0.5)).unwrap();
        let mut next = 0;
        for l in seg.labels() {
            assert!(*l <= next);
            if *l == next {
                next += 1;
            }
        }
        assert_eq!(next as usize, seg.num_segments());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn partition_and_connectivity(
            w in 4usize..24, h in 4usize..24, seed in any::<u64>(),
            ks in 1.0f64..3.0, ratio in 0.0f64..1.0
        ) {
            let img = noise_image(w, h, seed);
            let seg = quickshift_segment(&img, &params(ks, 3.0 * ks, ratio)).unwrap();
            let counts = segment_pixel_counts(&seg);
            prop_assert_eq!(counts.iter().sum::<usize>(), w * h);
            prop_assert!(counts.iter().all(|c| *c > 0));
            for id in 0..seg.num_segments() as u32 {
                let m = seg.segment_mask(id);
                prop_assert_eq!(connected_components(&m, Connectivity::Eight).len(), 1);
            }
        }

        #[test]
        fn segment_count_nonincreasing_in_max_dist(
            seed in any::<u64>(), a in 0.5f64..20.0, b in 0.5f64..20.0
        ) {
            let img = noise_image(20, 18, seed);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let n_lo = quickshift_segment(&img, &params(2.0, lo, 0.3)).unwrap().num_segments();
            let n_hi = quickshift_segment(&img, &params(2.0, hi, 0.3)).unwrap().num_segments();
            prop_assert!(n_hi <= n_lo);
        }

        #[test]
        fn recount_matches(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let img = noise_image(w, h, seed);
            let seg = quickshift_segment(&img, &params(1.5, 4.0, 0.4)).unwrap();
            let counts = segment_pixel_counts(&seg);
            for (id, c) in counts.iter().enumerate() {
                let brute = (0..h).flat_map(|y| (0..w).map(move |x| (x, y)))
                    .filter(|(x, y)| seg.label(*x, *y) == id as u32).count();
                prop_assert_eq!(*c, brute);
            }
        }
    }
}
