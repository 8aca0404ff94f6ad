//! Perturbation-based local surrogate over superpixels.
//!
//! Segments are switched on and off according to binary presence vectors,
//! the black box scores every realized image, and a weighted ridge model of
//! the tumor probability on the presence bits gives one importance per
//! segment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::Error as _;
use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imagecore::GrayImage;
use crate::predictor::{Prediction, PredictorHandle};
use crate::segmentation::SegmentMap;

/// Class whose probability the surrogate models.
pub const TUMOR_CLASS: u8 = 1;

/// How hidden segments are painted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum FillMode {
    /// Each hidden segment takes its own mean intensity.
    SegmentMean,
    /// Every hidden pixel takes this intensity.
    Constant(f32),
}

impl std::str::FromStr for FillMode {
    type Err = Error;

    /// `mean` / `segment-mean`, or a constant such as `0` or `constant:0.2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "mean" || s == "segment-mean" {
            return Ok(FillMode::SegmentMean);
        }
        let value = s.strip_prefix("constant:").unwrap_or(s);
        match value.parse::<f32>() {
            Ok(v) if (0.0..=1.0).contains(&v) => Ok(FillMode::Constant(v)),
            _ => Err(Error::InvalidParameter(format!("unknown fill mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainerParams {
    pub num_samples: usize,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub fill_mode: FillMode,
    pub seed: u64,
}

impl Default for ExplainerParams {
    fn default() -> Self {
        Self {
            num_samples: 1000,
            kernel_width: 0.25,
            ridge_lambda: 1.0,
            fill_mode: FillMode::SegmentMean,
            seed: 0,
        }
    }
}

impl ExplainerParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::InvalidParameter("num_samples must be at least 1".into()));
        }
        if !(self.kernel_width > 0.0) {
            return Err(Error::InvalidParameter(format!("kernel_width {} must be positive", self.kernel_width)));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("ridge_lambda {} must be >= 0", self.ridge_lambda)));
        }
        Ok(())
    }
}

/// One perturbed instance with its black-box output and proximity weight.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSample {
    pub presence: Vec<bool>,
    pub prediction: Prediction,
    pub kernel_weight: f64,
}

/// Segment importances plus the surrogate intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    importances: Vec<f64>,
    pub intercept: f64,
    pub seed: u64,
}

impl Heatmap {
    pub fn new(importances: Vec<f64>, intercept: f64, seed: u64) -> Result<Self> {
        if importances.is_empty() {
            return Err(Error::InvalidParameter("heatmap needs at least one segment".into()));
        }
        if !intercept.is_finite() || importances.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("heatmap values must be finite".into()));
        }
        Ok(Self {
            importances,
            intercept,
            seed,
        })
    }

    pub fn num_segments(&self) -> usize {
        self.importances.len()
    }

    /// Importances indexed by segment ID.
    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    pub fn importance(&self, id: u32) -> f64 {
        self.importances[id as usize]
    }

    pub(crate) fn set_importance(&mut self, id: usize, value: f64) {
        self.importances[id] = value;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("heatmap serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("bad heatmap JSON: {e}")))
    }
}

/// Serializes importances as `{"0": w0, "1": w1, ..}` in ID order.
pub(crate) struct OrderedImportances<'a>(pub &'a [f64]);

impl Serialize for OrderedImportances<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (id, w) in self.0.iter().enumerate() {
            map.serialize_entry(&id.to_string(), w)?;
        }
        map.end()
    }
}

pub(crate) fn importances_from_map(
    map: std::collections::HashMap<String, f64>,
    num_segments: usize,
) -> std::result::Result<Vec<f64>, String> {
    if map.len() != num_segments {
        return Err(format!("{} importances for {num_segments} segments", map.len()));
    }
    let mut out = vec![f64::NAN; num_segments];
    for (k, v) in map {
        let id: usize = k.parse().map_err(|_| format!("segment key {k:?} is not an integer"))?;
        if id >= num_segments {
            return Err(format!("segment {id} out of range"));
        }
        out[id] = v;
    }
    Ok(out)
}

impl Serialize for Heatmap {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("Heatmap", 4)?;
        s.serialize_field("intercept", &self.intercept)?;
        s.serialize_field("importances", &OrderedImportances(&self.importances))?;
        s.serialize_field("num_segments", &self.importances.len())?;
        s.serialize_field("seed", &self.seed)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for Heatmap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            intercept: f64,
            importances: std::collections::HashMap<String, f64>,
            num_segments: usize,
            #[serde(default)]
            seed: u64,
        }
        let r = Repr::deserialize(deserializer)?;
        let importances = importances_from_map(r.importances, r.num_segments).map_err(D::Error::custom)?;
        Heatmap::new(importances, r.intercept, r.seed).map_err(D::Error::custom)
    }
}

/// Presence vectors for `d` segments. The first is always all-ones. When
/// `2^d <= num_samples` every subset is enumerated once (all-ones first,
/// then the remaining subsets in binary-counter order, bit `i` = segment `i`);
/// otherwise the rest are independent fair coin flips from the seeded RNG.
pub fn sample_presence_vectors(d: usize, params: &ExplainerParams) -> Result<Vec<Vec<bool>>> {
    if d == 0 {
        return Err(Error::InvalidParameter("need at least one segment".into()));
    }
    params.validate()?;
    let exhaustive = d < 63 && (1u64 << d) <= params.num_samples as u64;
    let mut out = Vec::with_capacity(if exhaustive { 1 << d } else { params.num_samples });
    out.push(vec![true; d]);
    if exhaustive {
        let all = (1u64 << d) - 1;
        for code in 0..all {
            out.push((0..d).map(|i| code >> i & 1 == 1).collect());
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for _ in 1..params.num_samples {
            out.push((0..d).map(|_| rng.random::<bool>()).collect());
        }
    }
    Ok(out)
}

/// Mean intensity of each segment.
pub fn segment_means(img: &GrayImage, seg: &SegmentMap) -> Vec<f32> {
    let mut sums = vec![0.0f64; seg.num_segments()];
    let mut counts = vec![0usize; seg.num_segments()];
    for (v, l) in img.data().iter().zip(seg.labels()) {
        sums[*l as usize] += *v as f64;
        counts[*l as usize] += 1;
    }
    sums.iter().zip(&counts).map(|(s, c)| (s / *c as f64) as f32).collect()
}

fn check_shapes(img: &GrayImage, seg: &SegmentMap) -> Result<()> {
    if img.dims() != seg.dims() {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} vs segment map {:?}",
            img.dims(),
            seg.dims()
        )));
    }
    Ok(())
}

/// Paints the segments whose presence bit is off.
pub fn realize_image(img: &GrayImage, seg: &SegmentMap, presence: &[bool], fill: FillMode) -> Result<GrayImage> {
    check_shapes(img, seg)?;
    if presence.len() != seg.num_segments() {
        return Err(Error::ShapeMismatch(format!(
            "{} presence bits for {} segments",
            presence.len(),
            seg.num_segments()
        )));
    }
    let fills = match fill {
        FillMode::SegmentMean => segment_means(img, seg),
        FillMode::Constant(c) => vec![c; seg.num_segments()],
    };
    Ok(realize_with(img, seg, presence, &fills))
}

fn realize_with(img: &GrayImage, seg: &SegmentMap, presence: &[bool], fills: &[f32]) -> GrayImage {
    let data = img
        .data()
        .iter()
        .zip(seg.labels())
        .map(|(v, l)| if presence[*l as usize] { *v } else { fills[*l as usize] })
        .collect();
    GrayImage::from_raw_clamped(img.width(), img.height(), data)
}

/// Exponential kernel over the cosine distance between `presence` and the
/// all-ones vector.
pub fn kernel_weight(presence: &[bool], kernel_width: f64) -> f64 {
    let d = presence.len() as f64;
    let on = presence.iter().filter(|b| **b).count() as f64;
    let dist = if on == 0.0 { 1.0 } else { 1.0 - on / (on * d).sqrt() };
    (-(dist * dist) / (kernel_width * kernel_width)).exp()
}

/// Weighted ridge fit of the `target_class` probability on presence bits.
///
/// Minimizes `sum_k w_k (y_k - b0 - b.z_k)^2 + lambda |b|^2`; the intercept
/// is not penalized. Solved through the normal equations with a Cholesky
/// factorization.
pub fn fit_surrogate(samples: &[PerturbationSample], target_class: u8, ridge_lambda: f64) -> Result<Heatmap> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidParameter("no samples to fit".into()))?;
    let d = first.presence.len();
    if d == 0 {
        return Err(Error::InvalidParameter("presence vectors are empty".into()));
    }
    if samples.iter().any(|s| s.presence.len() != d) {
        return Err(Error::ShapeMismatch("presence vectors differ in length".into()));
    }
    if !(ridge_lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("ridge_lambda {ridge_lambda} must be >= 0")));
    }

    // Column 0 is the intercept.
    let p = d + 1;
    let mut gram = vec![0.0f64; p * p];
    let mut rhs = vec![0.0f64; p];
    let mut active = Vec::with_capacity(p);
    for s in samples {
        let w = s.kernel_weight;
        let y = s.prediction.probability(target_class);
        active.clear();
        active.push(0);
        active.extend(s.presence.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i + 1));
        for (ai, &a) in active.iter().enumerate() {
            rhs[a] += w * y;
            for &b in &active[..=ai] {
                gram[a * p + b] += w;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[b * p + a] = gram[a * p + b];
        }
    }
    for i in 1..p {
        gram[i * p + i] += ridge_lambda;
    }

    let beta = cholesky_solve(&mut gram, &rhs, p)?;
    Heatmap::new(beta[1..].to_vec(), beta[0], 0)
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major, `n x n`),
/// overwriting `A` with its Cholesky factor.
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0f64, f64::max);
    let tol = scale * 1e-12;
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !(diag > tol) {
            return Err(Error::SingularSystem);
        }
        let diag = diag.sqrt();
        a[j * n + j] = diag;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / diag;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Ok(y)
}

/// Explains the tumor-class prediction for `img` over the segments of `seg`.
pub fn explain(img: &GrayImage, seg: &SegmentMap, predictor: &PredictorHandle, params: &ExplainerParams) -> Result<Heatmap> {
    check_shapes(img, seg)?;
    let vectors = sample_presence_vectors(seg.num_segments(), params)?;
    let fills = match params.fill_mode {
        FillMode::SegmentMean => segment_means(img, seg),
        FillMode::Constant(c) => vec![c; seg.num_segments()],
    };

    let mut predictions = Vec::with_capacity(vectors.len());
    for chunk in vectors.chunks(predictor.batch_limit()) {
        let images: Vec<GrayImage> = chunk.par_iter().map(|z| realize_with(img, seg, z, &fills)).collect();
        predictions.extend(predictor.predict_batch(&images)?);
    }

    let samples: Vec<PerturbationSample> = vectors
        .into_iter()
        .zip(predictions)
        .map(|(presence, prediction)| PerturbationSample {
            kernel_weight: kernel_weight(&presence, params.kernel_width),
            presence,
            prediction,
        })
        .collect();
    let mut hm = fit_surrogate(&samples, TUMOR_CLASS, params.ridge_lambda)?;
    hm.seed = params.seed;
    Ok(hm)
}

/// Up to `n` segments with positive importance, strongest first (ties by
/// lower ID).
pub fn top_segments(hm: &Heatmap, n: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..hm.num_segments() as u32).filter(|i| hm.importance(*i) > 0.0).collect();
    ids.sort_by(|a, b| hm.importance(*b).total_cmp(&hm.importance(*a)).then(a.cmp(b)));
    ids.truncate(n);
    ids
}
