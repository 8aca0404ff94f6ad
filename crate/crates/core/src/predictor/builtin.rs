use crate::error::Result;
use crate::imagecore::GrayImage;

use super::{Prediction, Predictor};

/// Intensity at or above which a pixel counts as bright.
pub const BRIGHT_LEVEL: f32 = 0.8;

/// Bright fraction at which the tumor probability saturates.
pub const SATURATION_FRACTION: f64 = 0.05;

/// Synthetic classifier: tumor probability grows linearly with the fraction
/// of bright pixels and saturates at 5% of the frame.
pub fn builtin_blob_predict(img: &GrayImage) -> Prediction {
    let bright = img.data().iter().filter(|v| **v >= BRIGHT_LEVEL).count();
    let fraction = bright as f64 / img.len() as f64;
    Prediction::from_tumor_probability((fraction / SATURATION_FRACTION).min(1.0))
}

/// [`builtin_blob_predict`] as a [`Predictor`].
#[derive(Clone, Copy, Debug, Default)]
pub struct BlobPredictor;

impl Predictor for BlobPredictor {
    fn predict(&self, images: &[GrayImage]) -> Result<Vec<Prediction>> {
        use rayon::prelude::*;
        Ok(images.par_iter().map(builtin_blob_predict).collect())
    }
}
