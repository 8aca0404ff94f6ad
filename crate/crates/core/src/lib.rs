//! Superpixel perturbation explanations for black-box binary image
//! classifiers, refined with an anatomical mask.
//!
//! The pipeline is: [`segmentation::quickshift_segment`] partitions the image,
//! [`explainer::explain`] fits a weighted ridge surrogate over segment
//! presence vectors, [`maskgen::brain_mask`] derives the brain region from
//! edges or an Otsu threshold, [`refine::refine_heatmap`] zeroes segments that
//! sit mostly outside that region, and [`metrics`] scores the result.

// `!(x > 0.0)` style checks deliberately reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod explainer;
pub mod imagecore;
pub mod maskgen;
pub mod metrics;
pub mod predictor;
pub mod refine;
pub mod segmentation;

pub use error::{Error, Result};
pub use explainer::{explain, top_segments, ExplainerParams, FillMode, Heatmap};
pub use imagecore::{load_gray, resize_normalize, BinaryMask, Connectivity, GrayImage, Polygon};
pub use maskgen::{brain_mask, BrainMaskResult, Degeneracy, DetectorKind, EdgeDetector};
pub use metrics::{ConfusionCounts, CoverageReport};
pub use predictor::{Prediction, Predictor, PredictorHandle};
pub use refine::{explanation_pixels, refine_heatmap, RefineParams, RefinedHeatmap};
pub use segmentation::{quickshift_segment, QuickShiftParams, SegmentMap};
