//! Classification metrics, explanation coverage, and evaluation statistics.

mod kfold;
mod mann_whitney;
mod via;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::BinaryMask;
use crate::maskgen::DetectorKind;

pub use kfold::stratified_kfold;
pub use mann_whitney::{mann_whitney_u, MannWhitney, EXACT_LIMIT};
pub use via::ViaAnnotations;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Tallies binary decisions against ground truth (1 = positive).
    pub fn from_decisions(truth: &[u8], predicted: &[u8]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut c = Self::default();
        for (t, p) in truth.iter().zip(predicted) {
            match (*t != 0, *p != 0) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> Result<f64> {
        ratio(self.tp + self.tn, self.total(), "accuracy")
    }

    pub fn precision(&self) -> Result<f64> {
        ratio(self.tp, self.tp + self.fp, "precision")
    }

    pub fn recall(&self) -> Result<f64> {
        ratio(self.tp, self.tp + self.fn_, "recall")
    }

    /// Harmonic mean of precision and recall; undefined when either is, or
    /// when both are 0.
    pub fn f1(&self) -> Result<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        if p + r == 0.0 {
            return Err(Error::UndefinedMetric("f1"));
        }
        Ok(2.0 * p * r / (p + r))
    }
}

fn ratio(num: u64, den: u64, name: &'static str) -> Result<f64> {
    if den == 0 {
        return Err(Error::UndefinedMetric(name));
    }
    Ok(num as f64 / den as f64)
}

/// The four classification metrics; `None` marks an undefined value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn classification_metrics(c: &ConfusionCounts) -> ClassificationMetrics {
    ClassificationMetrics {
        accuracy: c.accuracy().ok(),
        precision: c.precision().ok(),
        recall: c.recall().ok(),
        f1: c.f1().ok(),
    }
}

fn covered_fraction(expl: &BinaryMask, target: &BinaryMask, empty: Error) -> Result<f64> {
    let overlap = expl.intersection_area(target)?;
    let total = target.area();
    if total == 0 {
        return Err(empty);
    }
    Ok(overlap as f64 / total as f64)
}

/// Fraction of annotated tumor pixels inside the explanation.
pub fn tumor_segment_coverage(expl: &BinaryMask, tumor: &BinaryMask) -> Result<f64> {
    covered_fraction(expl, tumor, Error::EmptyAnnotation)
}

/// Fraction of brain-mask pixels inside the explanation.
pub fn brain_mask_segment_coverage(expl: &BinaryMask, brain: &BinaryMask) -> Result<f64> {
    covered_fraction(expl, brain, Error::EmptyMask)
}

/// Coverage of one explanation configuration. `tumor_coverage` is absent for
/// images without an annotation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub tumor_coverage: Option<f64>,
    pub brain_coverage: Option<f64>,
    pub n_segments_used: usize,
    pub detector: DetectorKind,
    pub refined: bool,
}
