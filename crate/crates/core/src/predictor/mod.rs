//! The black-box binary classifier being explained.
//!
//! [`PredictorHandle`] wraps a backend (the built-in blob model, a child
//! process speaking line-delimited JSON, or an HTTP endpoint) and hides batch
//! splitting from callers.

mod builtin;
mod http;
mod process;
pub mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::GrayImage;

pub use builtin::{builtin_blob_predict, BlobPredictor, BRIGHT_LEVEL, SATURATION_FRACTION};
pub use http::HttpPredictor;
pub use process::ProcessPredictor;

/// Extra attempts after a transport failure.
pub const MAX_RETRIES: usize = 2;

/// Class probabilities for one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p_no_tumor: f64,
    pub p_tumor: f64,
}

impl Prediction {
    /// Validates range and normalization (`p0 + p1 = 1` within 1e-6).
    pub fn new(p_no_tumor: f64, p_tumor: f64) -> Result<Self> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(p_no_tumor) || !ok(p_tumor) || (p_no_tumor + p_tumor - 1.0).abs() > wire::PROB_SUM_TOLERANCE {
            return Err(Error::ProtocolViolation(format!(
                "invalid probability pair [{p_no_tumor}, {p_tumor}]"
            )));
        }
        Ok(Self { p_no_tumor, p_tumor })
    }

    pub fn from_tumor_probability(p_tumor: f64) -> Self {
        let p_tumor = p_tumor.clamp(0.0, 1.0);
        Self {
            p_no_tumor: 1.0 - p_tumor,
            p_tumor,
        }
    }

    /// Probability of `class` (0 = no tumor, 1 = tumor).
    pub fn probability(&self, class: u8) -> f64 {
        if class == 0 {
            self.p_no_tumor
        } else {
            self.p_tumor
        }
    }

    /// Arg-max decision; ties go to class 0.
    pub fn decision(&self) -> u8 {
        u8::from(self.p_tumor > self.p_no_tumor)
    }
}

/// A batch classifier. Implementations must return one prediction per input,
/// in order.
pub trait Predictor: Send + Sync {
    fn predict(&self, images: &[GrayImage]) -> Result<Vec<Prediction>>;
}

impl<F> Predictor for F
where
    F: Fn(&GrayImage) -> Prediction + Send + Sync,
{
    fn predict(&self, images: &[GrayImage]) -> Result<Vec<Prediction>> {
        Ok(images.iter().map(self).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PredictorKind {
    BuiltinBlob,
    ExternalProcess(String),
    ExternalHttp(String),
    Custom,
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorKind::BuiltinBlob => write!(f, "builtin"),
            PredictorKind::ExternalProcess(cmd) => write!(f, "exec:{cmd}"),
            PredictorKind::ExternalHttp(url) => write!(f, "http:{url}"),
            PredictorKind::Custom => write!(f, "custom"),
        }
    }
}

pub struct PredictorHandle {
    kind: PredictorKind,
    backend: Box<dyn Predictor>,
    batch_limit: usize,
}

impl fmt::Debug for PredictorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PredictorHandle")
            .field("kind", &self.kind)
            .field("batch_limit", &self.batch_limit)
            .finish()
    }
}

impl PredictorHandle {
    pub fn builtin() -> Self {
        Self {
            kind: PredictorKind::BuiltinBlob,
            backend: Box::new(BlobPredictor),
            batch_limit: 64,
        }
    }

    pub fn process(command: &str) -> Self {
        Self {
            kind: PredictorKind::ExternalProcess(command.to_string()),
            backend: Box::new(ProcessPredictor::new(command)),
            batch_limit: 32,
        }
    }

    pub fn http(url: &str) -> Self {
        let backend = HttpPredictor::new(url);
        Self {
            kind: PredictorKind::ExternalHttp(backend.url().to_string()),
            backend: Box::new(backend),
            batch_limit: 32,
        }
    }

    pub fn custom(backend: impl Predictor + 'static) -> Self {
        Self {
            kind: PredictorKind::Custom,
            backend: Box::new(backend),
            batch_limit: 64,
        }
    }

    /// Parses `builtin`, `exec:<command>` or `http:<url>` (a bare
    /// `http://...` URL is accepted too).
    pub fn from_spec(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec == "builtin" {
            Ok(Self::builtin())
        } else if let Some(cmd) = spec.strip_prefix("exec:") {
            if cmd.trim().is_empty() {
                return Err(Error::InvalidParameter("empty exec command".into()));
            }
            Ok(Self::process(cmd))
        } else if spec.starts_with("http://") || spec.starts_with("https://") {
            Ok(Self::http(spec))
        } else if let Some(url) = spec.strip_prefix("http:") {
            Ok(Self::http(url))
        } else {
            Err(Error::InvalidParameter(format!(
                "unknown predictor {spec:?}; expected builtin, exec:CMD or http:URL"
            )))
        }
    }

    pub fn with_batch_limit(mut self, batch_limit: usize) -> Result<Self> {
        if batch_limit == 0 {
            return Err(Error::InvalidParameter("batch_limit must be at least 1".into()));
        }
        self.batch_limit = batch_limit;
        Ok(self)
    }

    pub fn kind(&self) -> &PredictorKind {
        &self.kind
    }

    pub fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    /// One prediction per image, in order. Inputs are sent in sub-batches of
    /// at most `batch_limit`; any failing sub-batch fails the whole call.
    pub fn predict_batch(&self, images: &[GrayImage]) -> Result<Vec<Prediction>> {
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().find(|i| i.dims() != first.dims()) {
                return Err(Error::ShapeMismatch(format!(
                    "batch mixes {:?} and {:?} images",
                    first.dims(),
                    bad.dims()
                )));
            }
        }
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.batch_limit) {
            let preds = self.backend.predict(chunk)?;
            if preds.len() != chunk.len() {
                return Err(Error::ProtocolViolation(format!(
                    "{} predictions for {} images",
                    preds.len(),
                    chunk.len()
                )));
            }
            for p in &preds {
                Prediction::new(p.p_no_tumor, p.p_tumor)?;
            }
            out.extend(preds);
        }
        Ok(out)
    }
}
