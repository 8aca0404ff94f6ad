//! JSON body shared by the stdio and HTTP predictor transports.
//!
//! ```text
//! request:  {"id": "<string>", "images": ["<base64 PNG>", ...]}
//! response: {"id": "<string>", "probs": [[p0, p1], ...]}
//! ```
//!
//! Over stdio each message is a single line.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{decode_gray, GrayImage};

use super::{Prediction, Predictor};

/// Tolerance on `p0 + p1 = 1`.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub id: String,
    pub images: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub id: String,
    pub probs: Vec<[f64; 2]>,
}

impl PredictRequest {
    pub fn encode(id: impl Into<String>, images: &[GrayImage]) -> Result<Self> {
        let images = images
            .iter()
            .map(|img| Ok(STANDARD.encode(img.to_png_bytes()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { id: id.into(), images })
    }

    pub fn decode_images(&self) -> Result<Vec<GrayImage>> {
        self.images
            .iter()
            .map(|b64| {
                let bytes = STANDARD
                    .decode(b64)
                    .map_err(|e| Error::ProtocolViolation(format!("bad base64 image: {e}")))?;
                decode_gray(&bytes)
            })
            .collect()
    }
}

impl PredictResponse {
    pub fn from_predictions(id: impl Into<String>, preds: &[Prediction]) -> Self {
        Self {
            id: id.into(),
            probs: preds.iter().map(|p| [p.p_no_tumor, p.p_tumor]).collect(),
        }
    }

    /// Checks the response against the request it answers.
    pub fn into_predictions(self, expected_id: &str, expected_len: usize) -> Result<Vec<Prediction>> {
        if self.id != expected_id {
            return Err(Error::ProtocolViolation(format!(
                "response id {:?} does not match request id {:?}",
                self.id, expected_id
            )));
        }
        if self.probs.len() != expected_len {
            return Err(Error::ProtocolViolation(format!(
                "{} probability pairs for {} images",
                self.probs.len(),
                expected_len
            )));
        }
        self.probs
            .into_iter()
            .map(|[p0, p1]| Prediction::new(p0, p1))
            .collect()
    }
}

pub fn parse_response(text: &str, expected_id: &str, expected_len: usize) -> Result<Vec<Prediction>> {
    let resp: PredictResponse = serde_json::from_str(text.trim())
        .map_err(|e| Error::ProtocolViolation(format!("malformed response: {e}")))?;
    resp.into_predictions(expected_id, expected_len)
}

/// Server side: answers one request body with `predictor`.
///
/// Failures come back as `{"id": .., "error": ..}`, which clients reject as
/// a protocol violation.
pub fn serve_request(body: &str, predictor: &dyn Predictor) -> String {
    let req: PredictRequest = match serde_json::from_str(body.trim()) {
        Ok(r) => r,
        Err(e) => return serde_json::json!({ "id": "", "error": e.to_string() }).to_string(),
    };
    let result = req.decode_images().and_then(|imgs| predictor.predict(&imgs));
    match result {
        Ok(preds) => serde_json::to_string(&PredictResponse::from_predictions(req.id, &preds))
            .expect("response serializes"),
        Err(e) => serde_json::json!({ "id": req.id, "error": e.to_string() }).to_string(),
    }
}
