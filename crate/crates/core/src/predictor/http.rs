use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::imagecore::GrayImage;

use super::wire::{parse_response, PredictRequest};
use super::{Prediction, Predictor, MAX_RETRIES};

/// POSTs batches to `<base>/predict`.
pub struct HttpPredictor {
    url: String,
    agent: ureq::Agent,
    next_id: AtomicU64,
}

impl HttpPredictor {
    /// `url` may be the server root or the full `/predict` endpoint.
    pub fn new(url: &str) -> Self {
        let trimmed = url.trim_end_matches('/');
        let url = if trimmed.ends_with("/predict") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/predict")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Self {
            url,
            agent,
            next_id: AtomicU64::new(0),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Predictor for HttpPredictor {
    fn predict(&self, images: &[GrayImage]) -> Result<Vec<Prediction>> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed).to_string();
        let body = serde_json::to_string(&PredictRequest::encode(id.clone(), images)?).expect("request serializes");
        let mut last_err = String::new();
        for _ in 0..=MAX_RETRIES {
            let sent = self
                .agent
                .post(&self.url)
                .header("Content-Type", "application/json")
                .send(body.as_str());
            match sent {
                Ok(mut resp) => match resp.body_mut().read_to_string() {
                    Ok(text) => return parse_response(&text, &id, images.len()),
                    Err(e) => last_err = e.to_string(),
                },
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::PredictorUnavailable(format!(
            "{} failed after {} attempts: {last_err}",
            self.url,
            MAX_RETRIES + 1
        )))
    }
}
