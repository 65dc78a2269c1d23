//! Client for classifiers served over the JSON prediction protocol.
//!
//! `POST /predict` takes `{"instances": [{"tokens": [...], "segment_ids": [...]}]}`
//! and answers `{"probs": [[...], ...]}` with rows in request order.
//! `GET /health` answers `{"status": "ok", "num_classes": N}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Classifier, Prediction, TokenSequence, DEFAULT_BATCH_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireInstance {
    pub tokens: Vec<String>,
    pub segment_ids: Vec<u8>,
}

impl From<&TokenSequence> for WireInstance {
    fn from(s: &TokenSequence) -> Self {
        Self {
            tokens: s.tokens().to_vec(),
            segment_ids: s.segment_ids().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub instances: Vec<WireInstance>,
}

impl PredictRequest {
    pub fn from_sequences(sequences: &[TokenSequence]) -> Self {
        Self {
            instances: sequences.iter().map(WireInstance::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub probs: Vec<Vec<f64>>,
}

impl PredictResponse {
    /// Checks row count and width, then validates each row.
    pub fn into_predictions(
        self,
        expected_rows: usize,
        num_classes: usize,
        raw: &str,
    ) -> Result<Vec<Prediction>> {
        let protocol = |message: String| Error::Protocol {
            message,
            payload: raw.to_owned(),
        };
        if self.probs.len() != expected_rows {
            return Err(protocol(format!(
                "expected {expected_rows} rows, got {}",
                self.probs.len()
            )));
        }
        self.probs
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != num_classes {
                    return Err(protocol(format!(
                        "row {i} has {} classes, expected {num_classes}",
                        row.len()
                    )));
                }
                Prediction::from_probs(row).map_err(|e| protocol(format!("row {i}: {e}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub num_classes: usize,
}

/// Remote classifier speaking the prediction protocol over HTTP.
#[derive(Debug)]
pub struct HttpClassifier {
    base_url: String,
    num_classes: usize,
    batch_size: usize,
    client: reqwest::blocking::Client,
}

impl HttpClassifier {
    /// Connects and reads the class count from `/health`.
    pub fn connect(url: &str) -> Result<Self> {
        Self::connect_with_timeout(url, Duration::from_secs(60))
    }

    pub fn connect_with_timeout(url: &str, timeout: Duration) -> Result<Self> {
        let base_url = url.trim_end_matches('/').to_owned();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport {
                url: base_url.clone(),
                message: e.to_string(),
                payload: String::new(),
            })?;
        let mut this = Self {
            base_url,
            num_classes: 0,
            batch_size: DEFAULT_BATCH_SIZE,
            client,
        };
        this.num_classes = this.health()?.num_classes;
        if this.num_classes < 2 {
            return Err(Error::Protocol {
                message: format!("health reports {} classes", this.num_classes),
                payload: String::new(),
            });
        }
        Ok(this)
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn health(&self) -> Result<HealthResponse> {
        let url = format!("{}/health", self.base_url);
        let body = self.exchange(self.client.get(&url), &url, "")?;
        let health: HealthResponse = serde_json::from_str(&body).map_err(|e| Error::Protocol {
            message: format!("malformed /health response: {e}"),
            payload: body.clone(),
        })?;
        if health.status != "ok" {
            return Err(Error::Protocol {
                message: format!("model reports status {:?}", health.status),
                payload: body,
            });
        }
        Ok(health)
    }

    fn exchange(
        &self,
        request: reqwest::blocking::RequestBuilder,
        url: &str,
        payload: &str,
    ) -> Result<String> {
        let transport = |message: String| Error::Transport {
            url: url.to_owned(),
            message,
            payload: payload.to_owned(),
        };
        let response = request.send().map_err(|e| transport(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Protocol {
                message: format!("{url} answered {status}"),
                payload: body,
            });
        }
        Ok(body)
    }

    fn predict_chunk(&self, sequences: &[TokenSequence]) -> Result<Vec<Prediction>> {
        let url = format!("{}/predict", self.base_url);
        let payload = serde_json::to_string(&PredictRequest::from_sequences(sequences))?;
        let request = self
            .client
            .post(&url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(payload.clone());
        let body = self.exchange(request, &url, &payload)?;
        let response: PredictResponse =
            serde_json::from_str(&body).map_err(|e| Error::Protocol {
                message: format!("malformed /predict response: {e}"),
                payload: body.clone(),
            })?;
        response.into_predictions(sequences.len(), self.num_classes, &body)
    }
}

impl Classifier for HttpClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_batch(&self, sequences: &[TokenSequence]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(sequences.len());
        for chunk in sequences.chunks(self.batch_size) {
            out.extend(self.predict_chunk(chunk)?);
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        format!("http({})", self.base_url)
    }
}
