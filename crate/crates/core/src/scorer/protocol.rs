//! JSON bodies of the HTTP scoring protocol.
//!
//! `POST /v1/score`, `POST /v1/topk` and `GET /v1/info`; failures are non-200
//! responses carrying an [`ErrorBody`]. OOV is reported in-band, never as an
//! error.

use serde::{Deserialize, Serialize};

use super::{ScoreItem, ScoreResult, TopKItem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub items: Vec<ScoreItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResult {
    /// `null` encodes a zero probability (or is ignored when `oov`).
    pub logprob: Option<f64>,
    pub oov: bool,
}

impl From<ScoreResult> for WireResult {
    fn from(r: ScoreResult) -> Self {
        let logprob = if r.oov || !r.logprob.is_finite() {
            None
        } else {
            Some(r.logprob)
        };
        Self { logprob, oov: r.oov }
    }
}

impl From<WireResult> for ScoreResult {
    fn from(w: WireResult) -> Self {
        if w.oov {
            ScoreResult::oov()
        } else {
            ScoreResult::logprob(w.logprob.unwrap_or(f64::NEG_INFINITY))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub results: Vec<WireResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkRequest {
    pub prefix: String,
    pub k: usize,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkResponse {
    pub items: Vec<TopKItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub model_name: String,
    pub capabilities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
