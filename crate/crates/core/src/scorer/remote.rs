use std::sync::OnceLock;
use std::thread;
use std::time::Duration;

use log::warn;
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;

use super::protocol::{ErrorBody, InfoResponse, ScoreRequest, ScoreResponse, TopkRequest, TopkResponse};
use super::{check_items, check_topk, sort_topk, ScoreItem, ScoreResult, Scorer, ScorerError, TopKItem};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub batch_size: usize,
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
    pub bearer_token: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            batch_size: 64,
            attempts: 3,
            initial_backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
            bearer_token: None,
        }
    }
}

/// HTTP client for the scoring protocol. Large batches are split into
/// requests of `batch_size` items; results are re-assembled positionally.
pub struct RemoteScorer {
    config: RemoteConfig,
    client: Client,
    info: OnceLock<InfoResponse>,
}

enum Failure {
    Retryable(String),
    Fatal(ScorerError),
}

impl RemoteScorer {
    pub fn new(config: RemoteConfig) -> Result<Self, ScorerError> {
        if config.batch_size == 0 || config.attempts == 0 {
            return Err(ScorerError::InvalidRequest("batch size and attempts must be at least 1".into()));
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ScorerError::Backend(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            config,
            client,
            info: OnceLock::new(),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn authorize(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.config.bearer_token {
            Some(token) => req.bearer_auth(token),
            None => req,
        }
    }

    fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, Failure> {
        let status = resp.status();
        if status == StatusCode::OK {
            return resp
                .json::<T>()
                .map_err(|e| Failure::Fatal(ScorerError::Protocol(format!("malformed response body: {e}"))));
        }
        let message = resp
            .json::<ErrorBody>()
            .map(|b| b.error)
            .unwrap_or_else(|_| status.to_string());
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            Err(Failure::Retryable(format!("HTTP {status}: {message}")))
        } else if status == StatusCode::NOT_FOUND {
            Err(Failure::Fatal(ScorerError::Unsupported("this endpoint")))
        } else {
            Err(Failure::Fatal(ScorerError::Backend(format!("HTTP {status}: {message}"))))
        }
    }

    /// Sends with retries on transport failures only; scoring is idempotent.
    fn call<T: DeserializeOwned>(&self, build: impl Fn() -> RequestBuilder) -> Result<T, ScorerError> {
        let mut backoff = self.config.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.config.attempts {
            let outcome = match self.authorize(build()).send() {
                Ok(resp) => Self::decode(resp),
                Err(e) => Err(Failure::Retryable(e.to_string())),
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    warn!("scorer request attempt {attempt}/{} failed: {msg}", self.config.attempts);
                    last = msg;
                    if attempt < self.config.attempts {
                        thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(ScorerError::Transport {
            message: last,
            attempts: self.config.attempts,
        })
    }

    pub fn info(&self) -> Result<&InfoResponse, ScorerError> {
        if let Some(info) = self.info.get() {
            return Ok(info);
        }
        let info: InfoResponse = self.call(|| self.client.get(self.url("/v1/info")))?;
        Ok(self.info.get_or_init(|| info))
    }

    fn score_chunk(&self, items: &[ScoreItem]) -> Result<Vec<ScoreResult>, ScorerError> {
        let body = ScoreRequest { items: items.to_vec() };
        let resp: ScoreResponse = self.call(|| self.client.post(self.url("/v1/score")).json(&body))?;
        if resp.results.len() != items.len() {
            return Err(ScorerError::Protocol(format!(
                "sent {} items, received {} results",
                items.len(),
                resp.results.len()
            )));
        }
        Ok(resp.results.into_iter().map(Into::into).collect())
    }
}

impl Scorer for RemoteScorer {
    fn name(&self) -> String {
        match self.info.get() {
            Some(info) => format!("remote:{}", info.model_name),
            None => format!("remote:{}", self.config.base_url),
        }
    }

    fn score_conditional_batch(&self, items: &[ScoreItem]) -> Result<Vec<ScoreResult>, ScorerError> {
        check_items(items)?;
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.config.batch_size) {
            out.extend(self.score_chunk(chunk)?);
        }
        Ok(out)
    }

    fn topk_continuations(&self, prefix: &str, k: usize, max_tokens: usize) -> Result<Vec<TopKItem>, ScorerError> {
        check_topk(k, max_tokens)?;
        if !self.info()?.capabilities.iter().any(|c| c == "topk") {
            return Err(ScorerError::Unsupported("topk"));
        }
        let body = TopkRequest {
            prefix: prefix.to_string(),
            k,
            max_tokens,
        };
        let resp: TopkResponse = self.call(|| self.client.post(self.url("/v1/topk")).json(&body))?;
        let mut items = resp.items;
        sort_topk(&mut items);
        items.truncate(k);
        Ok(items)
    }
}
