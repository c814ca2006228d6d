//! Language-model scoring backends.
//!
//! Everything the engine knows about a model comes through [`Scorer`]:
//! conditional log-probabilities of continuations, unconditional text
//! log-probabilities, and top-k continuations. Log-probabilities are natural
//! logs; a zero probability is `f64::NEG_INFINITY`.

mod protocol;
mod remote;
mod table;
mod uniform;

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use protocol::{ErrorBody, InfoResponse, ScoreRequest, ScoreResponse, TopkRequest, TopkResponse, WireResult};
pub use remote::{RemoteConfig, RemoteScorer};
pub use table::{TableFile, TableScorer};
pub use uniform::UniformScorer;

use crate::suite::KnowledgeSuite;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub prefix: String,
    pub continuation: String,
}

impl ScoreItem {
    pub fn new(prefix: impl Into<String>, continuation: impl Into<String>) -> Self {
        Self {
            prefix: prefix.into(),
            continuation: continuation.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreResult {
    /// Ignored when `oov` is set.
    pub logprob: f64,
    pub oov: bool,
}

impl ScoreResult {
    pub fn logprob(logprob: f64) -> Self {
        Self { logprob, oov: false }
    }

    pub fn oov() -> Self {
        Self {
            logprob: f64::NAN,
            oov: true,
        }
    }

    /// The log-probability if the item was scorable.
    pub fn value(&self) -> Option<f64> {
        (!self.oov).then_some(self.logprob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKItem {
    pub text: String,
    pub logprob: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("scorer transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },

    #[error("scorer protocol violation: {0}")]
    Protocol(String),

    #[error("scorer backend error: {0}")]
    Backend(String),

    #[error("scorer does not support {0}")]
    Unsupported(&'static str),

    #[error("invalid scorer request: {0}")]
    InvalidRequest(String),

    #[error("invalid scorer table: {0}")]
    Table(String),
}

impl ScorerError {
    pub fn is_transport(&self) -> bool {
        matches!(self, ScorerError::Transport { .. })
    }
}

pub trait Scorer: Send + Sync {
    fn name(&self) -> String;

    /// `result[i]` scores `items[i]`: log P(continuation | prefix).
    fn score_conditional_batch(&self, items: &[ScoreItem]) -> Result<Vec<ScoreResult>, ScorerError>;

    /// Log-probability of `text` from an empty prefix.
    fn score_unconditional(&self, text: &str) -> Result<ScoreResult, ScorerError> {
        if text.is_empty() {
            return Err(ScorerError::InvalidRequest("text must be non-empty".into()));
        }
        let mut out = self.score_conditional_batch(&[ScoreItem::new("", text)])?;
        out.pop()
            .ok_or_else(|| ScorerError::Protocol("empty result for single item".into()))
    }

    /// Up to `k` highest-probability continuations of at most `max_tokens`
    /// tokens, sorted by descending log-probability.
    fn topk_continuations(&self, prefix: &str, k: usize, max_tokens: usize) -> Result<Vec<TopKItem>, ScorerError>;
}

pub(crate) fn check_items(items: &[ScoreItem]) -> Result<(), ScorerError> {
    match items.iter().position(|it| it.continuation.is_empty()) {
        Some(i) => Err(ScorerError::InvalidRequest(format!("item {i} has an empty continuation"))),
        None => Ok(()),
    }
}

pub(crate) fn check_topk(k: usize, max_tokens: usize) -> Result<(), ScorerError> {
    if k == 0 || max_tokens == 0 {
        return Err(ScorerError::InvalidRequest("k and max_tokens must be at least 1".into()));
    }
    Ok(())
}

/// Orders top-k candidates: descending log-probability, then text for ties.
pub(crate) fn sort_topk(items: &mut [TopKItem]) {
    items.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then_with(|| a.text.cmp(&b.text)));
}

/// Keeps the first `max_tokens` whitespace-delimited words of `text`,
/// including any leading whitespace.
pub(crate) fn truncate_words(text: &str, max_tokens: usize) -> &str {
    let mut words = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                words += 1;
                in_word = false;
                if words == max_tokens {
                    return &text[..i];
                }
            }
        } else {
            in_word = true;
        }
    }
    text
}

/// Scorer selection as written on the command line: `table:PATH`,
/// `remote:URL` or `uniform`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScorerSpec {
    Table(PathBuf),
    Remote(String),
    Uniform,
}

impl FromStr for ScorerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "uniform" {
            Ok(ScorerSpec::Uniform)
        } else if let Some(path) = s.strip_prefix("table:").filter(|p| !p.is_empty()) {
            Ok(ScorerSpec::Table(PathBuf::from(path)))
        } else if let Some(url) = s.strip_prefix("remote:").filter(|u| !u.is_empty()) {
            Ok(ScorerSpec::Remote(url.to_string()))
        } else {
            Err(format!("invalid scorer {s:?}; expected table:PATH, remote:URL or uniform"))
        }
    }
}

impl TryFrom<String> for ScorerSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ScorerSpec> for String {
    fn from(spec: ScorerSpec) -> String {
        match spec {
            ScorerSpec::Table(p) => format!("table:{}", p.display()),
            ScorerSpec::Remote(u) => format!("remote:{u}"),
            ScorerSpec::Uniform => "uniform".into(),
        }
    }
}

impl ScorerSpec {
    /// Instantiates the backend. The uniform scorer takes its continuation
    /// vocabulary from the suite's aliases.
    pub fn build(
        &self,
        suite: &KnowledgeSuite,
        bearer_token: Option<String>,
        timeout: Duration,
    ) -> Result<Box<dyn Scorer>, ScorerError> {
        Ok(match self {
            ScorerSpec::Table(path) => Box::new(TableScorer::from_path(path)?),
            ScorerSpec::Remote(url) => Box::new(RemoteScorer::new(RemoteConfig {
                base_url: url.clone(),
                bearer_token,
                timeout,
                ..RemoteConfig::default()
            })?),
            ScorerSpec::Uniform => Box::new(UniformScorer::from_suite(suite)),
        })
    }
}
