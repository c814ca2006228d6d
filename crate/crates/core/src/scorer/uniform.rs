use std::collections::BTreeSet;

use super::{check_items, check_topk, truncate_words, ScoreItem, ScoreResult, Scorer, ScorerError, TopKItem};
use crate::suite::KnowledgeSuite;

/// Gives every vocabulary continuation the same conditional probability
/// after any non-empty prefix, and every text the same prior. Under this
/// scorer no prompt carries information about any object.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    vocabulary: BTreeSet<String>,
    prior: f64,
}

impl UniformScorer {
    pub const DEFAULT_PRIOR: f64 = 1e-3;

    pub fn new(vocabulary: impl IntoIterator<Item = String>) -> Self {
        Self {
            vocabulary: vocabulary.into_iter().map(|w| w.trim().to_string()).collect(),
            prior: Self::DEFAULT_PRIOR,
        }
    }

    /// Vocabulary is every entity alias in the suite.
    pub fn from_suite(suite: &KnowledgeSuite) -> Self {
        Self::new(suite.entities().flat_map(|e| e.aliases.iter().cloned()))
    }

    fn conditional(&self) -> f64 {
        1.0 / self.vocabulary.len().max(1) as f64
    }
}

impl Scorer for UniformScorer {
    fn name(&self) -> String {
        "uniform".into()
    }

    fn score_conditional_batch(&self, items: &[ScoreItem]) -> Result<Vec<ScoreResult>, ScorerError> {
        check_items(items)?;
        Ok(items
            .iter()
            .map(|item| {
                let p = if item.prefix.is_empty() {
                    self.prior
                } else if self.vocabulary.contains(item.continuation.trim()) {
                    self.conditional()
                } else {
                    0.0
                };
                ScoreResult::logprob(p.ln())
            })
            .collect())
    }

    fn topk_continuations(&self, _prefix: &str, k: usize, max_tokens: usize) -> Result<Vec<TopKItem>, ScorerError> {
        check_topk(k, max_tokens)?;
        let logprob = self.conditional().ln();
        let texts: BTreeSet<String> = self
            .vocabulary
            .iter()
            .map(|w| truncate_words(&format!(" {w}"), max_tokens).to_string())
            .collect();
        Ok(texts
            .into_iter()
            .take(k)
            .map(|text| TopKItem { text, logprob })
            .collect())
    }
}
