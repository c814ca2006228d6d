use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_items, check_topk, sort_topk, truncate_words, ScoreItem, ScoreResult, Scorer, ScorerError, TopKItem};

/// On-disk probability table.
///
/// `priors` maps full texts to their probability from an empty prefix;
/// `conditionals` maps a prefix to continuation probabilities. When a
/// conditional entry is missing but both `prefix` and `prefix‖continuation`
/// have priors, the conditional is their ratio, so a table built from a
/// consistent joint obeys the chain rule. Anything else unlisted has
/// probability zero. If `alphabet` is present, continuations using any other
/// character are out of vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableFile {
    #[serde(default)]
    pub priors: BTreeMap<String, f64>,
    #[serde(default)]
    pub conditionals: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphabet: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TableScorer {
    table: TableFile,
    name: String,
}

impl TableScorer {
    pub fn new(table: TableFile) -> Result<Self, ScorerError> {
        let bad = |p: f64| !(0.0..=1.0).contains(&p);
        if let Some((text, p)) = table.priors.iter().find(|(_, p)| bad(**p)) {
            return Err(ScorerError::Table(format!("prior of {text:?} is {p}, outside [0, 1]")));
        }
        for (prefix, row) in &table.conditionals {
            if let Some((cont, p)) = row.iter().find(|(_, p)| bad(**p)) {
                return Err(ScorerError::Table(format!(
                    "P({cont:?} | {prefix:?}) is {p}, outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            table,
            name: "table".into(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ScorerError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ScorerError::Table(format!("{}: {e}", path.display())))?;
        let table: TableFile =
            serde_json::from_str(&text).map_err(|e| ScorerError::Table(format!("{}: {e}", path.display())))?;
        let mut scorer = Self::new(table)?;
        scorer.name = format!("table:{}", path.display());
        Ok(scorer)
    }

    pub fn table(&self) -> &TableFile {
        &self.table
    }

    fn in_vocabulary(&self, text: &str) -> bool {
        match &self.table.alphabet {
            None => true,
            Some(alphabet) => text.chars().all(|c| c.is_whitespace() || alphabet.contains(c)),
        }
    }

    /// Linear conditional probability per the lookup rules above.
    pub fn probability(&self, prefix: &str, continuation: &str) -> f64 {
        if prefix.is_empty() {
            return self.table.priors.get(continuation).copied().unwrap_or(0.0);
        }
        if let Some(p) = self.table.conditionals.get(prefix).and_then(|row| row.get(continuation)) {
            return *p;
        }
        let joint = self.table.priors.get(&format!("{prefix}{continuation}"));
        match (self.table.priors.get(prefix), joint) {
            (Some(&pp), Some(&pj)) if pp > 0.0 => (pj / pp).min(1.0),
            _ => 0.0,
        }
    }
}

impl Scorer for TableScorer {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn score_conditional_batch(&self, items: &[ScoreItem]) -> Result<Vec<ScoreResult>, ScorerError> {
        check_items(items)?;
        Ok(items
            .iter()
            .map(|item| {
                if self.in_vocabulary(&item.continuation) {
                    ScoreResult::logprob(self.probability(&item.prefix, &item.continuation).ln())
                } else {
                    ScoreResult::oov()
                }
            })
            .collect())
    }

    fn topk_continuations(&self, prefix: &str, k: usize, max_tokens: usize) -> Result<Vec<TopKItem>, ScorerError> {
        check_topk(k, max_tokens)?;
        let row: Box<dyn Iterator<Item = (&String, &f64)>> = if prefix.is_empty() {
            Box::new(self.table.priors.iter())
        } else {
            match self.table.conditionals.get(prefix) {
                Some(row) => Box::new(row.iter()),
                None => return Ok(Vec::new()),
            }
        };
        // Truncated continuations that coincide share their probability mass.
        let mut merged: BTreeMap<&str, f64> = BTreeMap::new();
        for (cont, &p) in row {
            if p > 0.0 {
                *merged.entry(truncate_words(cont, max_tokens)).or_default() += p;
            }
        }
        let mut items: Vec<TopKItem> = merged
            .into_iter()
            .map(|(text, p)| TopKItem {
                text: text.to_string(),
                logprob: p.ln(),
            })
            .collect();
        sort_topk(&mut items);
        items.truncate(k);
        Ok(items)
    }
}
