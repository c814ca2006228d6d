//! Reference probing methods adapted to left-to-right models: LAMA@k,
//! K-Prompts and ParaRel-style Consistent-Acc.
//!
//! All of them use one canonical surface form per entity: the first catalog
//! alias of the subject, and (for the LAMA variants) the relation's first
//! template.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts::{continuation_for, fill_template, render_beta};
use crate::report::{FactRecord, Method, SuiteReport};
use crate::runner::{run_facts, RunOptions};
use crate::scorer::{ScoreItem, Scorer};
use crate::seeding;
use crate::suite::{Entity, Fact, KnowledgeSuite, RelationTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineVerdict {
    pub fact: Fact,
    pub method: Method,
    pub known: bool,
    /// Mean probability for K-Prompts; `None` for the boolean methods.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub max_tokens: usize,
    pub kprompts_k: usize,
    pub kprompts_threshold: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            max_tokens: 8,
            kprompts_k: 4,
            kprompts_threshold: 0.13,
            seed: 0,
        }
    }
}

/// Case-insensitive containment of `needle` in `haystack` delimited by
/// non-alphanumeric characters (so "art" does not match "Stuttgart").
pub fn contains_whole_word(haystack: &str, needle: &str) -> bool {
    let hay = haystack.to_lowercase();
    let needle = needle.to_lowercase();
    if needle.is_empty() {
        return false;
    }
    let mut start = 0;
    while let Some(pos) = hay[start..].find(&needle) {
        let at = start + pos;
        let end = at + needle.len();
        let before_ok = hay[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = hay[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        start = at + hay[at..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

fn mentions_object(text: &str, object: &Entity) -> bool {
    object.aliases.iter().any(|alias| contains_whole_word(text, alias))
}

fn top_k_mentions(
    scorer: &dyn Scorer,
    prefix: &str,
    object: &Entity,
    k: usize,
    max_tokens: usize,
) -> Result<bool> {
    let generations = scorer.topk_continuations(prefix, k, max_tokens)?;
    Ok(generations.iter().any(|g| mentions_object(&g.text, object)))
}

/// Known when any of the top-`k` generations for the primary prompt names
/// the object.
pub fn lama_at_k(
    fact: &Fact,
    template: &RelationTemplate,
    suite: &KnowledgeSuite,
    scorer: &dyn Scorer,
    k: usize,
    max_tokens: usize,
) -> Result<BaselineVerdict> {
    let subject = suite.entity(&fact.subject)?;
    let object = suite.entity(&fact.object)?;
    let prefix = fill_template(&template.text, subject.primary_alias());
    let known = top_k_mentions(scorer, &prefix, object, k, max_tokens)?;
    Ok(BaselineVerdict {
        fact: fact.clone(),
        method: if k == 1 { Method::Lama1 } else { Method::Lama10 },
        known,
        score: None,
    })
}

fn primary_template<'a>(suite: &'a KnowledgeSuite, fact: &Fact) -> Result<&'a RelationTemplate> {
    suite
        .relation(&fact.relation)?
        .primary_template()
        .ok_or_else(|| Error::NoTemplates(fact.relation.to_string()))
}

/// Mean over `k` sampled prompts of the best object-alias probability.
/// With `k >= |prompts|` every prompt is used and the seed is irrelevant.
pub fn kprompts(
    fact: &Fact,
    suite: &KnowledgeSuite,
    scorer: &dyn Scorer,
    k: usize,
    seed: u64,
    threshold: f64,
) -> Result<BaselineVerdict> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let beta = render_beta(suite, &fact.subject, &fact.relation)?;
    let chosen: Vec<usize> = if k >= beta.len() {
        (0..beta.len()).collect()
    } else {
        let mut rng = seeding::rng_for(
            seed,
            &["kprompts", fact.subject.as_str(), fact.relation.as_str(), fact.object.as_str()],
        );
        let mut picked = index::sample(&mut rng, beta.len(), k).into_vec();
        picked.sort_unstable();
        picked
    };
    let aliases = &suite.entity(&fact.object)?.aliases;
    let items: Vec<ScoreItem> = chosen
        .iter()
        .flat_map(|&i| {
            let prefix = &beta[i].text;
            aliases
                .iter()
                .map(move |a| ScoreItem::new(prefix.clone(), continuation_for(prefix, a)))
        })
        .collect();
    let results = scorer.score_conditional_batch(&items)?;
    let total: f64 = results
        .chunks(aliases.len())
        .map(|chunk| {
            chunk
                .iter()
                .filter_map(|r| r.value())
                .map(f64::exp)
                .fold(0.0, f64::max)
        })
        .sum();
    let score = total / chosen.len() as f64;
    Ok(BaselineVerdict {
        fact: fact.clone(),
        method: Method::Kprompts,
        known: score > threshold,
        score: Some(score),
    })
}

/// Known only when the top-1 generation names the object for every template.
pub fn consistent_acc(
    fact: &Fact,
    suite: &KnowledgeSuite,
    scorer: &dyn Scorer,
    max_tokens: usize,
) -> Result<BaselineVerdict> {
    let subject = suite.entity(&fact.subject)?;
    let object = suite.entity(&fact.object)?;
    let relation = suite.relation(&fact.relation)?;
    let mut known = !relation.templates.is_empty();
    for template in &relation.templates {
        let prefix = fill_template(&template.text, subject.primary_alias());
        if !top_k_mentions(scorer, &prefix, object, 1, max_tokens)? {
            known = false;
            break;
        }
    }
    Ok(BaselineVerdict {
        fact: fact.clone(),
        method: Method::ConsistentAcc,
        known,
        score: None,
    })
}

/// Runs one baseline over a fact list.
pub fn baseline_verdict(
    method: Method,
    fact: &Fact,
    suite: &KnowledgeSuite,
    scorer: &dyn Scorer,
    config: &BaselineConfig,
) -> Result<BaselineVerdict> {
    match method {
        Method::Lama1 => lama_at_k(fact, primary_template(suite, fact)?, suite, scorer, 1, config.max_tokens),
        Method::Lama10 => lama_at_k(fact, primary_template(suite, fact)?, suite, scorer, 10, config.max_tokens),
        Method::Kprompts => kprompts(fact, suite, scorer, config.kprompts_k, config.seed, config.kprompts_threshold),
        Method::ConsistentAcc => consistent_acc(fact, suite, scorer, config.max_tokens),
        Method::Karr => Err(Error::Invalid("karr is not a baseline".into())),
    }
}

pub fn assess_baseline(
    method: Method,
    facts: &[Fact],
    suite: &KnowledgeSuite,
    scorer: &dyn Scorer,
    config: &BaselineConfig,
    options: &RunOptions,
) -> Result<SuiteReport> {
    if facts.is_empty() {
        return Err(Error::Invalid("at least one fact required".into()));
    }
    let records = run_facts(facts, method, options, |fact| {
        baseline_verdict(method, fact, suite, scorer, config).map(FactRecord::from_verdict)
    })?;
    let echo = serde_json::json!({ "baseline": config });
    Ok(SuiteReport::build(method, scorer.name(), records, echo))
}
