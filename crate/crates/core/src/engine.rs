//! Risk-ratio knowledge scores for single facts.
//!
//! For a fact `(s, r, o)` the model's probability of producing `o` given both
//! `s` and `r` is estimated by marginalizing over every prompt rendered from
//! the relation templates and subject aliases, weighting each prompt by the
//! model's own prior for it:
//!
//! ```text
//! P(o | s, r) = Σ_k P(β_k) Σ_j P(γ_j | β_k)  /  Σ_k P(β_k)
//! ```
//!
//! where `γ_j` ranges over the in-vocabulary aliases of `o`. The
//! relation-specified ratio divides this by the same quantity computed from
//! bare subject aliases (`P(o | s)`); the subject-specified ratio divides by
//! the mean of `P(o | s_u, r)` over `K` uniformly sampled subjects `s_u`.
//! The final score is the geometric mean of the two ratios.
//!
//! All accumulation is in natural-log space.

use std::collections::BTreeSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{log_mean_exp, log_sum_exp};
use crate::prompts::{continuation_for, render_alpha, render_beta, Prompt};
use crate::scorer::{ScoreItem, Scorer};
use crate::seeding;
use crate::suite::{EntityId, Fact, KnowledgeSuite, RelationId};

/// Which entities the subject-specified denominator samples from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectPool {
    /// Every entity in the catalog.
    #[default]
    Catalog,
    /// Entities that are the subject of at least one fact in the suite.
    FactSubjects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KarrConfig {
    /// Number of sampled subjects (and relations, for the treatment-effect
    /// diagnostic) in the denominators.
    pub k: usize,
    pub seed: u64,
    pub threshold: f64,
    pub ratio_cap: f64,
    pub subject_pool: SubjectPool,
    /// Divide prompt prior log-probabilities by the prompt's word count.
    pub length_normalize: bool,
    /// Also compute the treatment-effect diagnostic for every fact.
    pub with_ate: bool,
}

impl Default for KarrConfig {
    fn default() -> Self {
        Self {
            k: 4,
            seed: 0,
            threshold: 22.0,
            ratio_cap: 1e6,
            subject_pool: SubjectPool::Catalog,
            length_normalize: false,
            with_ate: false,
        }
    }
}

impl KarrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        if !self.ratio_cap.is_finite() || self.ratio_cap <= 0.0 {
            return Err(Error::Invalid("ratio_cap must be positive and finite".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Invalid("threshold must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KarrFlag {
    DegenerateRDenominator,
    DegenerateSDenominator,
    ObjectAllOov,
    Capped,
}

impl KarrFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            KarrFlag::DegenerateRDenominator => "degenerate_r_denominator",
            KarrFlag::DegenerateSDenominator => "degenerate_s_denominator",
            KarrFlag::ObjectAllOov => "object_all_oov",
            KarrFlag::Capped => "capped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KarrResult {
    pub fact: Fact,
    /// `None` only when every object alias is out of vocabulary.
    pub karr_r: Option<f64>,
    pub karr_s: Option<f64>,
    pub karr: Option<f64>,
    /// `ln Σ_k P(β_k) Σ_j P(γ_j | β_k)`; `None` when all object aliases are OOV.
    #[serde(with = "crate::report::opt_log")]
    pub numerator_logprob: Option<f64>,
    pub flags: BTreeSet<KarrFlag>,
    pub sampled_subjects: Vec<EntityId>,
    pub sampled_relations: Vec<RelationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ate: Option<f64>,
}

impl KarrResult {
    /// Strictly above the threshold; facts without a score are unknown.
    pub fn is_known(&self, threshold: f64) -> bool {
        self.karr.is_some_and(|k| k > threshold)
    }
}

/// A ratio after capping, with its uncapped log value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioEstimate {
    pub value: f64,
    pub log_value: f64,
    pub degenerate: bool,
    pub capped: bool,
}

impl RatioEstimate {
    fn from_logs(log_numerator: f64, log_denominator: f64, cap: f64) -> Self {
        if log_denominator == f64::NEG_INFINITY || log_denominator.is_nan() {
            return Self {
                value: cap,
                log_value: f64::INFINITY,
                degenerate: true,
                capped: false,
            };
        }
        let log_value = log_numerator - log_denominator;
        let raw = log_value.exp();
        if raw > cap {
            Self {
                value: cap,
                log_value,
                degenerate: false,
                capped: true,
            }
        } else {
            Self {
                value: raw,
                log_value,
                degenerate: false,
                capped: false,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRatio {
    pub ratio: RatioEstimate,
    pub sampled_subjects: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    /// `P(o | s, r) - mean_u P(o | s, r_u)` in linear probability.
    pub ate: f64,
    /// `ln P(o | s, r) - ln mean_u P(o | s, r_u)`: the ratio counterpart.
    pub log_relation_ratio: f64,
    pub sampled_relations: Vec<RelationId>,
}

/// Marginal of the object over a set of prompts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptMarginal {
    /// `ln Σ_k P(p_k) Σ_j P(alias_j | p_k)` over in-vocabulary aliases.
    pub log_joint: f64,
    /// `ln Σ_k P(p_k)`.
    pub log_prior_mass: f64,
    /// At least one (prompt, alias) pair was in vocabulary.
    pub any_in_vocab: bool,
}

impl PromptMarginal {
    /// `ln P(o | prompts)`: the prior-weighted average of the object's
    /// probability. Zero when the prompts carry no prior mass.
    pub fn log_conditional(&self) -> f64 {
        if self.log_prior_mass == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.log_joint - self.log_prior_mass
        }
    }
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count().max(1)
}

/// Scores every prompt prior and every (prompt, object alias) continuation
/// in one batch and folds them into a [`PromptMarginal`].
pub fn prompt_marginal(
    suite: &KnowledgeSuite,
    scorer: &dyn Scorer,
    prompts: &[Prompt],
    object: &EntityId,
    length_normalize: bool,
) -> Result<PromptMarginal> {
    let aliases = &suite.entity(object)?.aliases;
    let per_prompt = 1 + aliases.len();
    let mut items = Vec::with_capacity(prompts.len() * per_prompt);
    for prompt in prompts {
        items.push(ScoreItem::new("", prompt.text.clone()));
        for alias in aliases {
            items.push(ScoreItem::new(prompt.text.clone(), continuation_for(&prompt.text, alias)));
        }
    }
    let results = if items.is_empty() {
        Vec::new()
    } else {
        scorer.score_conditional_batch(&items)?
    };
    if results.len() != items.len() {
        return Err(crate::scorer::ScorerError::Protocol(format!(
            "expected {} results, got {}",
            items.len(),
            results.len()
        ))
        .into());
    }

    let mut any_in_vocab = false;
    let mut priors = Vec::with_capacity(prompts.len());
    let mut terms = Vec::with_capacity(prompts.len());
    for (prompt, chunk) in prompts.iter().zip(results.chunks(per_prompt)) {
        // An OOV prompt has no usable prior; it drops out of both sums.
        let Some(mut prior) = chunk[0].value() else {
            continue;
        };
        if length_normalize {
            prior /= word_count(&prompt.text) as f64;
        }
        let in_vocab: Vec<f64> = chunk[1..].iter().filter_map(|r| r.value()).collect();
        any_in_vocab |= !in_vocab.is_empty();
        priors.push(prior);
        terms.push(prior + log_sum_exp(in_vocab));
    }
    Ok(PromptMarginal {
        log_joint: log_sum_exp(terms),
        log_prior_mass: log_sum_exp(priors),
        any_in_vocab,
    })
}

fn subject_relation_marginal(
    suite: &KnowledgeSuite,
    scorer: &dyn Scorer,
    subject: &EntityId,
    relation: &RelationId,
    object: &EntityId,
    length_normalize: bool,
) -> Result<PromptMarginal> {
    let beta = render_beta(suite, subject, relation)?;
    prompt_marginal(suite, scorer, &beta, object, length_normalize)
}

/// `ln Σ_k P(β_k) Σ_j P(γ_j | β_k)` for the fact, excluding OOV object aliases.
pub fn fact_numerator(fact: &Fact, suite: &KnowledgeSuite, scorer: &dyn Scorer) -> Result<f64> {
    let m = subject_relation_marginal(suite, scorer, &fact.subject, &fact.relation, &fact.object, false)?;
    if !m.any_in_vocab {
        return Err(Error::ObjectAllOov(fact.object.to_string()));
    }
    Ok(m.log_joint)
}

fn checked_numerator(fact: &Fact, suite: &KnowledgeSuite, scorer: &dyn Scorer, config: &KarrConfig) -> Result<PromptMarginal> {
    let m = subject_relation_marginal(
        suite,
        scorer,
        &fact.subject,
        &fact.relation,
        &fact.object,
        config.length_normalize,
    )?;
    if !m.any_in_vocab {
        return Err(Error::ObjectAllOov(fact.object.to_string()));
    }
    Ok(m)
}

/// Picks `min(k, pool)` members uniformly without replacement, returned in
/// pool order. When `k` covers the pool the whole pool is used.
fn sample_pool<'a, T>(pool: &[&'a T], k: usize, seed: u64, parts: &[&str]) -> Vec<&'a T> {
    if k >= pool.len() {
        return pool.to_vec();
    }
    let mut rng = seeding::rng_for(seed, parts);
    let mut picked = index::sample(&mut rng, pool.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i]).collect()
}

fn subject_pool(suite: &KnowledgeSuite, pool: SubjectPool) -> Vec<&EntityId> {
    match pool {
        SubjectPool::Catalog => suite.entity_ids(),
        SubjectPool::FactSubjects => suite.subject_ids(),
    }
}

fn relation_ratio(fact: &Fact, suite: &KnowledgeSuite, scorer: &dyn Scorer, config: &KarrConfig, numerator: &PromptMarginal) -> Result<RatioEstimate> {
    let alpha = render_alpha(suite, &fact.subject)?;
    let denom = prompt_marginal(suite, scorer, &alpha, &fact.object, config.length_normalize)?;
    let log_denominator = if denom.log_prior_mass == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        denom.log_conditional()
    };
    Ok(RatioEstimate::from_logs(numerator.log_conditional(), log_denominator, config.ratio_cap))
}

fn subject_ratio(fact: &Fact, suite: &KnowledgeSuite, scorer: &dyn Scorer, config: &KarrConfig, numerator: &PromptMarginal) -> Result<SubjectRatio> {
    let pool = subject_pool(suite, config.subject_pool);
    let sampled = sample_pool(
        &pool,
        config.k,
        config.seed,
        &["subjects", fact.subject.as_str(), fact.relation.as_str(), fact.object.as_str()],
    );
    let mut logs = Vec::with_capacity(sampled.len());
    for subject in &sampled {
        let log_p = if *subject == &fact.subject {
            numerator.log_conditional()
        } else {
            subject_relation_marginal(suite, scorer, subject, &fact.relation, &fact.object, config.length_normalize)?
                .log_conditional()
        };
        logs.push(log_p);
    }
    Ok(SubjectRatio {
        ratio: RatioEstimate::from_logs(numerator.log_conditional(), log_mean_exp(&logs), config.ratio_cap),
        sampled_subjects: sampled.into_iter().cloned().collect(),
    })
}

/// Relation-specified risk ratio: `P(o | s, r) / P(o | s)`.
pub fn karr_r(fact: &Fact, suite: &KnowledgeSuite, scorer: &dyn Scorer, config: &KarrConfig) -> Result<RatioEstimate> {
    let numerator = checked_numerator(fact, suite, scorer, config)?;
    relation_ratio(fact, suite, scorer, config, &numerator)
}

/// Subject-specified risk ratio: `P(o | s, r) / mean_u P(o | s_u, r)`.
pub fn karr_s(fact: &Fact, suite: &KnowledgeSuite, scorer: &dyn Scorer, config: &KarrConfig) -> Result<SubjectRatio> {
    let numerator = checked_numerator(fact, suite, scorer, config)?;
    subject_ratio(fact, suite, scorer, config, &numerator)
}

fn ate_with(fact: &Fact, suite: &KnowledgeSuite, scorer: &dyn Scorer, config: &KarrConfig, numerator: &PromptMarginal) -> Result<AteResult> {
    let pool = suite.relation_ids();
    let sampled = sample_pool(
        &pool,
        config.k,
        config.seed,
        &["relations", fact.subject.as_str(), fact.relation.as_str(), fact.object.as_str()],
    );
    let mut logs = Vec::with_capacity(sampled.len());
    for relation in &sampled {
        let log_p = if *relation == &fact.relation {
            numerator.log_conditional()
        } else {
            subject_relation_marginal(suite, scorer, &fact.subject, relation, &fact.object, config.length_normalize)?
                .log_conditional()
        };
        logs.push(log_p);
    }
    let treated = numerator.log_conditional();
    let control = log_mean_exp(&logs);
    Ok(AteResult {
        ate: treated.exp() - control.exp(),
        log_relation_ratio: treated - control,
        sampled_relations: sampled.into_iter().cloned().collect(),
    })
}

/// Treatment effect of specifying the relation: the difference counterpart of
/// the relation ratio, with the control arm estimated from `K` sampled
/// relations. Diagnostic only.
pub fn ate_fact(fact: &Fact, suite: &KnowledgeSuite, scorer: &dyn Scorer, config: &KarrConfig) -> Result<AteResult> {
    let numerator = checked_numerator(fact, suite, scorer, config)?;
    ate_with(fact, suite, scorer, config, &numerator)
}

pub fn karr_fact(fact: &Fact, suite: &KnowledgeSuite, scorer: &dyn Scorer, config: &KarrConfig) -> Result<KarrResult> {
    config.validate()?;
    let numerator = match checked_numerator(fact, suite, scorer, config) {
        Ok(n) => n,
        Err(Error::ObjectAllOov(_)) => {
            return Ok(KarrResult {
                fact: fact.clone(),
                karr_r: None,
                karr_s: None,
                karr: None,
                numerator_logprob: None,
                flags: BTreeSet::from([KarrFlag::ObjectAllOov]),
                sampled_subjects: Vec::new(),
                sampled_relations: Vec::new(),
                ate: None,
            })
        }
        Err(e) => return Err(e),
    };
    let r = relation_ratio(fact, suite, scorer, config, &numerator)?;
    let s = subject_ratio(fact, suite, scorer, config, &numerator)?;

    let mut flags = BTreeSet::new();
    if r.degenerate {
        flags.insert(KarrFlag::DegenerateRDenominator);
    }
    if s.ratio.degenerate {
        flags.insert(KarrFlag::DegenerateSDenominator);
    }
    if r.capped || s.ratio.capped {
        flags.insert(KarrFlag::Capped);
    }

    let (ate, sampled_relations) = if config.with_ate {
        let a = ate_with(fact, suite, scorer, config, &numerator)?;
        (Some(a.ate), a.sampled_relations)
    } else {
        (None, Vec::new())
    };

    Ok(KarrResult {
        fact: fact.clone(),
        karr_r: Some(r.value),
        karr_s: Some(s.ratio.value),
        karr: Some((r.value * s.ratio.value).sqrt()),
        numerator_logprob: Some(numerator.log_joint),
        flags,
        sampled_subjects: s.sampled_subjects,
        sampled_relations,
        ate,
    })
}
