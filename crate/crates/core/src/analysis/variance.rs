use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::suite::{Fact, KnowledgeSuite, RelationId, RelationTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceStudy {
    pub per_variant_scores: Vec<f64>,
    /// Population variance of the overall scores.
    pub variance: f64,
    pub stddev: f64,
}

pub fn population_variance(scores: &[f64]) -> (f64, f64) {
    if scores.is_empty() {
        return (0.0, 0.0);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let variance = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (variance, variance.sqrt())
}

/// Runs `evaluate` once per template variant. Variant `i` is a copy of the
/// suite in which every relation has only its `i`-th template from
/// `variants` (relations without variants that no fact uses keep their first
/// template). `evaluate` returns the overall score for that variant.
pub fn variance_study<F>(
    suite: &KnowledgeSuite,
    facts: &[Fact],
    variants: &BTreeMap<RelationId, Vec<RelationTemplate>>,
    variant_count: usize,
    mut evaluate: F,
) -> Result<VarianceStudy>
where
    F: FnMut(&KnowledgeSuite, &[Fact]) -> Result<f64>,
{
    if variant_count < 2 {
        return Err(Error::Invalid("variance study needs at least 2 template variants".into()));
    }
    let used: BTreeSet<&RelationId> = facts.iter().map(|f| &f.relation).collect();
    let missing: Vec<String> = used
        .iter()
        .filter(|r| variants.get(**r).map_or(0, Vec::len) < variant_count)
        .map(|r| r.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Invalid(format!(
            "missing template variants ({variant_count} required) for relations: {}",
            missing.join(", ")
        )));
    }

    let mut per_variant_scores = Vec::with_capacity(variant_count);
    for variant in 0..variant_count {
        let mut templates = BTreeMap::new();
        for relation in suite.relations() {
            let chosen = match variants.get(&relation.id).and_then(|v| v.get(variant)) {
                Some(t) => t.clone(),
                None => relation.templates[0].clone(),
            };
            templates.insert(relation.id.clone(), vec![chosen]);
        }
        let variant_suite = suite.with_templates(&templates)?;
        per_variant_scores.push(evaluate(&variant_suite, facts)?);
    }
    let (variance, stddev) = population_variance(&per_variant_scores);
    Ok(VarianceStudy {
        per_variant_scores,
        variance,
        stddev,
    })
}
