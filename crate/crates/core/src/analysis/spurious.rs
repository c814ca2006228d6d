use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{evaluate_method, MethodConfig};
use crate::error::{Error, Result};
use crate::logspace::log_sum_exp;
use crate::prompts::render_subject_free;
use crate::report::{known_percentage, FactRecord, Method};
use crate::runner::RunOptions;
use crate::scorer::Scorer;
use crate::suite::{normalize_alias, EntityId, Fact, KnowledgeSuite, RelationId};

pub const SUBJECT_FREE_SOURCE: &str = "top-5 subject-free prediction";

/// A false fact made by swapping in an object the model favours from the
/// relation wording alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpuriousFact {
    pub base: Fact,
    pub replaced_object: EntityId,
    pub source: String,
}

impl SpuriousFact {
    pub fn fact(&self) -> Fact {
        Fact {
            subject: self.base.subject.clone(),
            relation: self.base.relation.clone(),
            object: self.replaced_object.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousSynthesis {
    pub facts: Vec<SpuriousFact>,
    pub high_frequency: BTreeMap<RelationId, EntityId>,
    /// Relations whose subject-free generations named no catalog entity.
    pub skipped_relations: Vec<RelationId>,
}

/// Case-insensitive alias → entity lookup. An alias shared by several
/// entities resolves to the smallest id.
pub struct AliasIndex {
    map: HashMap<String, EntityId>,
}

impl AliasIndex {
    pub fn new(suite: &KnowledgeSuite) -> Self {
        let mut map: HashMap<String, EntityId> = HashMap::new();
        // entities iterate in id order, so the first insert wins
        for entity in suite.entities() {
            for alias in &entity.aliases {
                map.entry(alias.to_lowercase()).or_insert_with(|| entity.id.clone());
            }
        }
        Self { map }
    }

    pub fn resolve(&self, text: &str) -> Option<&EntityId> {
        let key = normalize_alias(text.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation()));
        self.map.get(&key.to_lowercase())
    }
}

/// For each relation, collects the top `top_n` generations of every
/// subject-free template, keeps those naming a catalog entity, and takes the
/// entity with the most probability mass as the relation's high-frequency
/// object. Facts of that relation whose object differs get it swapped in.
pub fn spurious_synthesize(
    suite: &KnowledgeSuite,
    relations: &[RelationId],
    facts: &[Fact],
    scorer: &dyn Scorer,
    top_n: usize,
    max_tokens: usize,
) -> Result<SpuriousSynthesis> {
    let index = AliasIndex::new(suite);
    let mut high_frequency = BTreeMap::new();
    let mut skipped_relations = Vec::new();
    for relation_id in relations {
        let relation = suite.relation(relation_id)?;
        let mut mass: BTreeMap<&EntityId, Vec<f64>> = BTreeMap::new();
        for template in &relation.templates {
            let prompt = render_subject_free(template);
            for generation in scorer.topk_continuations(&prompt, top_n, max_tokens)? {
                if let Some(entity) = index.resolve(&generation.text) {
                    mass.entry(entity).or_default().push(generation.logprob);
                }
            }
        }
        let best = mass
            .into_iter()
            .map(|(entity, logs)| (entity, log_sum_exp(logs)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(a.0)));
        match best {
            Some((entity, _)) => {
                high_frequency.insert(relation_id.clone(), entity.clone());
            }
            None => skipped_relations.push(relation_id.clone()),
        }
    }

    let facts = facts
        .iter()
        .filter_map(|fact| {
            let replacement = high_frequency.get(&fact.relation)?;
            (replacement != &fact.object).then(|| SpuriousFact {
                base: fact.clone(),
                replaced_object: replacement.clone(),
                source: SUBJECT_FREE_SOURCE.to_string(),
            })
        })
        .collect();
    Ok(SpuriousSynthesis {
        facts,
        high_frequency,
        skipped_relations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousMetrics {
    pub method: Method,
    /// Percentage of spurious facts judged known.
    pub sp: f64,
    /// Percentage of real facts judged known.
    pub true_positive_rate: f64,
    /// `sp - true_positive_rate`.
    pub delta_p: f64,
    pub real_facts: usize,
    pub spurious_facts: usize,
}

impl SpuriousMetrics {
    pub fn from_records(method: Method, real: &[FactRecord], spurious: &[FactRecord]) -> Result<Self> {
        if real.is_empty() || spurious.is_empty() {
            return Err(Error::Invalid("spurious metrics need real and spurious facts".into()));
        }
        let sp = known_percentage(spurious);
        let true_positive_rate = known_percentage(real);
        Ok(Self {
            method,
            sp,
            true_positive_rate,
            delta_p: sp - true_positive_rate,
            real_facts: real.len(),
            spurious_facts: spurious.len(),
        })
    }
}

pub fn spurious_metrics(
    method: Method,
    real_facts: &[Fact],
    spurious_facts: &[SpuriousFact],
    suite: &KnowledgeSuite,
    scorer: &dyn Scorer,
    config: &MethodConfig,
    options: &RunOptions,
) -> Result<SpuriousMetrics> {
    if real_facts.is_empty() || spurious_facts.is_empty() {
        return Err(Error::Invalid("spurious metrics need real and spurious facts".into()));
    }
    let spurious: Vec<Fact> = spurious_facts.iter().map(SpuriousFact::fact).collect();
    let real_report = evaluate_method(method, real_facts, suite, scorer, config, options)?;
    let spurious_report = evaluate_method(method, &spurious, suite, scorer, config, options)?;
    SpuriousMetrics::from_records(method, &real_report.per_fact, &spurious_report.per_fact)
}
