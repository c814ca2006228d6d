//! The symbolic knowledge suite: entity alias catalog, relation templates and
//! fact triples, loaded from JSON-lines files.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use rand::seq::index;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

pub const SUBJECT_SLOT: &str = "[X]";
pub const OBJECT_SLOT: &str = "[Y]";

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

id_type!(EntityId);
id_type!(RelationId);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub aliases: Vec<String>,
}

impl Entity {
    /// Builds an entity, normalizing aliases and dropping repeats.
    pub fn new(id: EntityId, aliases: impl IntoIterator<Item = impl AsRef<str>>) -> Result<Self> {
        if id.as_str().is_empty() {
            return Err(Error::Invalid("entity id must be non-empty".into()));
        }
        let mut seen = HashSet::new();
        let mut normalized = Vec::new();
        for alias in aliases {
            let alias = normalize_alias(alias.as_ref());
            if alias.is_empty() {
                return Err(Error::Entity {
                    id: id.to_string(),
                    reason: "empty alias".into(),
                });
            }
            if alias.contains(SUBJECT_SLOT) || alias.contains(OBJECT_SLOT) {
                return Err(Error::Entity {
                    id: id.to_string(),
                    reason: format!("alias {alias:?} contains a template placeholder"),
                });
            }
            if seen.insert(alias.clone()) {
                normalized.push(alias);
            } else {
                warn!("entity {id}: dropping duplicate alias {alias:?}");
            }
        }
        if normalized.is_empty() {
            return Err(Error::Entity {
                id: id.to_string(),
                reason: "at least one alias required".into(),
            });
        }
        Ok(Self {
            id,
            aliases: normalized,
        })
    }

    pub fn primary_alias(&self) -> &str {
        &self.aliases[0]
    }
}

/// Trims and collapses internal whitespace runs to a single space. Case is kept.
pub fn normalize_alias(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTemplate {
    pub relation: RelationId,
    pub text: String,
    /// Text after the object slot was removed during validation.
    pub truncated: bool,
}

impl RelationTemplate {
    pub fn has_object_slot(&self) -> bool {
        self.text.contains(OBJECT_SLOT)
    }
}

/// Checks placeholder structure and cuts anything after `[Y]`.
pub fn validate_template(raw_text: &str, relation: &RelationId) -> Result<RelationTemplate> {
    let err = |reason: &str| Error::Template {
        template: raw_text.to_string(),
        reason: reason.to_string(),
    };
    if raw_text.trim().is_empty() {
        return Err(err("empty template"));
    }
    let subject_slots = raw_text.matches(SUBJECT_SLOT).count();
    let object_slots = raw_text.matches(OBJECT_SLOT).count();
    match subject_slots {
        0 => return Err(err("no [X] placeholder")),
        1 => {}
        _ => return Err(err("multiple [X] placeholders")),
    }
    if object_slots > 1 {
        return Err(err("multiple [Y] placeholders"));
    }

    let subject_at = raw_text.find(SUBJECT_SLOT).unwrap();
    let (text, truncated) = match raw_text.find(OBJECT_SLOT) {
        None => (raw_text.trim().to_string(), false),
        Some(object_at) if object_at < subject_at => return Err(err("[Y] precedes [X]")),
        Some(object_at) => {
            let end = object_at + OBJECT_SLOT.len();
            let kept = raw_text[..end].trim_start().to_string();
            (kept, end < raw_text.trim_end().len())
        }
    };
    if truncated {
        info!("relation {relation}: truncated template {raw_text:?} to {text:?}");
    }
    Ok(RelationTemplate {
        relation: relation.clone(),
        text,
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub id: RelationId,
    pub templates: Vec<RelationTemplate>,
}

impl Relation {
    pub fn primary_template(&self) -> Option<&RelationTemplate> {
        self.templates.first()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Fact {
    pub fn new(
        subject: impl Into<EntityId>,
        relation: impl Into<RelationId>,
        object: impl Into<EntityId>,
    ) -> Self {
        Self {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
        }
    }
}

impl From<String> for EntityId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl From<String> for RelationId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.relation, self.object)
    }
}

/// A validated, immutable suite. Maps are ordered by id so that every
/// enumeration over the catalog is deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeSuite {
    entities: BTreeMap<EntityId, Entity>,
    relations: BTreeMap<RelationId, Relation>,
    facts: Vec<Fact>,
}

impl KnowledgeSuite {
    pub fn new(
        entities: impl IntoIterator<Item = Entity>,
        relations: impl IntoIterator<Item = Relation>,
        facts: Vec<Fact>,
    ) -> Result<Self> {
        let mut entity_map = BTreeMap::new();
        for entity in entities {
            if entity_map.contains_key(&entity.id) {
                return Err(Error::DuplicateId {
                    kind: "entity",
                    id: entity.id.to_string(),
                });
            }
            entity_map.insert(entity.id.clone(), entity);
        }
        let mut relation_map = BTreeMap::new();
        for relation in relations {
            if relation.templates.is_empty() {
                return Err(Error::NoTemplates(relation.id.to_string()));
            }
            if let Some(t) = relation.templates.iter().find(|t| t.relation != relation.id) {
                return Err(Error::Invalid(format!(
                    "template {:?} belongs to {} but is listed under {}",
                    t.text, t.relation, relation.id
                )));
            }
            if relation_map.contains_key(&relation.id) {
                return Err(Error::DuplicateId {
                    kind: "relation",
                    id: relation.id.to_string(),
                });
            }
            relation_map.insert(relation.id.clone(), relation);
        }
        if relation_map.is_empty() {
            return Err(Error::Invalid("at least one relation required".into()));
        }
        if facts.is_empty() {
            return Err(Error::Invalid("at least one fact required".into()));
        }

        let mut missing = BTreeSet::new();
        for fact in &facts {
            for entity in [&fact.subject, &fact.object] {
                if !entity_map.contains_key(entity) {
                    missing.insert(format!("entity {entity}"));
                }
            }
            if !relation_map.contains_key(&fact.relation) {
                missing.insert(format!("relation {}", fact.relation));
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingIds(missing.into_iter().collect()));
        }

        Ok(Self {
            entities: entity_map,
            relations: relation_map,
            facts,
        })
    }

    pub fn entities(&self) -> impl ExactSizeIterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn relations(&self) -> impl ExactSizeIterator<Item = &Relation> {
        self.relations.values()
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn entity(&self, id: &EntityId) -> Result<&Entity> {
        self.entities
            .get(id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))
    }

    pub fn relation(&self, id: &RelationId) -> Result<&Relation> {
        self.relations
            .get(id)
            .ok_or_else(|| Error::UnknownRelation(id.to_string()))
    }

    pub fn entity_ids(&self) -> Vec<&EntityId> {
        self.entities.keys().collect()
    }

    pub fn relation_ids(&self) -> Vec<&RelationId> {
        self.relations.keys().collect()
    }

    /// Entities that occur as the subject of at least one fact, in id order.
    pub fn subject_ids(&self) -> Vec<&EntityId> {
        let subjects: BTreeSet<&EntityId> = self.facts.iter().map(|f| &f.subject).collect();
        subjects.into_iter().collect()
    }

    /// Copy of this suite with templates replaced per relation.
    pub fn with_templates(&self, templates: &BTreeMap<RelationId, Vec<RelationTemplate>>) -> Result<Self> {
        let relations = self.relations.values().map(|r| Relation {
            id: r.id.clone(),
            templates: templates.get(&r.id).cloned().unwrap_or_else(|| r.templates.clone()),
        });
        Self::new(self.entities.values().cloned(), relations, self.facts.clone())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityRecord {
    id: String,
    aliases: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateRecord {
    relation: String,
    template: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FactRecord {
    subject: String,
    relation: String,
    object: String,
}

/// Reads a JSON-lines file, skipping blank lines and `#` comments.
/// Yields `(line_number, record)` pairs.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

fn non_empty(path: &Path, line: usize, field: &str, value: &str) -> Result<()> {
    if value.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{field} must be non-empty"),
        });
    }
    Ok(())
}

pub fn load_entities(path: &Path) -> Result<Vec<Entity>> {
    read_jsonl::<EntityRecord>(path)?
        .into_iter()
        .map(|(line, rec)| {
            non_empty(path, line, "id", &rec.id)?;
            Entity::new(EntityId(rec.id), rec.aliases).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Groups template records by relation, preserving file order within a relation.
pub fn load_templates(path: &Path) -> Result<Vec<Relation>> {
    let mut grouped: BTreeMap<RelationId, Vec<RelationTemplate>> = BTreeMap::new();
    for (line, rec) in read_jsonl::<TemplateRecord>(path)? {
        non_empty(path, line, "relation", &rec.relation)?;
        let relation = RelationId(rec.relation);
        let template = validate_template(&rec.template, &relation).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        grouped.entry(relation).or_default().push(template);
    }
    Ok(grouped
        .into_iter()
        .map(|(id, templates)| Relation { id, templates })
        .collect())
}

pub fn load_facts(path: &Path) -> Result<Vec<Fact>> {
    read_jsonl::<FactRecord>(path)?
        .into_iter()
        .map(|(line, rec)| {
            non_empty(path, line, "subject", &rec.subject)?;
            non_empty(path, line, "relation", &rec.relation)?;
            non_empty(path, line, "object", &rec.object)?;
            Ok(Fact::new(rec.subject, rec.relation, rec.object))
        })
        .collect()
}

pub fn load_suite(facts_path: &Path, entities_path: &Path, templates_path: &Path) -> Result<KnowledgeSuite> {
    let entities = load_entities(entities_path)?;
    let relations = load_templates(templates_path)?;
    let facts = load_facts(facts_path)?;
    KnowledgeSuite::new(entities, relations, facts)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn write_lines<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = create(path)?;
    for rec in records {
        let line = serde_json::to_string(&rec).expect("records serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_facts(path: &Path, facts: &[Fact]) -> Result<()> {
    write_lines(path, facts)
}

/// Writes the three suite files in the same formats `load_suite` reads.
pub fn write_suite(
    suite: &KnowledgeSuite,
    facts_path: &Path,
    entities_path: &Path,
    templates_path: &Path,
) -> Result<()> {
    write_facts(facts_path, &suite.facts)?;
    write_lines(entities_path, suite.entities.values())?;
    write_lines(
        templates_path,
        suite.relations.values().flat_map(|r| {
            r.templates.iter().map(|t| TemplateRecord {
                relation: t.relation.to_string(),
                template: t.text.clone(),
            })
        }),
    )
}

/// Uniformly samples up to `per_relation_cap` facts per relation without
/// replacement. Output is grouped by relation id; within a relation facts
/// appear in sampled order.
pub fn sample_facts(suite: &KnowledgeSuite, per_relation_cap: usize, seed: u64) -> Vec<Fact> {
    let mut by_relation: BTreeMap<&RelationId, Vec<&Fact>> = BTreeMap::new();
    for fact in &suite.facts {
        by_relation.entry(&fact.relation).or_default().push(fact);
    }
    let mut out = Vec::new();
    for (relation, facts) in by_relation {
        let take = per_relation_cap.min(facts.len());
        let mut rng = seeding::rng_for(seed, &["sample_facts", relation.as_str()]);
        for i in index::sample(&mut rng, facts.len(), take) {
            out.push(facts[i].clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(id: &str) -> RelationId {
        RelationId::new(id)
    }

    #[test]
    fn trailing_text_after_object_slot_is_truncated() {
        let t = validate_template("[X] was born in [Y].", &rel("P19")).unwrap();
        assert_eq!(t.text, "[X] was born in [Y]");
        assert!(t.truncated);
    }

    #[test]
    fn final_object_slot_is_unchanged() {
        let t = validate_template("[X] worked as a [Y]", &rel("P106")).unwrap();
        assert_eq!(t.text, "[X] worked as a [Y]");
        assert!(!t.truncated);
        let t = validate_template("[X] worked as a [Y]   ", &rel("P106")).unwrap();
        assert!(!t.truncated);
    }

    #[test]
    fn object_slot_before_subject_is_rejected() {
        let err = validate_template("The capital of [Y] is [X]", &rel("P36")).unwrap_err();
        assert!(err.to_string().contains("[Y] precedes [X]"), "{err}");
    }

    #[test]
    fn placeholder_count_errors() {
        assert!(validate_template("no slots", &rel("P1")).is_err());
        assert!(validate_template("[X] and [X] are [Y]", &rel("P1")).is_err());
        assert!(validate_template("[X] is [Y] or [Y]", &rel("P1")).is_err());
        assert!(validate_template("   ", &rel("P1")).is_err());
    }

    #[test]
    fn template_without_object_slot_is_accepted() {
        let t = validate_template("[X] is famous for being a", &rel("P1")).unwrap();
        assert!(!t.has_object_slot());
        assert!(!t.truncated);
    }

    #[test]
    fn aliases_are_normalized_and_deduplicated() {
        let e = Entity::new("Q1".into(), ["  William   Shakespeare ", "William Shakespeare", "Bard"]).unwrap();
        assert_eq!(e.aliases, vec!["William Shakespeare", "Bard"]);
        assert!(Entity::new("Q1".into(), Vec::<String>::new()).is_err());
        assert!(Entity::new("Q1".into(), [" "]).is_err());
    }

    fn small_suite() -> KnowledgeSuite {
        let entities = vec![
            Entity::new("S".into(), ["s"]).unwrap(),
            Entity::new("O".into(), ["o"]).unwrap(),
        ];
        let relations = vec![Relation {
            id: rel("R"),
            templates: vec![validate_template("[X] r [Y]", &rel("R")).unwrap()],
        }];
        KnowledgeSuite::new(entities, relations, vec![Fact::new("S", "R", "O")]).unwrap()
    }

    #[test]
    fn dangling_references_are_listed() {
        let s = small_suite();
        let err = KnowledgeSuite::new(
            s.entities().cloned(),
            s.relations().cloned(),
            vec![Fact::new("S", "R2", "Q9")],
        )
        .unwrap_err();
        match err {
            Error::MissingIds(ids) => {
                assert_eq!(ids, vec!["entity Q9".to_string(), "relation R2".to_string()])
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_entity_is_rejected() {
        let s = small_suite();
        let mut entities: Vec<Entity> = s.entities().cloned().collect();
        entities.push(entities[0].clone());
        let err = KnowledgeSuite::new(entities, s.relations().cloned(), s.facts().to_vec()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { kind: "entity", .. }));
    }

    #[test]
    fn empty_facts_are_rejected() {
        let s = small_suite();
        let err = KnowledgeSuite::new(s.entities().cloned(), s.relations().cloned(), vec![]).unwrap_err();
        assert_eq!(err.to_string(), "at least one fact required");
    }
}
