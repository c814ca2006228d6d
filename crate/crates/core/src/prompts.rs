//! Text forms for a fact: bare subject aliases, subject+relation prompts, and
//! statements that continue a prompt with an object alias.
//!
//! Texts are only ever generated from registered aliases, so every prompt
//! realizes its symbols by construction and no free-text matching is needed.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::suite::{EntityId, KnowledgeSuite, RelationId, RelationTemplate, OBJECT_SLOT, SUBJECT_SLOT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    /// Index into the relation's templates; `None` for alias-only prompts.
    pub template: Option<usize>,
    pub subject: EntityId,
    pub subject_alias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Prompt {
    pub text: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Statement {
    pub prefix: Prompt,
    pub continuation: String,
    pub object_alias_index: usize,
}

/// Prefix text for a template with `alias` in the subject slot: everything up
/// to the object slot, trailing whitespace trimmed.
pub fn fill_template(template: &str, alias: &str) -> String {
    let head = match template.find(OBJECT_SLOT) {
        Some(at) => &template[..at],
        None => template,
    };
    head.replacen(SUBJECT_SLOT, alias, 1).trim_end().to_string()
}

/// Joins an object alias onto a prefix with a single separating space unless
/// the prefix is empty or already ends in whitespace.
pub fn continuation_for(prefix: &str, alias: &str) -> String {
    if prefix.is_empty() || prefix.ends_with(char::is_whitespace) {
        alias.to_string()
    } else {
        format!(" {alias}")
    }
}

pub fn render_alpha(suite: &KnowledgeSuite, subject: &EntityId) -> Result<Vec<Prompt>> {
    let entity = suite.entity(subject)?;
    Ok(entity
        .aliases
        .iter()
        .enumerate()
        .map(|(i, alias)| Prompt {
            text: alias.clone(),
            provenance: Provenance {
                template: None,
                subject: subject.clone(),
                subject_alias: i,
            },
        })
        .collect())
}

/// Templates × subject aliases, template-major.
pub fn render_beta(suite: &KnowledgeSuite, subject: &EntityId, relation: &RelationId) -> Result<Vec<Prompt>> {
    let entity = suite.entity(subject)?;
    let relation = suite.relation(relation)?;
    if relation.templates.is_empty() {
        return Err(Error::NoTemplates(relation.id.to_string()));
    }
    let mut prompts = Vec::with_capacity(relation.templates.len() * entity.aliases.len());
    for (t, template) in relation.templates.iter().enumerate() {
        for (a, alias) in entity.aliases.iter().enumerate() {
            prompts.push(Prompt {
                text: fill_template(&template.text, alias),
                provenance: Provenance {
                    template: Some(t),
                    subject: subject.clone(),
                    subject_alias: a,
                },
            });
        }
    }
    Ok(prompts)
}

pub fn render_gamma(suite: &KnowledgeSuite, prompts: &[Prompt], object: &EntityId) -> Result<Vec<Statement>> {
    let entity = suite.entity(object)?;
    let mut statements = Vec::with_capacity(prompts.len() * entity.aliases.len());
    for prompt in prompts {
        for (j, alias) in entity.aliases.iter().enumerate() {
            statements.push(Statement {
                prefix: prompt.clone(),
                continuation: continuation_for(&prompt.text, alias),
                object_alias_index: j,
            });
        }
    }
    Ok(statements)
}

/// Renders a template with the subject removed, e.g. `"[X]'s birthplace is [Y]"`
/// becomes `"Birthplace is"`. Used to find objects a model favours from the
/// relation wording alone.
pub fn render_subject_free(template: &RelationTemplate) -> String {
    let head = fill_template(&template.text, "\u{0}");
    let (before, after) = head.split_once('\u{0}').unwrap_or(("", head.as_str()));
    let after = after
        .strip_prefix("'s")
        .or_else(|| after.strip_prefix("\u{2019}s"))
        .or_else(|| after.strip_prefix('\''))
        .unwrap_or(after);
    let joined = format!("{before} {after}");
    let collapsed = joined.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut chars = collapsed.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
