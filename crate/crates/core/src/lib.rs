//! Knowledge assessment for language models.
//!
//! A fact `(subject, relation, object)` counts as known when the model's
//! probability of generating the object rises both because of the relation
//! wording and because of the specific subject. [`engine::karr_fact`]
//! estimates both ratios and their geometric mean from any [`scorer::Scorer`].

pub mod analysis;
pub mod baselines;
pub mod engine;
pub mod error;
pub mod logspace;
pub mod prompts;
pub mod report;
pub mod runner;
pub mod scorer;
pub mod seeding;
pub mod suite;

pub use engine::{karr_fact, KarrConfig, KarrFlag, KarrResult, SubjectPool};
pub use error::{Error, Result};
pub use report::{FactRecord, Method, SuiteReport};
pub use scorer::{Scorer, ScorerSpec};
pub use suite::{EntityId, Fact, KnowledgeSuite, RelationId};
