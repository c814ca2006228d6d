//! Per-fact records and suite-level reports shared by every assessment method.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineVerdict;
use crate::engine::{KarrFlag, KarrResult};
use crate::error::{Error, Result};
use crate::suite::{EntityId, Fact, RelationId};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Karr,
    Lama1,
    Lama10,
    Kprompts,
    ConsistentAcc,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Karr => "karr",
            Method::Lama1 => "lama1",
            Method::Lama10 => "lama10",
            Method::Kprompts => "kprompts",
            Method::ConsistentAcc => "consistent_acc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "karr" => Method::Karr,
            "lama1" => Method::Lama1,
            "lama10" => Method::Lama10,
            "kprompts" => Method::Kprompts,
            "consistent_acc" | "consistent-acc" => Method::ConsistentAcc,
            other => return Err(format!("unknown method {other:?}")),
        })
    }
}

/// One row of a report. KaRR-specific columns are empty for baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactRecord {
    #[serde(flatten)]
    pub fact: Fact,
    pub method: Method,
    pub known: bool,
    /// KaRR value, K-Prompts mean probability, or absent for boolean methods.
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub karr_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub karr_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub karr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_log")]
    pub numerator_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<KarrFlag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sampled_subjects: Vec<EntityId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sampled_relations: Vec<RelationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ate: Option<f64>,
}

impl FactRecord {
    pub fn from_karr(result: KarrResult, threshold: f64) -> Self {
        let known = result.is_known(threshold);
        Self {
            fact: result.fact,
            method: Method::Karr,
            known,
            score: result.karr,
            karr_r: result.karr_r,
            karr_s: result.karr_s,
            karr: result.karr,
            numerator_logprob: result.numerator_logprob,
            flags: result.flags,
            sampled_subjects: result.sampled_subjects,
            sampled_relations: result.sampled_relations,
            ate: result.ate,
        }
    }

    pub fn from_verdict(verdict: BaselineVerdict) -> Self {
        Self {
            fact: verdict.fact,
            method: verdict.method,
            known: verdict.known,
            score: verdict.score,
            karr_r: None,
            karr_s: None,
            karr: None,
            numerator_logprob: None,
            flags: BTreeSet::new(),
            sampled_subjects: Vec::new(),
            sampled_relations: Vec::new(),
            ate: None,
        }
    }

    /// Score used for rank correlation: the numeric score when the method
    /// has one, otherwise 1 for known and 0 for unknown.
    pub fn rank_score(&self) -> f64 {
        match self.score {
            Some(s) => s,
            None if self.known => 1.0,
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSummary {
    pub fact_count: usize,
    pub known_fraction: f64,
    /// Mean of the available per-fact scores.
    pub mean_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub method: Method,
    pub scorer: String,
    /// Percentage of assessed facts judged known.
    pub overall_score: f64,
    pub assessed_facts: usize,
    pub known_facts: usize,
    /// Facts whose object had no in-vocabulary alias; counted as unknown.
    pub object_all_oov: usize,
    pub per_relation: BTreeMap<RelationId, RelationSummary>,
    pub per_fact: Vec<FactRecord>,
    /// Effective configuration of the run.
    pub config: serde_json::Value,
}

/// `100 × |known| / |records|`.
pub fn known_percentage(records: &[FactRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let known = records.iter().filter(|r| r.known).count();
    100.0 * known as f64 / records.len() as f64
}

impl SuiteReport {
    pub fn build(method: Method, scorer: String, per_fact: Vec<FactRecord>, config: serde_json::Value) -> Self {
        let mut groups: BTreeMap<RelationId, Vec<&FactRecord>> = BTreeMap::new();
        for record in &per_fact {
            groups.entry(record.fact.relation.clone()).or_default().push(record);
        }
        let per_relation = groups
            .into_iter()
            .map(|(relation, records)| {
                let known = records.iter().filter(|r| r.known).count();
                let scores: Vec<f64> = records.iter().filter_map(|r| r.score).collect();
                let mean_score = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
                (
                    relation,
                    RelationSummary {
                        fact_count: records.len(),
                        known_fraction: known as f64 / records.len() as f64,
                        mean_score,
                    },
                )
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            method,
            scorer,
            overall_score: known_percentage(&per_fact),
            assessed_facts: per_fact.len(),
            known_facts: per_fact.iter().filter(|r| r.known).count(),
            object_all_oov: per_fact
                .iter()
                .filter(|r| r.flags.contains(&KarrFlag::ObjectAllOov))
                .count(),
            per_relation,
            per_fact,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let report: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Invalid(format!(
                "{}: unsupported report schema version {}",
                path.display(),
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// Per-fact table: subject, relation, object, karr_r, karr_s, karr,
    /// flags, method, known, score.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
        w.write_record([
            "subject", "relation", "object", "karr_r", "karr_s", "karr", "flags", "method", "known", "score",
        ])
        .map_err(csv_err)?;
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.per_fact {
            let flags: Vec<&str> = r.flags.iter().map(KarrFlag::as_str).collect();
            w.write_record([
                r.fact.subject.as_str(),
                r.fact.relation.as_str(),
                r.fact.object.as_str(),
                &num(r.karr_r),
                &num(r.karr_s),
                &num(r.karr),
                &flags.join("|"),
                r.method.as_str(),
                if r.known { "true" } else { "false" },
                &num(r.score),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Invalid(format!("csv: {e}")))
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(file)
    }
}

/// Serde helper for optional log-probabilities that may be `-inf`.
/// `-inf` is written as the string `"-inf"` because JSON has no infinities.
pub mod opt_log {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if *x == f64::NEG_INFINITY => s.serialize_some(&Repr::Text("-inf".into())),
            Some(x) => s.serialize_some(&Repr::Num(*x)),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) if t == "-inf" => Ok(Some(f64::NEG_INFINITY)),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("invalid log-probability {t:?}"))),
        }
    }
}
