#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use karr::scorer::{TableFile, TableScorer};
use karr::suite::{validate_template, Entity, Fact, KnowledgeSuite, Relation, RelationId};

pub fn fixture_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load_fixture(name: &str) -> (KnowledgeSuite, TableScorer, Oracle) {
    let dir = fixture_dir(name);
    let suite = karr::suite::load_suite(
        &dir.join("facts.jsonl"),
        &dir.join("entities.jsonl"),
        &dir.join("templates.jsonl"),
    )
    .unwrap();
    let text = std::fs::read_to_string(dir.join("table.json")).unwrap();
    let raw: serde_json::Value = serde_json::from_str(&text).unwrap();
    let scorer = TableScorer::from_path(&dir.join("table.json")).unwrap();
    let oracle = Oracle::from_raw(&raw, &read_entities(&dir), &read_templates(&dir));
    (suite, scorer, oracle)
}

fn read_lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn read_entities(dir: &Path) -> BTreeMap<String, Vec<String>> {
    read_lines(&dir.join("entities.jsonl"))
        .into_iter()
        .map(|v| {
            let aliases = v["aliases"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect();
            (v["id"].as_str().unwrap().to_string(), aliases)
        })
        .collect()
}

fn read_templates(dir: &Path) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for v in read_lines(&dir.join("templates.jsonl")) {
        out.entry(v["relation"].as_str().unwrap().to_string())
            .or_default()
            .push(v["template"].as_str().unwrap().to_string());
    }
    out
}

/// Brute-force enumeration in linear probability space, straight from the
/// raw table. Shares no code with the library.
pub struct Oracle {
    priors: HashMap<String, f64>,
    conditionals: HashMap<String, HashMap<String, f64>>,
    entities: BTreeMap<String, Vec<String>>,
    templates: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleValues {
    pub numerator: f64,
    pub karr_r: f64,
    pub karr_s: f64,
    pub karr: f64,
    pub ate: f64,
}

impl Oracle {
    pub fn from_raw(
        raw: &serde_json::Value,
        entities: &BTreeMap<String, Vec<String>>,
        templates: &BTreeMap<String, Vec<String>>,
    ) -> Self {
        let mut priors = HashMap::new();
        if let Some(map) = raw["priors"].as_object() {
            for (k, v) in map {
                priors.insert(k.clone(), v.as_f64().unwrap());
            }
        }
        let mut conditionals = HashMap::new();
        if let Some(map) = raw["conditionals"].as_object() {
            for (prefix, row) in map {
                let row: HashMap<String, f64> =
                    row.as_object().unwrap().iter().map(|(k, v)| (k.clone(), v.as_f64().unwrap())).collect();
                conditionals.insert(prefix.clone(), row);
            }
        }
        Self {
            priors,
            conditionals,
            entities: entities.clone(),
            templates: templates.clone(),
        }
    }

    fn prior(&self, text: &str) -> f64 {
        *self.priors.get(text).unwrap_or(&0.0)
    }

    fn cond(&self, prefix: &str, alias: &str) -> f64 {
        let cont = format!(" {alias}");
        if let Some(p) = self.conditionals.get(prefix).and_then(|r| r.get(&cont)) {
            return *p;
        }
        let joint = self.priors.get(&format!("{prefix}{cont}"));
        match (self.priors.get(prefix), joint) {
            (Some(pp), Some(pj)) if *pp > 0.0 => (pj / pp).min(1.0),
            _ => 0.0,
        }
    }

    fn prompts(&self, subject: &str, relation: &str) -> Vec<String> {
        let mut out = Vec::new();
        for t in &self.templates[relation] {
            let head = &t[..t.find("[Y]").unwrap()];
            for a in &self.entities[subject] {
                out.push(head.replace("[X]", a).trim_end().to_string());
            }
        }
        out
    }

    /// (Σ P(prompt) Σ_j P(alias_j | prompt), Σ P(prompt))
    fn sums(&self, prompts: &[String], object: &str) -> (f64, f64) {
        let mut joint = 0.0;
        let mut mass = 0.0;
        for p in prompts {
            let prior = self.prior(p);
            mass += prior;
            let inner: f64 = self.entities[object].iter().map(|a| self.cond(p, a)).sum();
            joint += prior * inner;
        }
        (joint, mass)
    }

    fn p_given(&self, subject: &str, relation: &str, object: &str) -> f64 {
        let (j, m) = self.sums(&self.prompts(subject, relation), object);
        if m == 0.0 {
            0.0
        } else {
            j / m
        }
    }

    /// Every quantity with exhaustive subject and relation pools.
    pub fn evaluate(&self, fact: &Fact) -> OracleValues {
        let (s, r, o) = (fact.subject.as_str(), fact.relation.as_str(), fact.object.as_str());
        let (numerator, _) = self.sums(&self.prompts(s, r), o);
        let treated = self.p_given(s, r, o);
        let (aj, am) = self.sums(&self.entities[s].clone(), o);
        let karr_r = treated / (aj / am);
        let subjects: Vec<&String> = self.entities.keys().collect();
        let control_s: f64 = subjects.iter().map(|u| self.p_given(u, r, o)).sum::<f64>() / subjects.len() as f64;
        let karr_s = treated / control_s;
        let relations: Vec<&String> = self.templates.keys().collect();
        let control_r: f64 = relations.iter().map(|q| self.p_given(s, q, o)).sum::<f64>() / relations.len() as f64;
        OracleValues {
            numerator,
            karr_r,
            karr_s,
            karr: (karr_r * karr_s).sqrt(),
            ate: treated - control_r,
        }
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// A generated suite together with the raw table and the oracle over it.
pub struct Generated {
    pub suite: KnowledgeSuite,
    pub table: TableFile,
    pub oracle: Oracle,
}

impl Generated {
    pub fn scorer(&self) -> TableScorer {
        TableScorer::new(self.table.clone()).unwrap()
    }
}

pub struct GenSpec {
    pub entities: usize,
    pub relations: usize,
    pub max_aliases: usize,
    pub max_templates: usize,
    pub facts: usize,
    /// Store some conditionals only as joint priors of prefix‖continuation.
    pub joint_encoding: bool,
    /// Non-entity continuations added to every prompt row.
    pub distractors: usize,
    /// Make roughly half the facts' objects the favourite continuation of
    /// some or all of their prompts.
    pub boost_facts: bool,
}

fn word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(3..8);
    (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
}

/// Random suite with a table that is consistent: every prompt row sums to at
/// most one, and joint-encoded entries equal prior × conditional.
pub fn generate(spec: &GenSpec, seed: u64) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entities: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for i in 0..spec.entities {
        let n = rng.random_range(1..=spec.max_aliases);
        let aliases: Vec<String> = (0..n).map(|j| format!("{}{i}x{j}", word(&mut rng))).collect();
        entities.insert(format!("E{i:02}"), aliases);
    }
    let mut templates: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in 0..spec.relations {
        let n = rng.random_range(1..=spec.max_templates);
        let ts = (0..n)
            .map(|t| {
                if rng.random_bool(0.3) {
                    format!("[X]'s {} r{r}t{t} [Y]", word(&mut rng))
                } else {
                    format!("[X] {} r{r}t{t} [Y]", word(&mut rng))
                }
            })
            .collect();
        templates.insert(format!("R{r}"), ts);
    }

    let all_aliases: Vec<String> = entities.values().flatten().cloned().collect();
    let distractors: Vec<String> = (0..spec.distractors).map(|i| format!("zz{}{i}", word(&mut rng))).collect();
    let mut table = TableFile::default();

    let add_row = |prefix: String, rng: &mut ChaCha8Rng, table: &mut TableFile| {
        let prior = rng.random_range(1e-4..1e-2);
        table.priors.insert(prefix.clone(), prior);
        let mut weights: Vec<f64> = (0..all_aliases.len() + distractors.len())
            .map(|_| {
                let w: f64 = rng.random_range(0.0..1.0);
                w * w * w
            })
            .collect();
        // a few strongly preferred continuations
        for _ in 0..2 {
            let i = rng.random_range(0..weights.len());
            weights[i] += rng.random_range(1.0..5.0);
        }
        let total: f64 = weights.iter().sum::<f64>() / rng.random_range(0.5..0.95);
        let joint = spec.joint_encoding && rng.random_bool(0.5);
        let mut row = BTreeMap::new();
        for (text, w) in all_aliases.iter().chain(&distractors).zip(weights) {
            let p = w / total;
            let cont = format!(" {text}");
            if joint {
                table.priors.insert(format!("{prefix}{cont}"), prior * p);
            } else {
                row.insert(cont, p);
            }
        }
        if !row.is_empty() {
            table.conditionals.insert(prefix, row);
        }
    };

    for aliases in entities.values() {
        for a in aliases {
            add_row(a.clone(), &mut rng, &mut table);
        }
        for ts in templates.values() {
            for t in ts {
                let head = &t[..t.find("[Y]").unwrap()];
                for a in aliases {
                    let prefix = head.replace("[X]", a).trim_end().to_string();
                    if !table.priors.contains_key(&prefix) {
                        add_row(prefix, &mut rng, &mut table);
                    }
                }
            }
        }
    }

    let ids: Vec<&String> = entities.keys().collect();
    let rels: Vec<&String> = templates.keys().collect();
    let mut facts = Vec::new();
    while facts.len() < spec.facts {
        let f = Fact::new(
            ids[rng.random_range(0..ids.len())].as_str(),
            rels[rng.random_range(0..rels.len())].as_str(),
            ids[rng.random_range(0..ids.len())].as_str(),
        );
        if !facts.contains(&f) {
            facts.push(f);
        }
    }

    if spec.boost_facts {
        for fact in &facts {
            if !rng.random_bool(0.5) {
                continue;
            }
            let alias = format!(" {}", entities[fact.object.as_str()][0]);
            let all_templates = rng.random_bool(0.5);
            for t in &templates[fact.relation.as_str()] {
                if !all_templates && rng.random_bool(0.5) {
                    continue;
                }
                let head = &t[..t.find("[Y]").unwrap()];
                for a in &entities[fact.subject.as_str()] {
                    let prefix = head.replace("[X]", a).trim_end().to_string();
                    let Some(row) = table.conditionals.get_mut(&prefix) else {
                        continue;
                    };
                    let before: f64 = row.values().sum();
                    let top = row.values().cloned().fold(0.0, f64::max);
                    row.insert(alias.clone(), top * 1.5 + 0.05);
                    let after: f64 = row.values().sum();
                    for v in row.values_mut() {
                        *v *= before / after;
                    }
                }
            }
        }
    }

    let suite = KnowledgeSuite::new(
        entities
            .iter()
            .map(|(id, aliases)| Entity::new(id.as_str().into(), aliases).unwrap())
            .collect::<Vec<_>>(),
        templates
            .iter()
            .map(|(id, ts)| {
                let rid = RelationId::new(id.as_str());
                Relation {
                    templates: ts.iter().map(|t| validate_template(t, &rid).unwrap()).collect(),
                    id: rid,
                }
            })
            .collect::<Vec<_>>(),
        facts,
    )
    .unwrap();
    let raw = serde_json::to_value(&table).unwrap();
    let oracle = Oracle::from_raw(&raw, &entities, &templates);
    Generated { suite, table, oracle }
}

/// Twenty entities, one relation and one fact whose object probability
/// varies widely across subjects.
pub fn extended_twenty() -> Generated {
    generate(
        &GenSpec {
            entities: 20,
            relations: 1,
            max_aliases: 2,
            max_templates: 2,
            facts: 1,
            joint_encoding: false,
            distractors: 3,
            boost_facts: false,
        },
        20,
    )
}

pub fn sample_stddev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
