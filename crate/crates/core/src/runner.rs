//! Parallel per-fact evaluation with an append-only checkpoint journal.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use log::info;
use rayon::prelude::*;

use crate::engine::{karr_fact, KarrConfig};
use crate::error::{Error, Result};
use crate::report::{FactRecord, Method, SuiteReport};
use crate::scorer::Scorer;
use crate::suite::{read_jsonl, Fact, KnowledgeSuite};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    /// Completed records are appended here as they finish.
    pub journal: Option<PathBuf>,
    /// Reuse records already in the journal instead of recomputing them.
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 4,
            journal: None,
            resume: false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_journal(path: &Path, method: Method) -> Result<HashMap<Fact, FactRecord>> {
    if !path.exists() {
        return Ok(HashMap::new());
    }
    Ok(read_jsonl::<FactRecord>(path)?
        .into_iter()
        .map(|(_, r)| r)
        .filter(|r| r.method == method)
        .map(|r| (r.fact.clone(), r))
        .collect())
}

/// Evaluates `eval` on every fact using a pool of `options.workers` threads.
/// Output order matches `facts`. The first failure stops new work from being
/// started; records already finished stay in the journal for `--resume`.
pub fn run_facts<F>(facts: &[Fact], method: Method, options: &RunOptions, eval: F) -> Result<Vec<FactRecord>>
where
    F: Fn(&Fact) -> Result<FactRecord> + Sync,
{
    if options.workers == 0 {
        return Err(Error::Invalid("workers must be at least 1".into()));
    }
    let done = match (&options.journal, options.resume) {
        (Some(path), true) => load_journal(path, method)?,
        _ => HashMap::new(),
    };
    if !done.is_empty() {
        info!("resuming: {} facts already in journal", done.len());
    }

    let journal: Option<Mutex<BufWriter<File>>> = match &options.journal {
        Some(path) => {
            let file = if options.resume {
                OpenOptions::new().create(true).append(true).open(path)
            } else {
                File::create(path)
            }
            .map_err(io_err(path))?;
            Some(Mutex::new(BufWriter::new(file)))
        }
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))?;
    let abort = AtomicBool::new(false);

    let results: Vec<Option<Result<FactRecord>>> = pool.install(|| {
        facts
            .par_iter()
            .map(|fact| {
                if let Some(r) = done.get(fact) {
                    return Some(Ok(r.clone()));
                }
                if abort.load(Ordering::Relaxed) {
                    return None;
                }
                let outcome = eval(fact);
                match &outcome {
                    Ok(record) => {
                        if let Some(j) = &journal {
                            let line = serde_json::to_string(record).expect("record serializes");
                            let mut w = j.lock().unwrap();
                            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                                abort.store(true, Ordering::Relaxed);
                                return Some(Err(io_err(options.journal.as_deref().unwrap())(e)));
                            }
                        }
                    }
                    Err(_) => abort.store(true, Ordering::Relaxed),
                }
                Some(outcome)
            })
            .collect()
    });

    let mut records = Vec::with_capacity(facts.len());
    let mut first_error = None;
    for outcome in results {
        match outcome {
            Some(Ok(r)) => records.push(r),
            Some(Err(e)) => {
                first_error.get_or_insert(e);
            }
            None => {}
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(records),
    }
}

/// Scores every fact with KaRR and aggregates the suite report.
pub fn assess_suite(
    facts: &[Fact],
    suite: &KnowledgeSuite,
    scorer: &dyn Scorer,
    config: &KarrConfig,
    options: &RunOptions,
) -> Result<SuiteReport> {
    if facts.is_empty() {
        return Err(Error::Invalid("at least one fact required".into()));
    }
    config.validate()?;
    let records = run_facts(facts, Method::Karr, options, |fact| {
        karr_fact(fact, suite, scorer, config).map(|r| FactRecord::from_karr(r, config.threshold))
    })?;
    let echo = serde_json::json!({ "karr": config });
    Ok(SuiteReport::build(Method::Karr, scorer.name(), records, echo))
}

/// Removes a journal after its report has been written.
pub fn discard_journal(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(io_err(path)(e)),
        _ => Ok(()),
    }
}
