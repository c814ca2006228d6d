use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use karr::analysis::{
    calibrate_threshold, kendall_tau, load_gold, recall_unknown, spurious_metrics, spurious_synthesize,
    variance_study, MethodConfig, SpuriousFact,
};
use karr::baselines::{assess_baseline, BaselineConfig};
use karr::engine::{KarrConfig, SubjectPool};
use karr::report::{Method, SuiteReport};
use karr::runner::{assess_suite, discard_journal, RunOptions};
use karr::scorer::{Scorer, ScorerSpec};
use karr::suite::{load_suite, load_templates, read_jsonl, sample_facts, write_facts, Fact, KnowledgeSuite};

const TOKEN_ENV: &str = "ASSESS_SCORER_TOKEN";

#[derive(Parser)]
#[command(name = "assess", version, about = "Assess how reliably a language model knows fact triples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every fact with the risk-ratio method.
    Run(RunArgs),
    /// Score facts with a baseline method.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Studies over per-fact reports and alternative inputs.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Pick the threshold that makes a target fraction of a report's facts known.
    Calibrate(CalibrateArgs),
    /// Build false facts from subject-free high-frequency predictions.
    SynthSpurious(SynthArgs),
    /// Draw a per-relation sample of facts.
    SampleFacts(SampleArgs),
}

#[derive(Args, Clone)]
struct SuiteArgs {
    #[arg(long)]
    facts: PathBuf,
    #[arg(long)]
    entities: PathBuf,
    #[arg(long)]
    templates: PathBuf,
}

#[derive(Args, Clone)]
struct ScorerArgs {
    /// table:PATH, remote:URL or uniform
    #[arg(long)]
    scorer: Option<ScorerSpec>,
    /// Per-request timeout for remote scorers, in seconds.
    #[arg(long)]
    timeout: Option<u64>,
}

#[derive(Args, Clone)]
struct ExecArgs {
    /// JSON config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Reuse facts already in the journal next to --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Clone, Default)]
struct KarrArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    ratio_cap: Option<f64>,
    #[arg(long, value_enum)]
    subject_pool: Option<PoolArg>,
    #[arg(long)]
    length_normalize: bool,
    /// Also report the relation treatment effect per fact.
    #[arg(long)]
    with_ate: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    Catalog,
    FactSubjects,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    exec: ExecArgs,
    #[command(flatten)]
    karr: KarrArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-fact table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineCommon {
    #[command(flatten)]
    suite: SuiteArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    exec: ExecArgs,
    /// Token budget for generated continuations.
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BaselineCommand {
    /// Object alias among the top-k generations of the first template.
    Lama {
        #[arg(long, default_value_t = 1, value_parser = parse_lama_k)]
        k: usize,
        #[command(flatten)]
        common: BaselineCommon,
    },
    /// Mean object probability over k sampled prompts.
    Kprompts {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: BaselineCommon,
    },
    /// Top-1 generation correct under every template.
    ConsistentAcc {
        #[command(flatten)]
        common: BaselineCommon,
    },
}

fn parse_lama_k(s: &str) -> Result<usize, String> {
    match s {
        "1" => Ok(1),
        "10" => Ok(10),
        _ => Err("k must be 1 or 10".into()),
    }
}

#[derive(Args)]
struct MethodArgs {
    /// karr, lama1, lama10, kprompts or consistent_acc
    #[arg(long, default_value = "karr")]
    method: Method,
    #[command(flatten)]
    karr: KarrArgs,
    #[arg(long)]
    max_tokens: Option<usize>,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Spread of the overall score across template variants.
    Variance {
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(flatten)]
        scorer: ScorerArgs,
        #[command(flatten)]
        exec: ExecArgs,
        #[command(flatten)]
        method: MethodArgs,
        /// Templates file; the i-th template of each relation belongs to variant i.
        #[arg(long)]
        variants: PathBuf,
        /// Number of variants; defaults to the fewest any used relation has.
        #[arg(long)]
        variant_count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// How often a method accepts synthesized false facts.
    Spurious {
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(flatten)]
        scorer: ScorerArgs,
        #[command(flatten)]
        exec: ExecArgs,
        #[command(flatten)]
        method: MethodArgs,
        /// Output of synth-spurious.
        #[arg(long)]
        spurious: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Kendall tau-b between report scores and gold means.
    Tau {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recall of facts humans rate below the cutoff.
    Recall {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        cutoff: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    report: PathBuf,
    /// Fraction of facts that should be judged known, in [0, 1].
    #[arg(long)]
    target: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    top_n: usize,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Comma-separated relation ids; defaults to every relation with facts.
    #[arg(long, value_delimiter = ',')]
    relations: Vec<String>,
    /// Spurious facts as JSON lines.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    #[arg(long)]
    per_relation: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    scorer: Option<ScorerSpec>,
    workers: Option<usize>,
    timeout_secs: Option<u64>,
    karr: KarrConfig,
    baseline: BaselineConfig,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Serialize)]
struct Meta {
    command: String,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    elapsed_ms: u128,
    version: &'static str,
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json_value(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

/// Writes run timing next to a report so the report itself stays reproducible.
fn write_meta(out: &Path, command: &str, started: u128, clock: Instant) -> anyhow::Result<()> {
    let meta = Meta {
        command: command.into(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        elapsed_ms: clock.elapsed().as_millis(),
        version: env!("CARGO_PKG_VERSION"),
    };
    write_json_value(&with_suffix(out, ".meta.json"), &serde_json::to_value(meta)?)
}

fn load(suite: &SuiteArgs) -> anyhow::Result<(KnowledgeSuite, Vec<Fact>)> {
    let loaded = load_suite(&suite.facts, &suite.entities, &suite.templates)?;
    let facts = loaded.facts().to_vec();
    Ok((loaded, facts))
}

fn build_scorer(args: &ScorerArgs, file: &FileConfig, suite: &KnowledgeSuite) -> anyhow::Result<Box<dyn Scorer>> {
    let Some(spec) = args.scorer.clone().or_else(|| file.scorer.clone()) else {
        bail!("a scorer is required (--scorer table:PATH | remote:URL | uniform)");
    };
    let timeout = Duration::from_secs(args.timeout.or(file.timeout_secs).unwrap_or(120));
    let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
    Ok(spec.build(suite, token, timeout).map_err(karr::Error::from)?)
}

fn run_options(exec: &ExecArgs, file: &FileConfig, out: &Path) -> RunOptions {
    RunOptions {
        workers: exec.workers.or(file.workers).unwrap_or(4),
        journal: Some(with_suffix(out, ".journal.jsonl")),
        resume: exec.resume,
    }
}

fn karr_config(args: &KarrArgs, file: &FileConfig) -> KarrConfig {
    let mut c = file.karr.clone();
    if let Some(k) = args.k {
        c.k = k;
    }
    if let Some(seed) = args.seed {
        c.seed = seed;
    }
    if let Some(t) = args.threshold {
        c.threshold = t;
    }
    if let Some(cap) = args.ratio_cap {
        c.ratio_cap = cap;
    }
    if let Some(pool) = args.subject_pool {
        c.subject_pool = match pool {
            PoolArg::Catalog => SubjectPool::Catalog,
            PoolArg::FactSubjects => SubjectPool::FactSubjects,
        };
    }
    c.length_normalize |= args.length_normalize;
    c.with_ate |= args.with_ate;
    c
}

fn baseline_config(max_tokens: Option<usize>, file: &FileConfig) -> BaselineConfig {
    let mut c = file.baseline.clone();
    if let Some(m) = max_tokens {
        c.max_tokens = m;
    }
    c
}

fn finish_report(
    report: &SuiteReport,
    out: &Path,
    csv: Option<&Path>,
    options: &RunOptions,
    command: &str,
    started: u128,
    clock: Instant,
) -> anyhow::Result<()> {
    report.write_json(out)?;
    if let Some(csv) = csv {
        report.write_csv_file(csv)?;
    }
    write_meta(out, command, started, clock)?;
    if let Some(journal) = &options.journal {
        discard_journal(journal)?;
    }
    println!(
        "{}: {:.4}% known ({} of {} facts)",
        report.method,
        report.overall_score,
        report.known_facts,
        report.assessed_facts
    );
    Ok(())
}

fn method_config(args: &MethodArgs, file: &FileConfig) -> MethodConfig {
    MethodConfig {
        karr: karr_config(&args.karr, file),
        baseline: baseline_config(args.max_tokens, file),
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    let started = unix_ms();
    let clock = Instant::now();
    match command {
        Command::Run(args) => {
            let file = FileConfig::load(args.exec.config.as_deref())?;
            let (suite, facts) = load(&args.suite)?;
            let config = karr_config(&args.karr, &file);
            config.validate()?;
            let scorer = build_scorer(&args.scorer, &file, &suite)?;
            let options = run_options(&args.exec, &file, &args.out);
            let report = assess_suite(&facts, &suite, scorer.as_ref(), &config, &options)?;
            finish_report(&report, &args.out, args.csv.as_deref(), &options, "run", started, clock)
        }
        Command::Baseline(cmd) => {
            let (method, common, (k, threshold, seed)) = match cmd {
                BaselineCommand::Lama { k, common } => {
                    let method = if k == 1 { Method::Lama1 } else { Method::Lama10 };
                    (method, common, (None, None, None))
                }
                BaselineCommand::Kprompts {
                    k,
                    threshold,
                    seed,
                    common,
                } => (Method::Kprompts, common, (k, threshold, seed)),
                BaselineCommand::ConsistentAcc { common } => (Method::ConsistentAcc, common, (None, None, None)),
            };
            let file = FileConfig::load(common.exec.config.as_deref())?;
            let (suite, facts) = load(&common.suite)?;
            let mut config = baseline_config(common.max_tokens, &file);
            if let Some(k) = k {
                config.kprompts_k = k;
            }
            if let Some(t) = threshold {
                config.kprompts_threshold = t;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            if config.kprompts_k == 0 {
                bail!("k must be at least 1");
            }
            let scorer = build_scorer(&common.scorer, &file, &suite)?;
            let options = run_options(&common.exec, &file, &common.out);
            let report = assess_baseline(method, &facts, &suite, scorer.as_ref(), &config, &options)?;
            let command = format!("baseline {method}");
            finish_report(&report, &common.out, common.csv.as_deref(), &options, &command, started, clock)
        }
        Command::Analyze(cmd) => analyze(cmd, started, clock),
        Command::Calibrate(args) => {
            let report = SuiteReport::read_json(&args.report)?;
            let scores: Vec<f64> = report.per_fact.iter().map(|r| r.rank_score()).collect();
            let calibration = calibrate_threshold(&scores, args.target)?;
            println!(
                "threshold {} (known fraction {})",
                calibration.threshold, calibration.achieved_fraction
            );
            if let Some(out) = args.out {
                let value = json!({
                    "study": "calibrate",
                    "inputs": { "report": args.report, "target": args.target, "method": report.method },
                    "result": calibration,
                });
                write_json_value(&out, &value)?;
            }
            Ok(())
        }
        Command::SynthSpurious(args) => {
            let file = FileConfig::load(args.config.as_deref())?;
            let (suite, facts) = load(&args.suite)?;
            let scorer = build_scorer(&args.scorer, &file, &suite)?;
            let relations: Vec<karr::RelationId> = if args.relations.is_empty() {
                let mut used: Vec<_> = facts.iter().map(|f| f.relation.clone()).collect();
                used.sort();
                used.dedup();
                used
            } else {
                args.relations.iter().map(karr::RelationId::new).collect()
            };
            let max_tokens = baseline_config(args.max_tokens, &file).max_tokens;
            let synthesis = spurious_synthesize(&suite, &relations, &facts, scorer.as_ref(), args.top_n, max_tokens)?;
            for relation in &synthesis.skipped_relations {
                eprintln!("skipped relation {relation}: no catalog entity among subject-free predictions");
            }
            let mut text = String::new();
            for fact in &synthesis.facts {
                text.push_str(&serde_json::to_string(fact)?);
                text.push('\n');
            }
            write_text(&args.out, &text)?;
            println!("{} spurious facts", synthesis.facts.len());
            Ok(())
        }
        Command::SampleFacts(args) => {
            let (suite, _) = load(&args.suite)?;
            if args.per_relation == 0 {
                bail!("--per-relation must be at least 1");
            }
            let sample = sample_facts(&suite, args.per_relation, args.seed);
            write_facts(&args.out, &sample)?;
            println!("{} facts", sample.len());
            Ok(())
        }
    }
}

fn analyze(cmd: AnalyzeCommand, started: u128, clock: Instant) -> anyhow::Result<()> {
    match cmd {
        AnalyzeCommand::Variance {
            suite,
            scorer,
            exec,
            method,
            variants,
            variant_count,
            out,
        } => {
            let file = FileConfig::load(exec.config.as_deref())?;
            let (loaded, facts) = load(&suite)?;
            let config = method_config(&method, &file);
            config.karr.validate()?;
            let backend = build_scorer(&scorer, &file, &loaded)?;
            let by_relation: BTreeMap<_, _> = load_templates(&variants)?
                .into_iter()
                .map(|r| (r.id, r.templates))
                .collect();
            let count = match variant_count {
                Some(c) => c,
                None => facts
                    .iter()
                    .map(|f| by_relation.get(&f.relation).map_or(0, Vec::len))
                    .min()
                    .unwrap_or(0),
            };
            let options = RunOptions {
                workers: exec.workers.or(file.workers).unwrap_or(4),
                journal: None,
                resume: false,
            };
            let study = variance_study(&loaded, &facts, &by_relation, count, |variant_suite, facts| {
                karr::analysis::evaluate_method(
                    method.method,
                    facts,
                    variant_suite,
                    backend.as_ref(),
                    &config,
                    &options,
                )
                .map(|r| r.overall_score)
            })?;
            println!("variance {} stddev {}", study.variance, study.stddev);
            let value = json!({
                "study": "variance",
                "inputs": {
                    "facts": suite.facts, "variants": variants, "variant_count": count,
                    "method": method.method, "scorer": backend.name(), "config": config,
                },
                "result": study,
            });
            write_json_value(&out, &value)?;
            write_meta(&out, "analyze variance", started, clock)
        }
        AnalyzeCommand::Spurious {
            suite,
            scorer,
            exec,
            method,
            spurious,
            out,
        } => {
            let file = FileConfig::load(exec.config.as_deref())?;
            let (loaded, facts) = load(&suite)?;
            let config = method_config(&method, &file);
            config.karr.validate()?;
            let backend = build_scorer(&scorer, &file, &loaded)?;
            let spurious_facts: Vec<SpuriousFact> = read_jsonl(&spurious)?.into_iter().map(|(_, f)| f).collect();
            let options = RunOptions {
                workers: exec.workers.or(file.workers).unwrap_or(4),
                journal: None,
                resume: false,
            };
            let metrics = spurious_metrics(
                method.method,
                &facts,
                &spurious_facts,
                &loaded,
                backend.as_ref(),
                &config,
                &options,
            )?;
            println!("SP {} deltaP {}", metrics.sp, metrics.delta_p);
            let value = json!({
                "study": "spurious",
                "inputs": {
                    "facts": suite.facts, "spurious": spurious, "method": method.method,
                    "scorer": backend.name(), "config": config,
                },
                "result": metrics,
            });
            write_json_value(&out, &value)?;
            write_meta(&out, "analyze spurious", started, clock)
        }
        AnalyzeCommand::Tau { report, gold, out } => {
            let loaded = SuiteReport::read_json(&report)?;
            let labels = load_gold(&gold)?;
            let tau = kendall_tau(&loaded.per_fact, &labels)?;
            println!("tau {} p_value {} n {}", tau.tau, tau.p_value, tau.n);
            if let Some(out) = out {
                let value = json!({
                    "study": "tau",
                    "inputs": { "report": report, "gold": gold, "method": loaded.method },
                    "result": tau,
                });
                write_json_value(&out, &value)?;
            }
            Ok(())
        }
        AnalyzeCommand::Recall {
            report,
            gold,
            cutoff,
            out,
        } => {
            let loaded = SuiteReport::read_json(&report)?;
            let labels = load_gold(&gold)?;
            let recall = recall_unknown(&loaded.per_fact, &labels, cutoff)?;
            println!("recall {} ({} of {})", recall.recall, recall.flagged, recall.positives);
            if let Some(out) = out {
                let value = json!({
                    "study": "recall",
                    "inputs": { "report": report, "gold": gold, "method": loaded.method },
                    "result": recall,
                });
                write_json_value(&out, &value)?;
            }
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let transport = err
        .chain()
        .any(|e| e.downcast_ref::<karr::Error>().is_some_and(karr::Error::is_transport));
    if transport {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
