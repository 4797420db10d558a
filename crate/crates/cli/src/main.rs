use std::collections::HashMap;
use std::fmt::Display;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crash_core::aggregate::{compute_stats, emit_report, rear_end_flags};
use crash_core::baselines::{compute_priors, keyword_defaults, keyword_predict, majority_predict};
use crash_core::config::PipelineConfig;
use crash_core::inference::{run_batch, BatchOptions, Checkpoint, HttpBackend, InferenceOutcome};
use crash_core::ingest::{
    category_summary, entity_distribution, filter_and_unify, merge_sources, Category, ColumnMap,
    DropReason, Redaction, SourceFile, UnifiedRecord,
};
use crash_core::jsonl;
use crash_core::review::{
    assign_cases, sample_cases, serve_until_interrupted, ReviewService, ReviewStore,
};
use crash_core::scoring::{
    derive_gold, insufficient_rate, reviewer_agreement, score, ReviewDimension, ReviewRecord,
    ScoreTable,
};
use crash_core::taxonomy::ClassificationRecord;

#[derive(Parser)]
#[command(name = "crash", version, about = "Incident-report causal classification pipeline")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge, filter and flatten raw report tables into records.jsonl.
    Ingest(IngestArgs),
    /// Classify records through the inference endpoint.
    Classify(ClassifyArgs),
    /// Run a baseline predictor.
    Baseline(BaselineArgs),
    /// Score predictors against gold labels derived from reviews.
    Score(ScoreArgs),
    /// Reviewer agreement and insufficient-context rates.
    Agree(AgreeArgs),
    /// Corpus-level statistics and report tables.
    Aggregate(AggregateArgs),
    /// Expert review service.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Export persisted reviews as JSON lines.
    Export(ExportArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    ads: Option<PathBuf>,
    #[arg(long)]
    adas: Option<PathBuf>,
    #[arg(long)]
    other: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Where dropped ids and reasons go.
    #[arg(long)]
    dropped: Option<PathBuf>,
    /// Directory for the filtering and entity distribution tables.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Replaces the configured redaction markers; repeatable.
    #[arg(long = "redaction-marker")]
    redaction_markers: Vec<String>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Re-query records whose checkpointed outcome is a failure.
    #[arg(long)]
    retry_failed: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Majority,
    Keyword,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    kind: BaselineKind,
    /// Records to predict for.
    #[arg(long)]
    input: PathBuf,
    /// Model outputs the majority priors are computed from.
    #[arg(long)]
    outputs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    reviews: PathBuf,
    /// Model outputs for the reviewed cases.
    #[arg(long)]
    crash: PathBuf,
    #[arg(long)]
    majority: Option<PathBuf>,
    #[arg(long)]
    keyword: Option<PathBuf>,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AgreeArgs {
    #[arg(long)]
    reviews: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    outputs: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum ReviewCommand {
    Serve(ServeArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    outputs: PathBuf,
    /// Comma-separated reviewer ids.
    #[arg(long, value_delimiter = ',', required = true)]
    reviewers: Vec<String>,
    #[arg(long, default_value_t = 10)]
    overlap: usize,
    /// Defaults to the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Review only this many cases, drawn with the seed.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value = "reviews.log")]
    store: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
    extra: Option<serde_json::Value>,
}

impl Failure {
    fn usage(message: impl Display) -> Self {
        Self {
            code: 2,
            kind: "usage",
            message: message.to_string(),
            extra: None,
        }
    }

    fn config(message: impl Display) -> Self {
        Self {
            code: 2,
            kind: "config",
            message: message.to_string(),
            extra: None,
        }
    }

    fn runtime(message: impl Display) -> Self {
        Self {
            code: 1,
            kind: "runtime",
            message: message.to_string(),
            extra: None,
        }
    }

    fn emit(&self) {
        let mut line = json!({ "error": self.kind, "message": self.message });
        if let Some(extra) = &self.extra {
            line["details"] = extra.clone();
        }
        eprintln!("{line}");
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn runtime<E: Display>(e: E) -> Failure {
    Failure::runtime(e)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    jsonl::read(path).map_err(runtime)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    jsonl::write(path, items).map_err(runtime)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn ingest(args: IngestArgs, config: &PipelineConfig) -> Result<()> {
    let sources: Vec<SourceFile> = [
        (args.ads, Category::Ads),
        (args.adas, Category::Adas),
        (args.other, Category::Other),
    ]
    .into_iter()
    .filter_map(|(p, c)| p.map(|p| SourceFile::new(p, c)))
    .collect();
    if sources.is_empty() {
        return Err(Failure::usage("give at least one of --ads, --adas, --other"));
    }
    let redaction = if args.redaction_markers.is_empty() {
        config.redaction().map_err(Failure::config)?
    } else {
        Redaction::new(&args.redaction_markers).map_err(Failure::usage)?
    };
    let raw = merge_sources(&sources, &ColumnMap::default()).map_err(runtime)?;
    let outcome = filter_and_unify(&raw, &redaction);
    write_jsonl(&args.out, &outcome.kept)?;
    if let Some(path) = &args.dropped {
        write_jsonl(path, &outcome.dropped)?;
    }
    if let Some(dir) = &args.report_dir {
        std::fs::create_dir_all(dir).map_err(runtime)?;
        let mut filtering = String::from("category,original,kept\n");
        let summary = category_summary(&raw, &outcome);
        for c in &summary {
            filtering.push_str(&format!("{},{},{}\n", c.category.as_str(), c.original, c.kept));
        }
        let (orig, kept) = summary
            .iter()
            .fold((0, 0), |(o, k), c| (o + c.original, k + c.kept));
        filtering.push_str(&format!("Total,{orig},{kept}\n"));
        write_text(&dir.join("filtering.csv"), &filtering)?;

        let mut entities = String::from("entity_make,count,percent\n");
        for e in entity_distribution(&outcome.kept) {
            entities.push_str(&format!("{},{},{:.2}\n", csv_field(&e.entity_make), e.count, e.percent));
        }
        write_text(&dir.join("entities.csv"), &entities)?;
    }
    let count = |reason| outcome.dropped.iter().filter(|d| d.reason == reason).count();
    println!(
        "kept {} of {} (missing {}, redacted {}, duplicate {})",
        outcome.kept.len(),
        raw.len(),
        count(DropReason::MissingNarrative),
        count(DropReason::RedactedNarrative),
        count(DropReason::DuplicateId),
    );
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn classify(args: ClassifyArgs, config: &PipelineConfig) -> Result<()> {
    let model = config.model_config();
    let template = config.template().map_err(Failure::config)?;
    let parallelism = args.parallelism.unwrap_or(config.inference.parallelism);
    if parallelism == 0 {
        return Err(Failure::usage("--parallelism must be at least 1"));
    }
    let records: Vec<UnifiedRecord> = read_jsonl(&args.input)?;
    let checkpoint_path = args.checkpoint.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".checkpoint");
        PathBuf::from(p)
    });
    let mut checkpoint = Checkpoint::open(&checkpoint_path).map_err(runtime)?;
    let backend = HttpBackend::new(&model).map_err(runtime)?;
    let outcomes: Vec<InferenceOutcome> = run_batch(
        &backend,
        &records,
        &model,
        &template,
        BatchOptions {
            parallelism,
            retry_failed: args.retry_failed,
        },
        Some(&mut checkpoint),
    )
    .map_err(runtime)?;

    let successes: Vec<&ClassificationRecord> =
        outcomes.iter().filter_map(InferenceOutcome::record).collect();
    jsonl::write(&args.out, successes.iter().copied()).map_err(runtime)?;
    let failed: Vec<_> = outcomes
        .iter()
        .filter_map(|o| {
            o.failure()
                .map(|f| json!({ "report_id": o.report_id, "failure": f, "attempts": o.attempts }))
        })
        .collect();
    log::info!("{} of {} records classified", successes.len(), outcomes.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            kind: "partial_failure",
            message: format!("{} of {} records failed", failed.len(), outcomes.len()),
            extra: Some(json!(failed)),
        })
    }
}

fn baseline(args: BaselineArgs, config: &PipelineConfig) -> Result<()> {
    let records: Vec<UnifiedRecord> = read_jsonl(&args.input)?;
    let predictions: Vec<ClassificationRecord> = match args.kind {
        BaselineKind::Majority => {
            let Some(outputs) = &args.outputs else {
                return Err(Failure::usage("--kind majority needs --outputs"));
            };
            let corpus: Vec<ClassificationRecord> = read_jsonl(outputs)?;
            let priors = compute_priors(&corpus).map_err(runtime)?;
            records
                .iter()
                .map(|r| majority_predict(&r.report_id, &priors))
                .collect()
        }
        BaselineKind::Keyword => {
            let rules = config.keyword_rules().map_err(Failure::config)?;
            let defaults = keyword_defaults();
            records
                .iter()
                .map(|r| keyword_predict(r, &rules, &defaults))
                .collect()
        }
    };
    write_jsonl(&args.out, &predictions)
}

fn score_cmd(args: ScoreArgs) -> Result<()> {
    let reviews: Vec<ReviewRecord> = read_jsonl(&args.reviews)?;
    let crash: Vec<ClassificationRecord> = read_jsonl(&args.crash)?;
    let gold = derive_gold(&reviews, &crash).map_err(runtime)?;
    let mut table = ScoreTable::default();
    table.push("CRASH", score(&crash, &gold).map_err(runtime)?);
    for (name, path) in [("Majority", &args.majority), ("Keyword", &args.keyword)] {
        if let Some(path) = path {
            let preds: Vec<ClassificationRecord> = read_jsonl(path)?;
            table.push(name, score(&preds, &gold).map_err(runtime)?);
        }
    }
    let csv = table.to_csv();
    if let Some(out) = &args.out {
        write_text(out, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn agree(args: AgreeArgs) -> Result<()> {
    let reviews: Vec<ReviewRecord> = read_jsonl(&args.reviews)?;
    let agreement = reviewer_agreement(&reviews).map_err(runtime)?;
    let mut csv = String::from("dimension,agreed,total,agreement,insufficient_rate\n");
    for dim in ReviewDimension::ALL {
        let a = agreement[&dim];
        csv.push_str(&format!(
            "{},{},{},{:.4},{:.4}\n",
            dim.heading(),
            a.agreed,
            a.total,
            a.rate(),
            insufficient_rate(&reviews, dim)
        ));
    }
    if let Some(out) = &args.out {
        write_text(out, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn aggregate(args: AggregateArgs, config: &PipelineConfig) -> Result<()> {
    let records: Vec<UnifiedRecord> = read_jsonl(&args.records)?;
    let outputs: Vec<ClassificationRecord> = read_jsonl(&args.outputs)?;
    let detector = config.rear_end_detector().map_err(Failure::config)?;
    let (flags, histogram) = rear_end_flags(&records, &detector);
    let mut stats = compute_stats(&outputs, &flags).map_err(runtime)?;
    stats.rear_end_patterns = histogram;
    emit_report(&stats, &args.out_dir).map_err(runtime)?;
    print!("{}", stats.summary());
    Ok(())
}

fn review_serve(args: ServeArgs, config: &PipelineConfig) -> Result<()> {
    let cases: Vec<UnifiedRecord> = read_jsonl(&args.cases)?;
    let outputs: Vec<ClassificationRecord> = read_jsonl(&args.outputs)?;
    let known: HashMap<&str, ()> = cases.iter().map(|c| (c.report_id.as_str(), ())).collect();
    let ids: Vec<String> = outputs
        .iter()
        .filter(|o| known.contains_key(o.report_id.as_str()))
        .map(|o| o.report_id.clone())
        .collect();
    let seed = args.seed.unwrap_or(config.seed);
    let ids = match args.sample {
        Some(n) => sample_cases(&ids, n, seed),
        None => ids,
    };
    let assignment =
        assign_cases(&ids, &args.reviewers, args.overlap, seed).map_err(Failure::usage)?;
    let store = ReviewStore::open(&args.store).map_err(runtime)?;
    let service = ReviewService::new(cases, outputs, assignment, store).map_err(runtime)?;
    let addr = SocketAddr::new(args.host, args.port);
    serve_until_interrupted(Arc::new(service), addr, |bound| {
        println!("review service listening on http://{bound}");
    })
    .map_err(runtime)
}

fn export(args: ExportArgs) -> Result<()> {
    let store = ReviewStore::open(&args.store).map_err(runtime)?;
    write_jsonl(&args.out, &store.snapshot())
}

fn run(cli: Cli) -> Result<()> {
    let config = PipelineConfig::resolve(cli.config.as_deref()).map_err(Failure::config)?;
    match cli.command {
        Command::Ingest(a) => ingest(a, &config),
        Command::Classify(a) => classify(a, &config),
        Command::Baseline(a) => baseline(a, &config),
        Command::Score(a) => score_cmd(a),
        Command::Agree(a) => agree(a),
        Command::Aggregate(a) => aggregate(a, &config),
        Command::Review(ReviewCommand::Serve(a)) => review_serve(a, &config),
        Command::Export(a) => export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.emit();
            ExitCode::from(f.code)
        }
    }
}
