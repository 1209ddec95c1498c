use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use adot::config::PipelineConfig;
use adot::external::{ExternalPlanner, ExternalReplanner};
use adot::ingest::{ingest, IngestSources};
use adot::lineage_log::{load_lineage, LineageLog};
use adot::persist::{load_lake, read_json, save_lake};
use adot::pipeline::{Engine, RunReport};
use adot_core::adapters::ScriptedPlanner;
use adot_core::cache::{CacheSnapshot, PlanCache};
use adot_core::chunking::ChunkParams;
use adot_core::embed::DEFAULT_DIM;
use adot_core::plan::parse_plan;
use adot_core::lineage::trace_answer;
use adot_core::{validate_plan, ExecutionEvent, GlobalSchema, HashedBowEmbedder, Planner};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "adot", version, about = "Plan, validate and execute multi-hop queries over a hybrid data lake")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a store directory from tables and documents.
    Ingest {
        /// Table file (CSV or JSON) or a directory of them; repeatable.
        #[arg(long, required = true)]
        tables: Vec<PathBuf>,
        /// Documents as JSON Lines with `document_id` and `text`.
        #[arg(long)]
        docs: Option<PathBuf>,
        /// JSON Lines `{table, row, document_id}` linking rows to documents.
        #[arg(long)]
        row_map: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a plan against a schema.
    Validate {
        #[arg(long)]
        plan: PathBuf,
        /// `schema.json`, or a store directory containing one.
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Execute a plan against a store.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lineage: Option<PathBuf>,
        /// Same as `--max-parallel 1`.
        #[arg(long)]
        sequential: bool,
    },
    /// Answer a question: cache, planner, validation, execution.
    Ask {
        #[arg(long)]
        question: String,
        #[command(flatten)]
        common: Common,
        /// `scripted:<file>` or `external:<command>`.
        #[arg(long)]
        planner: Option<String>,
        #[arg(long)]
        lineage: Option<PathBuf>,
        #[arg(long)]
        cache_file: Option<PathBuf>,
    },
    /// Inspect or clear a persisted plan cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Print the provenance closure of a binding.
    Trace {
        #[arg(long)]
        lineage: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        label: String,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    Stats {
        #[arg(long)]
        cache_file: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    Clear {
        #[arg(long)]
        cache_file: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print every execution event as a JSON line.
    #[arg(long)]
    stream: bool,
    #[arg(long)]
    max_parallel: Option<usize>,
    #[arg(long, value_enum)]
    dataops: Option<Switch>,
    #[arg(long)]
    max_fix_iterations: Option<usize>,
    /// `external:<command>`.
    #[arg(long)]
    replanner: Option<String>,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl ToString) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

type CliResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest {
            tables,
            docs,
            row_map,
            out,
        } => cmd_ingest(tables, docs, row_map, &out),
        Command::Validate { plan, schema, json } => cmd_validate(&plan, &schema, json),
        Command::Run {
            plan,
            common,
            lineage,
            sequential,
        } => cmd_run(&plan, common, lineage, sequential),
        Command::Ask {
            question,
            common,
            planner,
            lineage,
            cache_file,
        } => cmd_ask(&question, common, planner, lineage, cache_file),
        Command::Cache { action } => cmd_cache(action),
        Command::Trace { lineage, label } => cmd_trace(&lineage, &label),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("adot: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn print_json(value: &serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(value).expect("json"));
}

fn cmd_ingest(tables: Vec<PathBuf>, docs: Option<PathBuf>, row_map: Option<PathBuf>, out: &Path) -> CliResult {
    let config = load_config(None)?;
    let sources = IngestSources { tables, docs, row_map };
    let embedder = HashedBowEmbedder::new(DEFAULT_DIM);
    let (lake, report) = ingest(&sources, &embedder, ChunkParams::default(), config.alpha).map_err(|e| fail(1, e))?;
    save_lake(&lake, out).map_err(|e| fail(1, e))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print_json(&json!({
        "store": out,
        "schema_signature": lake.signature(),
        "report": report,
    }));
    Ok(0)
}

fn load_schema(path: &Path) -> Result<GlobalSchema, Failure> {
    let file = if path.is_dir() { path.join("schema.json") } else { path.to_path_buf() };
    read_json(&file).map_err(|e| fail(1, e))
}

fn read_plan(path: &Path) -> Result<Result<adot_core::Plan, String>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| fail(1, format!("{}: {e}", path.display())))?;
    Ok(parse_plan(&text).map_err(|e| e.to_string()))
}

fn cmd_validate(plan: &Path, schema: &Path, as_json: bool) -> CliResult {
    let schema = load_schema(schema)?;
    let report = match read_plan(plan)? {
        Ok(p) => validate_plan(&p, &schema),
        Err(message) => {
            if as_json {
                print_json(&json!({
                    "is_valid": false,
                    "errors": [{"code": "MissingField", "node_index": null, "detail": message}],
                }));
            } else {
                println!("invalid: {message}");
            }
            return Ok(2);
        }
    };
    if as_json {
        print_json(&serde_json::to_value(&report).expect("json"));
    } else if report.is_valid {
        println!("valid");
    } else {
        for e in &report.errors {
            match e.node_index {
                Some(i) => println!("{:?} (node {i}): {}", e.code, e.detail),
                None => println!("{:?}: {}", e.code, e.detail),
            }
        }
    }
    Ok(if report.is_valid { 0 } else { 2 })
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let base = match path {
        Some(p) => PipelineConfig::from_file(p).map_err(|e| fail(1, e))?,
        None => PipelineConfig::default(),
    };
    let config = base.apply_env(std::env::vars()).map_err(|e| fail(1, e))?;
    config.validate().map_err(|e| fail(1, e))?;
    Ok(config)
}

fn configure(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut config = load_config(common.config.as_deref())?;
    if let Some(s) = &common.store {
        config.store = Some(s.clone());
    }
    if let Some(n) = common.max_parallel {
        config.max_parallel = Some(n);
    }
    if let Some(d) = common.dataops {
        config.dataops = matches!(d, Switch::On);
    }
    if let Some(n) = common.max_fix_iterations {
        config.max_fix_iterations = n;
    }
    if let Some(r) = &common.replanner {
        config.replanner = Some(r.clone());
    }
    config.validate().map_err(|e| fail(1, e))?;
    Ok(config)
}

fn build_engine(config: PipelineConfig, lineage: Option<&Path>) -> Result<Engine, Failure> {
    let store = config.store.clone().ok_or_else(|| fail(1, "no store given (--store)"))?;
    let lake = load_lake(&store, config.alpha).map_err(|e| fail(1, e))?;
    let log = match lineage {
        Some(p) => LineageLog::to_file(p).map_err(|e| fail(1, e))?,
        None => LineageLog::in_memory(),
    };
    let replanner = match config.replanner.as_deref() {
        None => None,
        Some(spec) => match spec.strip_prefix("external:") {
            Some(cmd) => Some(ExternalReplanner::new(cmd)),
            None => return Err(fail(1, format!("unknown replanner `{spec}`; expected external:<command>"))),
        },
    };
    let mut engine = Engine::new(lake, config).with_lineage(Arc::new(log));
    if let Some(r) = replanner {
        engine = engine.with_replanner(Box::new(r));
    }
    Ok(engine)
}

fn planner_from_spec(spec: &str) -> Result<Box<dyn Planner>, Failure> {
    if let Some(path) = spec.strip_prefix("scripted:") {
        let text = std::fs::read_to_string(path).map_err(|e| fail(1, format!("{path}: {e}")))?;
        return Ok(Box::new(ScriptedPlanner::from_json(&text).map_err(|e| fail(1, e))?));
    }
    if let Some(cmd) = spec.strip_prefix("external:") {
        return Ok(Box::new(ExternalPlanner::new(cmd)));
    }
    Err(fail(1, format!("unknown planner `{spec}`; expected scripted:<file> or external:<command>")))
}

/// Prints events as JSON lines, serialized so lines never interleave.
fn stream_sink() -> impl Fn(&ExecutionEvent) + Sync {
    let lock = Mutex::new(());
    move |event: &ExecutionEvent| {
        let _guard = lock.lock().expect("stdout lock");
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{}", serde_json::to_string(event).expect("json"));
        let _ = out.flush();
    }
}

fn report_json(report: &RunReport) -> serde_json::Value {
    json!({
        "status": report.status.as_str(),
        "answer": report.answer,
        "exposed": report.exposed,
        "feedback": report.feedback,
        "recommendations": report.recommendations,
        "history": report.history,
        "cache_strategy": report.cache_strategy,
        "message": report.message,
    })
}

fn cmd_run(plan: &Path, common: Common, lineage: Option<PathBuf>, sequential: bool) -> CliResult {
    let mut config = configure(&common)?;
    if sequential {
        config.max_parallel = Some(1);
    }
    let plan = match read_plan(plan)? {
        Ok(p) => p,
        Err(message) => {
            eprintln!("adot: invalid plan: {message}");
            return Ok(2);
        }
    };
    let engine = build_engine(config, lineage.as_deref())?;
    let sink = stream_sink();
    let report = engine.run_plan(plan, common.stream.then_some(&sink as _));
    print_json(&report_json(&report));
    Ok(report.status.exit_code() as u8)
}

fn load_cache(path: Option<&Path>, config: &PipelineConfig) -> Result<PlanCache, Failure> {
    match path {
        Some(p) if p.exists() => {
            let snap: CacheSnapshot = read_json(p).map_err(|e| fail(1, e))?;
            PlanCache::restore(snap).map_err(|e| fail(1, e))
        }
        _ => Ok(PlanCache::new(config.cache_capacity, config.cache_threshold)),
    }
}

fn save_cache(path: &Path, snapshot: &CacheSnapshot) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(snapshot).expect("json");
    std::fs::write(path, text).map_err(|e| fail(1, format!("{}: {e}", path.display())))
}

fn cmd_ask(
    question: &str,
    common: Common,
    planner: Option<String>,
    lineage: Option<PathBuf>,
    cache_file: Option<PathBuf>,
) -> CliResult {
    let mut config = configure(&common)?;
    if let Some(p) = planner {
        config.planner = Some(p);
    }
    if let Some(c) = cache_file {
        config.cache_file = Some(c);
    }
    let cache_path = config.cache_file.clone();
    let cache = load_cache(cache_path.as_deref(), &config)?;
    let context = config.context();
    let planner = config.planner.clone();
    let mut engine = build_engine(config, lineage.as_deref())?.with_cache(cache);
    if let Some(spec) = planner {
        engine = engine.with_planner(planner_from_spec(&spec)?);
    }
    let sink = stream_sink();
    let report = engine.ask(question, &context, common.stream.then_some(&sink as _));
    if let Some(p) = &cache_path {
        save_cache(p, &engine.cache_snapshot())?;
    }
    let mut out = report_json(&report);
    out["planner_calls"] = json!(engine.counters().planner_calls);
    print_json(&out);
    Ok(report.status.exit_code() as u8)
}

fn cmd_cache(action: CacheAction) -> CliResult {
    let (cache_file, config, clear) = match action {
        CacheAction::Stats { cache_file, config } => (cache_file, config, false),
        CacheAction::Clear { cache_file, config } => (cache_file, config, true),
    };
    let config = load_config(config.as_deref())?;
    let path = cache_file.or(config.cache_file.clone());
    let mut cache = load_cache(path.as_deref(), &config)?;
    if clear {
        cache.clear();
        if let Some(p) = &path {
            save_cache(p, &cache.snapshot())?;
        }
        println!("cache cleared");
        return Ok(0);
    }
    print_json(&serde_json::to_value(cache.stats()).expect("json"));
    Ok(0)
}

fn cmd_trace(lineage: &Path, label: &str) -> CliResult {
    let records = load_lineage(lineage).map_err(|e| fail(1, e))?;
    let sources = trace_answer(&records, label).map_err(|e| fail(1, e))?;
    print_json(&json!({ "label": label, "sources": sources }));
    Ok(0)
}
