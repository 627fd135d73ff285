//! `egb`: command-line frontend for entropy-gated branching search.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid configuration or
//! usage, 3 model or verifier transport failure.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use egb::harness::synthetic::{build_synthetic_suite, ArithmeticModel, SuiteSpec};
use egb::harness::{
    load_dataset, report_json, run_benchmark, summary_csv, sweep, BenchOptions, BenchOutcome,
    HarnessError, Problem, SweepAxis,
};
use egb::lm::{build_ngram_model, RemoteConfig, RemoteModel, ScriptedModel, Vocab};
use egb::search::{run_search_with, tau_serde, SearchError};
use egb::trace::{emit_trace, parse_trace, render_svg, write_records, RenderOptions};
use egb::verify::{OracleVerifier, RemoteVerifier, ScoreKind, ScriptedVerifier};
use egb::{Executor, Method, SearchConfig, SequenceModel, StepBoundaryRule, Verifier};
use egb::http::HttpConfig;

#[derive(Parser)]
#[command(name = "egb", version, about = "Entropy-gated branching search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search one prompt and print the answer.
    Solve(SolveArgs),
    /// Run a search configuration over a dataset.
    Bench(BenchArgs),
    /// Run one benchmark per value along a config axis.
    Sweep(SweepArgs),
    /// Plot an entropy trace as SVG.
    Render(RenderArgs),
    /// Generate a synthetic running-sum suite (dataset and scripted model).
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct SearchFlags {
    /// JSON file of search settings; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// standard, beam_search, egb or self_consistency.
    #[arg(long)]
    method: Option<Method>,
    /// Entropy threshold in bits; `inf` disables branching.
    #[arg(long, value_parser = parse_tau, allow_hyphen_values = true)]
    tau: Option<f64>,
    /// Beam size.
    #[arg(long = "K", short = 'K', allow_hyphen_values = true)]
    k: Option<i64>,
    /// Beam width.
    #[arg(long = "W", short = 'W', allow_hyphen_values = true)]
    w: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    max_steps: Option<i64>,
    #[arg(long)]
    seed: Option<u64>,
    /// scripted:<path>, ngram:<path>, synthetic:<spec.json> or remote.
    #[arg(long)]
    model: String,
    /// oracle[:<dataset.jsonl>], scripted:<path>, remote or remote:logit.
    #[arg(long)]
    verifier: String,
    /// Worker threads; 0 uses every logical core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    search: SearchFlags,
    #[arg(long, conflicts_with = "prompt_file", required_unless_present = "prompt_file")]
    prompt: Option<String>,
    #[arg(long)]
    prompt_file: Option<PathBuf>,
    /// Write the trace as JSONL.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write the search result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    search: SearchFlags,
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-problem traces.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Only run problems tagged with this split.
    #[arg(long)]
    split: Option<String>,
    /// Record wall-clock times (reports then differ between runs).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    bench: BenchArgs,
    /// tau, K, W or budget.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated values, e.g. 0,1,1.5,inf.
    #[arg(long, value_delimiter = ',', value_parser = parse_tau, required = true)]
    values: Vec<f64>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Draw the threshold line.
    #[arg(long, value_parser = parse_tau)]
    tau: Option<f64>,
    /// Plot a single beam.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    no_varentropy: bool,
    #[arg(long)]
    no_markers: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Suite spec JSON; defaults are used for missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for problems.jsonl and model.json.
    #[arg(long)]
    out: PathBuf,
    /// Upper bound on recorded contexts.
    #[arg(long, default_value_t = 200_000)]
    max_entries: usize,
}

fn parse_tau(text: &str) -> Result<f64, String> {
    tau_serde::parse(text)
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

impl From<SearchError> for Failure {
    fn from(e: SearchError) -> Self {
        let code = match &e {
            SearchError::Config(_) => 2,
            e if e.is_transport() => 3,
            _ => 1,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::Config(_) | HarnessError::Sweep(_) => 2,
            _ => 1,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Render(a) => render(a),
        Command::Synth(a) => synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn flag_name(field: &str) -> &str {
    match field {
        "tau" => "--tau",
        "beam_size" => "--K",
        "beam_width" => "--W",
        "max_steps" => "--max-steps",
        "seed" => "--seed",
        "method" => "--method",
        other => other,
    }
}

/// Effective config: method defaults, then the config file, then flags.
fn effective_config(flags: &SearchFlags) -> Result<SearchConfig, Failure> {
    let file: Map<String, Value> = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::config)?;
            match serde_json::from_str(&text) {
                Ok(Value::Object(map)) => map,
                Ok(_) => return Err(Failure::config(anyhow::anyhow!("{}: expected a JSON object", path.display()))),
                Err(e) => return Err(Failure::config(anyhow::anyhow!("{}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    let method = match (flags.method, file.get("method")) {
        (Some(m), _) => m,
        (None, Some(v)) => serde_json::from_value(v.clone())
            .map_err(|e| Failure::config(anyhow::anyhow!("config method: {e}")))?,
        (None, None) => Method::Egb,
    };
    let mut merged = match serde_json::to_value(SearchConfig::for_method(method)) {
        Ok(Value::Object(map)) => map,
        _ => unreachable!("configs serialize to objects"),
    };
    merged.extend(file);
    let mut explicit = Map::new();
    explicit.insert("method".into(), json!(method));
    if let Some(t) = flags.tau {
        explicit.insert("tau".into(), if t.is_finite() { json!(t) } else { json!("inf") });
    }
    // Counts are range-checked here so the message names the flag.
    for (field, value) in [
        ("beam_size", flags.k),
        ("beam_width", flags.w),
        ("max_steps", flags.max_steps),
    ] {
        if let Some(v) = value {
            if v < 1 {
                return Err(Failure::config(anyhow::anyhow!(
                    "{}: must be at least 1, got {v}",
                    flag_name(field)
                )));
            }
            explicit.insert(field.into(), json!(v));
        }
    }
    if let Some(s) = flags.seed {
        explicit.insert("seed".into(), json!(s));
    }
    merged.extend(explicit);
    let cfg: SearchConfig = serde_json::from_value(Value::Object(merged))
        .map_err(|e| Failure::config(anyhow::anyhow!("config: {e}")))?;
    cfg.validate().map_err(|e| {
        Failure::config(anyhow::anyhow!("{}: {e}", flag_name(&e.field)))
    })?;
    Ok(cfg)
}

fn load_model(spec: &str) -> Result<Box<dyn SequenceModel>, Failure> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let need_path = |what: &str| -> Result<&Path, Failure> {
        if arg.is_empty() {
            Err(Failure::config(anyhow::anyhow!("--model {what} needs a path: {what}:<path>")))
        } else {
            Ok(Path::new(arg))
        }
    };
    let model: Box<dyn SequenceModel> = match kind {
        "scripted" => Box::new(ScriptedModel::load(need_path("scripted")?).map_err(Failure::config)?),
        "ngram" => {
            let path = need_path("ngram")?;
            let corpus = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Box::new(build_ngram_model(&corpus, 3, 0.1).map_err(Failure::config)?)
        }
        "synthetic" => {
            let spec = read_suite_spec(Some(need_path("synthetic")?))?;
            Box::new(ArithmeticModel::new(spec).map_err(Failure::config)?)
        }
        "remote" => Box::new(RemoteModel::from_env(RemoteConfig::default()).map_err(Failure::config)?),
        other => {
            return Err(Failure::config(anyhow::anyhow!(
                "--model: unknown kind {other:?} (expected scripted, ngram, synthetic or remote)"
            )))
        }
    };
    Ok(model)
}

fn load_verifier(spec: &str) -> Result<Box<dyn Verifier>, Failure> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let verifier: Box<dyn Verifier> = match (kind, arg) {
        ("oracle", "") => Box::new(OracleVerifier::new()),
        ("oracle", path) => {
            let problems = load_dataset(Path::new(path)).map_err(Failure::config)?;
            Box::new(OracleVerifier::with_gold(
                problems.into_iter().map(|p| (p.prompt, p.gold_answer)),
            ))
        }
        ("scripted", path) if !path.is_empty() => {
            Box::new(ScriptedVerifier::load(Path::new(path)).map_err(Failure::config)?)
        }
        ("remote", "" | "probability") => Box::new(
            RemoteVerifier::from_env(ScoreKind::Probability, HttpConfig::default()).map_err(Failure::config)?,
        ),
        ("remote", "logit") => {
            Box::new(RemoteVerifier::from_env(ScoreKind::Logit, HttpConfig::default()).map_err(Failure::config)?)
        }
        _ => {
            return Err(Failure::config(anyhow::anyhow!(
                "--verifier: unknown spec {spec:?} (expected oracle[:<dataset>], scripted:<path>, remote or remote:logit)"
            )))
        }
    };
    Ok(verifier)
}

fn read_suite_spec(path: Option<&Path>) -> Result<SuiteSpec, Failure> {
    let Some(path) = path else {
        return Ok(SuiteSpec::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::config)?;
    let spec: SuiteSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::config(anyhow::anyhow!("{}: {e}", path.display())))?;
    spec.validate().map_err(Failure::config)?;
    Ok(spec)
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn solve(a: SolveArgs) -> CliResult {
    let cfg = effective_config(&a.search)?;
    let prompt = match (&a.prompt, &a.prompt_file) {
        (Some(p), _) => p.clone(),
        (None, Some(path)) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let model = load_model(&a.search.model)?;
    let verifier = load_verifier(&a.search.verifier)?;
    let exec = Executor::with_workers(a.search.workers);
    let result = run_search_with(&prompt, &cfg, model.as_ref(), verifier.as_ref(), &exec)?;

    println!("answer: {}", result.answer);
    println!(
        "method={} candidates={} model_calls={} tokens={} verifier_calls={} branch_events={}",
        result.method,
        result.total_candidates_generated,
        result.total_model_calls,
        result.total_tokens_generated,
        result.total_verifier_calls,
        result.branch_event_count()
    );
    if let Some(path) = &a.out {
        let doc = json!({
            "config": cfg,
            "model_id": model.model_id(),
            "verifier_id": verifier.verifier_id(),
            "result": result,
        });
        write_file(path, &(serde_json::to_string_pretty(&doc).expect("result serializes") + "\n"))?;
    }
    if let Some(path) = &a.trace_out {
        let mut buf = Vec::new();
        emit_trace(&result, &mut buf).context("writing trace")?;
        write_file(path, &String::from_utf8(buf).expect("trace is UTF-8"))?;
    }
    Ok(())
}

struct Loaded {
    cfg: SearchConfig,
    problems: Vec<Problem>,
    model: Box<dyn SequenceModel>,
    verifier: Box<dyn Verifier>,
    opts: BenchOptions,
}

fn load_bench(a: &BenchArgs) -> Result<Loaded, Failure> {
    let cfg = effective_config(&a.search)?;
    let problems = load_dataset(&a.dataset)?;
    let model = load_model(&a.search.model)?;
    let verifier = load_verifier(&a.search.verifier)?;
    let opts = BenchOptions {
        exec: Executor::with_workers(a.search.workers),
        timing: a.timing,
        collect_traces: a.trace_out.is_some(),
        split: a.split.clone(),
    };
    Ok(Loaded {
        cfg,
        problems,
        model,
        verifier,
        opts,
    })
}

fn write_traces(dir: &Path, outcome: &BenchOutcome, prefix: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (id, records) in &outcome.traces {
        let path = dir.join(format!("{prefix}{id}.jsonl"));
        let mut file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        write_records(records, &mut file).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Transport failures inside a run surface as exit code 3.
fn check_transport(outcomes: &[BenchOutcome]) -> CliResult {
    let failures: usize = outcomes.iter().map(|o| o.transport_failures).sum();
    if failures > 0 {
        return Err(Failure {
            code: 3,
            error: anyhow::anyhow!("{failures} problem(s) failed with transport errors"),
        });
    }
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult {
    let l = load_bench(&a)?;
    let outcome = run_benchmark(&l.problems, &l.cfg, l.model.as_ref(), l.verifier.as_ref(), &l.opts)?;
    let path = a.out.join("report.json");
    write_file(&path, &report_json(&outcome.report))?;
    if let Some(dir) = &a.trace_out {
        write_traces(dir, &outcome, "")?;
    }
    let agg = &outcome.report.aggregate;
    println!(
        "accuracy: {:.4} ({}/{}) failures={} mean_candidates={:.2}",
        agg.accuracy, agg.correct, agg.n_problems, agg.failures, agg.mean_candidates
    );
    println!("report: {}", path.display());
    check_transport(std::slice::from_ref(&outcome))
}

fn run_sweep(a: SweepArgs) -> CliResult {
    let l = load_bench(&a.bench)?;
    let outcomes = sweep(
        &l.problems,
        &l.cfg,
        a.axis,
        &a.values,
        l.model.as_ref(),
        l.verifier.as_ref(),
        &l.opts,
    )?;
    let out = &a.bench.out;
    for o in &outcomes {
        let point = o.report.sweep.as_ref().expect("sweep reports carry their point");
        let stem = format!("report-{}-{}", point.axis.as_str(), point.value);
        write_file(&out.join(format!("{stem}.json")), &report_json(&o.report))?;
        if let Some(dir) = &a.bench.trace_out {
            write_traces(dir, o, &format!("{stem}-"))?;
        }
        println!(
            "{}={} method={} accuracy={:.4} budget={}",
            point.axis.as_str(),
            point.value,
            o.report.method,
            o.report.aggregate.accuracy,
            o.report.aggregate.total_budget
        );
    }
    let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
    let csv_path = out.join("summary.csv");
    write_file(&csv_path, &summary_csv(&reports))?;
    println!("summary: {}", csv_path.display());
    check_transport(&outcomes)
}

fn render(a: RenderArgs) -> CliResult {
    let file = fs::File::open(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let records = parse_trace(BufReader::new(file)).with_context(|| a.trace.display().to_string())?;
    let opts = RenderOptions {
        show_varentropy: !a.no_varentropy,
        mark_branches: !a.no_markers,
        threshold: a.tau,
        beam: a.beam,
        ..RenderOptions::default()
    };
    let svg = render_svg(&records, &opts).with_context(|| a.trace.display().to_string())?;
    write_file(&a.out, &svg)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult {
    let spec = read_suite_spec(a.spec.as_deref())?;
    let suite = build_synthetic_suite(&spec).map_err(Failure::config)?;
    let prompts: Vec<String> = suite.problems.iter().map(|p| p.prompt.clone()).collect();
    let vocab = Vocab::new(suite.model.vocab().pieces().to_vec()).context("copying vocabulary")?;
    let script = ScriptedModel::record(
        "synthetic-script",
        &suite.model,
        vocab,
        &prompts,
        &StepBoundaryRule::default(),
        a.max_entries,
    )
    .context("recording scripted model")?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut lines = Vec::new();
    for p in &suite.problems {
        writeln!(lines, "{}", serde_json::to_string(p).expect("problems serialize")).expect("in-memory write");
    }
    write_file(&a.out.join("problems.jsonl"), &String::from_utf8(lines).expect("UTF-8"))?;
    let model_json = serde_json::to_string_pretty(&script.to_file()).expect("scripts serialize") + "\n";
    write_file(&a.out.join("model.json"), &model_json)?;
    println!(
        "wrote {} problems and {} scripted contexts to {}",
        suite.problems.len(),
        script.len(),
        a.out.display()
    );
    Ok(())
}
