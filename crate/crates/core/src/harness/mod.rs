//! Benchmark orchestration: datasets, grading, reports and sweeps.

pub mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::normalize_answer;
use crate::exec::Executor;
use crate::lm::SequenceModel;
use crate::search::{run_search_with, ConfigError, Method, SearchConfig};
use crate::seed::{derive, hash_bytes};
use crate::trace::{build_trace, TraceRecord};
use crate::verify::Verifier;

pub use synthetic::{build_synthetic_suite, ArithmeticModel, SpikeProfile, SuiteSpec, SyntheticSuite};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub id: String,
    pub prompt: String,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("duplicate problem id {0:?}")]
    DuplicateId(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid sweep: {0}")]
    Sweep(String),
}

/// Parses a JSONL dataset (`{id, prompt, gold_answer, tags?}` per line).
/// Blank lines are skipped.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<Problem>, HarnessError> {
    let mut problems = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| HarnessError::Io {
            path: format!("line {line_no}"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let problem: Problem = serde_json::from_str(&line).map_err(|e| HarnessError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        if normalize_answer(&problem.gold_answer).is_empty() {
            return Err(HarnessError::Schema {
                line: line_no,
                message: "gold_answer is empty".into(),
            });
        }
        if !ids.insert(problem.id.clone()) {
            return Err(HarnessError::DuplicateId(problem.id));
        }
        problems.push(problem);
    }
    Ok(problems)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Problem>, HarnessError> {
    let file = std::fs::File::open(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(std::io::BufReader::new(file))
}

/// Exact match after normalization.
pub fn grade(predicted: &str, gold: &str) -> bool {
    normalize_answer(predicted) == normalize_answer(gold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemRecord {
    pub id: String,
    pub predicted: String,
    pub gold: String,
    pub correct: bool,
    pub candidates_generated: usize,
    pub model_calls: usize,
    pub tokens_generated: usize,
    pub verifier_calls: usize,
    pub branch_events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub n_problems: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub failures: usize,
    pub mean_candidates: f64,
    pub mean_model_calls: f64,
    pub mean_tokens: f64,
    pub mean_verifier_calls: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_wall_time_ms: Option<f64>,
    /// Budget per problem: samples for self-consistency, `K * W` otherwise.
    pub total_budget: usize,
}

impl Aggregate {
    pub fn from_records(records: &[ProblemRecord], total_budget: usize) -> Self {
        let n = records.len();
        let mean = |f: fn(&ProblemRecord) -> usize| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(f).sum::<usize>() as f64 / n as f64
            }
        };
        let correct = records.iter().filter(|r| r.correct).count();
        let times: Option<Vec<f64>> = records.iter().map(|r| r.wall_time_ms).collect();
        Self {
            n_problems: n,
            correct,
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            failures: records.iter().filter(|r| r.error.is_some()).count(),
            mean_candidates: mean(|r| r.candidates_generated),
            mean_model_calls: mean(|r| r.model_calls),
            mean_tokens: mean(|r| r.tokens_generated),
            mean_verifier_calls: mean(|r| r.verifier_calls),
            mean_wall_time_ms: times
                .filter(|t| !t.is_empty())
                .map(|t| t.iter().sum::<f64>() / t.len() as f64),
            total_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    /// Method label; sweep endpoints are labelled by the method they equal.
    pub method: String,
    pub model_id: String,
    pub verifier_id: String,
    pub config: SearchConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepPoint>,
    /// Tag the problems were filtered by, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub problems: Vec<ProblemRecord>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    pub exec: Executor,
    /// Record wall-clock times (makes reports run-dependent).
    pub timing: bool,
    pub collect_traces: bool,
    /// Only run problems carrying this tag.
    pub split: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub report: RunReport,
    /// Trace records per problem id.
    pub traces: BTreeMap<String, Vec<TraceRecord>>,
    pub transport_failures: usize,
}

/// Seed of one problem's search under master seed `seed`.
pub fn problem_seed(seed: u64, id: &str) -> u64 {
    derive(&[seed, hash_bytes(id.as_bytes())])
}

/// Runs the configured search on every problem. Per-problem failures are
/// recorded and the run continues. Records are ordered by problem id.
pub fn run_benchmark<M, V>(
    problems: &[Problem],
    cfg: &SearchConfig,
    model: &M,
    verifier: &V,
    opts: &BenchOptions,
) -> Result<BenchOutcome, HarnessError>
where
    M: SequenceModel + ?Sized,
    V: Verifier + ?Sized,
{
    cfg.validate()?;
    let mut selected: Vec<&Problem> = problems
        .iter()
        .filter(|p| opts.split.as_ref().is_none_or(|s| p.tags.contains(s)))
        .collect();
    if selected.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    selected.sort_by(|a, b| a.id.cmp(&b.id));
    let outcomes = opts.exec.map(&selected, |p| {
        let cfg = SearchConfig {
            seed: problem_seed(cfg.seed, &p.id),
            ..cfg.clone()
        };
        let started = Instant::now();
        let result = run_search_with(&p.prompt, &cfg, model, verifier, &opts.exec);
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        (result, elapsed)
    });
    let mut records = Vec::with_capacity(selected.len());
    let mut traces = BTreeMap::new();
    let mut transport_failures = 0;
    for (p, (result, elapsed)) in selected.iter().zip(outcomes) {
        let wall_time_ms = opts.timing.then_some(elapsed);
        match result {
            Ok(r) => {
                if opts.collect_traces {
                    traces.insert(p.id.clone(), build_trace(&r));
                }
                records.push(ProblemRecord {
                    id: p.id.clone(),
                    correct: grade(&r.answer, &p.gold_answer),
                    predicted: r.answer.clone(),
                    gold: p.gold_answer.clone(),
                    candidates_generated: r.total_candidates_generated,
                    model_calls: r.total_model_calls,
                    tokens_generated: r.total_tokens_generated,
                    verifier_calls: r.total_verifier_calls,
                    branch_events: r.steps.iter().map(|s| s.branch_events).sum(),
                    wall_time_ms,
                    error: None,
                });
            }
            Err(e) => {
                transport_failures += usize::from(e.is_transport());
                records.push(ProblemRecord {
                    id: p.id.clone(),
                    predicted: String::new(),
                    gold: p.gold_answer.clone(),
                    correct: false,
                    candidates_generated: 0,
                    model_calls: 0,
                    tokens_generated: 0,
                    verifier_calls: 0,
                    branch_events: 0,
                    wall_time_ms,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let aggregate = Aggregate::from_records(&records, cfg.budget());
    Ok(BenchOutcome {
        report: RunReport {
            method: cfg.method.as_str().to_string(),
            model_id: model.model_id().to_string(),
            verifier_id: verifier.verifier_id().to_string(),
            config: cfg.clone(),
            sweep: None,
            split: opts.split.clone(),
            problems: records,
            aggregate,
        },
        traces,
        transport_failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Tau,
    K,
    W,
    Budget,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tau => "tau",
            Self::K => "k",
            Self::W => "w",
            Self::Budget => "budget",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tau" => Ok(Self::Tau),
            "k" | "beam_size" => Ok(Self::K),
            "w" | "beam_width" => Ok(Self::W),
            "budget" => Ok(Self::Budget),
            other => Err(format!("unknown sweep axis {other:?} (expected tau, K, W or budget)")),
        }
    }
}

fn format_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn count(axis: SweepAxis, v: f64) -> Result<usize, HarnessError> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(HarnessError::Sweep(format!(
            "{} values must be positive integers, got {}",
            axis.as_str(),
            format_value(v)
        )))
    }
}

/// Splits a beam-style budget `b = K * W` with `W` the largest divisor of
/// `b` not above `sqrt(b)`.
pub fn factor_budget(b: usize) -> (usize, usize) {
    let w = (1..=b).take_while(|w| w * w <= b).filter(|w| b.is_multiple_of(*w)).last().unwrap_or(1);
    (b / w, w)
}

/// The configuration of one sweep point. τ sweeps map `0` to beam search
/// and `inf` to self-consistency.
pub fn sweep_config(base: &SearchConfig, axis: SweepAxis, value: f64) -> Result<SearchConfig, HarnessError> {
    let mut cfg = base.clone();
    cfg.seed = derive(&[base.seed, hash_bytes(axis.as_str().as_bytes()), value.to_bits()]);
    match axis {
        SweepAxis::Tau => {
            if value.is_nan() || value < 0.0 {
                return Err(HarnessError::Sweep(format!("tau {value} must be >= 0")));
            }
            cfg.tau = value;
            cfg.method = if value == 0.0 {
                Method::BeamSearch
            } else if value.is_infinite() {
                Method::SelfConsistency
            } else {
                Method::Egb
            };
        }
        SweepAxis::K => cfg.beam_size = count(axis, value)?,
        SweepAxis::W => cfg.beam_width = count(axis, value)?,
        SweepAxis::Budget => {
            let b = count(axis, value)?;
            match cfg.method {
                Method::SelfConsistency => cfg.beam_size = b,
                Method::Standard => {
                    return Err(HarnessError::Sweep(
                        "standard decoding has a fixed budget of 1".into(),
                    ))
                }
                Method::BeamSearch | Method::Egb => {
                    (cfg.beam_size, cfg.beam_width) = factor_budget(b);
                }
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One benchmark per value along `axis`, each with its own derived seed.
pub fn sweep<M, V>(
    problems: &[Problem],
    base: &SearchConfig,
    axis: SweepAxis,
    values: &[f64],
    model: &M,
    verifier: &V,
    opts: &BenchOptions,
) -> Result<Vec<BenchOutcome>, HarnessError>
where
    M: SequenceModel + ?Sized,
    V: Verifier + ?Sized,
{
    if values.is_empty() {
        return Err(HarnessError::Sweep("no values".into()));
    }
    let configs = values
        .iter()
        .map(|v| sweep_config(base, axis, *v))
        .collect::<Result<Vec<_>, _>>()?;
    configs
        .into_iter()
        .zip(values)
        .map(|(cfg, v)| {
            let mut outcome = run_benchmark(problems, &cfg, model, verifier, opts)?;
            outcome.report.sweep = Some(SweepPoint {
                axis,
                value: format_value(*v),
            });
            Ok(outcome)
        })
        .collect()
}

/// One CSV row per report.
pub fn summary_csv(reports: &[RunReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "axis",
        "value",
        "method",
        "tau",
        "K",
        "W",
        "seed",
        "n_problems",
        "correct",
        "accuracy",
        "failures",
        "mean_candidates",
        "mean_model_calls",
        "mean_tokens",
        "mean_verifier_calls",
        "total_budget",
    ])
    .expect("in-memory csv");
    for r in reports {
        let (axis, value) = r
            .sweep
            .as_ref()
            .map_or(("", String::new()), |s| (s.axis.as_str(), s.value.clone()));
        let a = &r.aggregate;
        w.write_record([
            axis.to_string(),
            value,
            r.method.clone(),
            format_value(r.config.tau),
            r.config.beam_size.to_string(),
            r.config.beam_width.to_string(),
            r.config.seed.to_string(),
            a.n_problems.to_string(),
            a.correct.to_string(),
            a.accuracy.to_string(),
            a.failures.to_string(),
            a.mean_candidates.to_string(),
            a.mean_model_calls.to_string(),
            a.mean_tokens.to_string(),
            a.mean_verifier_calls.to_string(),
            a.total_budget.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub fn report_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}
