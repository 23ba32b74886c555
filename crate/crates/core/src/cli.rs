//! Command-line entry points. `main` only parses arguments and maps the
//! result of [`dispatch`] to an exit code.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::agents::{AgentBackends, AgentKind, Endpoint, TemplateSet};
use crate::config::{BackendKind, ConfigError, OcrKind, Overrides, RunConfig, TraceMode};
use crate::evaluator::{
    aggregate, evaluate_task, scaling_series, summary_table, write_excluded_csv, write_f1_csv, write_scaling_csv,
    EvaluationReport, ExcludedTask, PinnedTraces, RenderTraces, ScalingScore, TraceSource,
};
use crate::fixtures;
use crate::gateway::{ChatBackend, HttpBackend, RetryPolicy, ScriptedBackend};
use crate::orchestrator::{
    run_best_of_n, run_direct, run_hint, run_metal, ChartTask, Deps, LoopConfig, RunError, RunTrace, Variant,
};
use crate::persist::{RunDir, RunManifest, TaskRecord, TaskStatus};
use crate::render::{ChartRenderer, ElementTrace, SubprocessRenderer};
use crate::verifier::{ChartScorer, CommandOcr, FixtureOcr, MultiCriteriaVerifier, TextExtractor};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_TASK: i32 = 2;
pub const EXIT_RUN: i32 = 3;
pub const EXIT_INTERRUPTED: i32 = 130;

#[derive(Debug, Parser)]
#[command(
    name = "chartsmith",
    version,
    about = "Chart-to-code generation with critique/revise agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one task directory.
    Run {
        task: PathBuf,
        #[command(flatten)]
        common: RunArgs,
    },
    /// Run every task under a dataset directory, then evaluate where gold programs exist.
    Bench {
        dataset: PathBuf,
        #[command(flatten)]
        common: RunArgs,
        /// Where f1.csv and the summary go (under {reports}/{run_id}).
        #[arg(long, default_value = "reports")]
        reports: PathBuf,
    },
    /// Build score-vs-budget curves from finished run directories.
    ReportScaling {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Output directory; defaults to reports/{name of the first run dir}.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "verifier-avg")]
        score: ScoreArg,
    },
    /// Check the fixture corpus: decodes, exact self-similarity, pinned traces.
    FixturesVerify {
        /// Corpus directory; the embedded corpus when omitted.
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Also render every gold program and compare against its reference pixels.
        #[arg(long)]
        render: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Metal,
    Direct,
    Hint,
    BestOfN,
    MetalV,
    MetalC,
    MetalS,
}

impl MethodArg {
    pub fn name(self) -> &'static str {
        match self {
            MethodArg::Metal => "metal",
            MethodArg::Direct => "direct",
            MethodArg::Hint => "hint",
            MethodArg::BestOfN => "best_of_n",
            MethodArg::MetalV => "metal_v",
            MethodArg::MetalC => "metal_c",
            MethodArg::MetalS => "metal_s",
        }
    }

    fn variant(self) -> Option<Variant> {
        match self {
            MethodArg::Metal => Some(Variant::Full),
            MethodArg::MetalV => Some(Variant::VisualOnly),
            MethodArg::MetalC => Some(Variant::CodeOnly),
            MethodArg::MetalS => Some(Variant::SingleCritique),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    VerifierAvg,
    EvalF1,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "metal")]
    pub method: MethodArg,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Runs directory (overrides `out` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip tasks that already have a completed trace.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Best-of-N candidate count.
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long = "t-max")]
    pub t_max: Option<u32>,
    /// Run both critiques before the pass check.
    #[arg(long = "paper-order")]
    pub paper_order: bool,
    /// Defaults to `{method}-seed{seed}`.
    #[arg(long = "run-id")]
    pub run_id: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            workers: self.workers,
            seed: self.seed,
            n: self.n,
            t_max: self.t_max,
            paper_order: self.paper_order,
        }
    }
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(EXIT_CONFIG, e.to_string())
    }
}

pub fn dispatch(cli: Cli, cancel: &AtomicBool) -> Result<(), CliError> {
    match cli.command {
        Command::Run { task, common } => cmd_run(&task, &common, cancel),
        Command::Bench {
            dataset,
            common,
            reports,
        } => cmd_bench(&dataset, &common, &reports, cancel),
        Command::ReportScaling { run_dirs, out, score } => cmd_report_scaling(&run_dirs, out.as_deref(), score),
        Command::FixturesVerify { dir, render, config } => {
            cmd_fixtures_verify(dir.as_deref(), render, config.as_deref())
        }
    }
}

/// Shared, task-independent pieces of a run.
struct Session {
    cfg: RunConfig,
    method: MethodArg,
    run_id: String,
    templates: TemplateSet,
    http: Option<AgentBackends>,
    renderer: SubprocessRenderer,
    scorer: MultiCriteriaVerifier,
}

impl Session {
    /// Everything is validated here, before any model call.
    fn build(cfg: RunConfig, args: &RunArgs, ocr_roots: &[&Path]) -> Result<Self, CliError> {
        let templates = match &cfg.prompts_dir {
            Some(d) => TemplateSet::load_dir(d).map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?,
            None => TemplateSet::builtin(),
        };
        let http = match cfg.model.backend {
            BackendKind::Http => Some(http_backends(&cfg)),
            BackendKind::Scripted => None,
        };
        let ocr: Arc<dyn TextExtractor> = match cfg.verifier.ocr {
            OcrKind::Command => Arc::new(CommandOcr::new(cfg.verifier.ocr_command.clone().unwrap_or_default())),
            OcrKind::Fixture => {
                let mut ocr = FixtureOcr::new();
                let roots = ocr_roots.iter().copied().chain(cfg.verifier.ocr_fixtures.as_deref());
                for root in roots {
                    ocr.extend(
                        FixtureOcr::from_dir(root)
                            .map_err(|e| CliError::new(EXIT_CONFIG, format!("fixture OCR: {e}")))?,
                    );
                }
                Arc::new(ocr)
            }
        };
        let run_id = args
            .run_id
            .clone()
            .unwrap_or_else(|| format!("{}-seed{}", args.method.name(), cfg.seed));
        Ok(Session {
            renderer: SubprocessRenderer::new(cfg.render_settings()),
            scorer: MultiCriteriaVerifier::new(ocr, cfg.schedule()),
            method: args.method,
            run_id,
            templates,
            http,
            cfg,
        })
    }

    fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            t_max: self.cfg.loop_.t_max,
            variant: self.method.variant().unwrap_or(Variant::Full),
            paper_order: self.cfg.loop_.paper_order,
            return_last: self.cfg.loop_.return_last,
        }
    }

    fn backends_for(&self, task_dir: &Path) -> Result<AgentBackends, String> {
        if let Some(b) = &self.http {
            return Ok(b.clone());
        }
        let script = self
            .cfg
            .model
            .script
            .as_deref()
            .expect("validated: scripted backend has a script");
        let path = if script.is_absolute() {
            script.to_path_buf()
        } else {
            task_dir.join(script)
        };
        let backend = ScriptedBackend::from_json_file(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(AgentBackends::uniform(Endpoint::new(
            Arc::new(backend),
            self.cfg.model.model_id.clone(),
        )))
    }

    fn run_task(&self, task: &ChartTask, task_dir: &Path, cancel: &AtomicBool) -> TaskRecord {
        let backends = match self.backends_for(task_dir) {
            Ok(b) => b,
            Err(e) => return failed_record(task, self.method, e),
        };
        let sampling = self.cfg.sampling();
        let deps = Deps {
            backends: &backends,
            templates: &self.templates,
            sampling: &sampling,
            renderer: &self.renderer as &dyn ChartRenderer,
            scorer: &self.scorer as &dyn ChartScorer,
            cancel: Some(cancel),
        };
        let result = match self.method {
            MethodArg::Direct => run_direct(task, &deps),
            MethodArg::Hint => run_hint(task, &deps),
            MethodArg::BestOfN => run_best_of_n(task, self.cfg.loop_.n, &deps),
            _ => run_metal(task, &self.loop_config(), &deps),
        };
        match result {
            Ok(trace) => TaskRecord {
                status: TaskStatus::Completed,
                error: None,
                trace,
            },
            Err(e) => {
                let status = if matches!(e, RunError::Cancelled { .. }) {
                    TaskStatus::Cancelled
                } else {
                    TaskStatus::Failed
                };
                match e.partial_trace() {
                    Some(partial) => TaskRecord {
                        status,
                        error: Some(e.to_string()),
                        trace: partial.clone(),
                    },
                    None => failed_record(task, self.method, e.to_string()),
                }
            }
        }
    }

    fn manifest(&self, tasks: Vec<String>) -> RunManifest {
        RunManifest {
            run_id: self.run_id.clone(),
            method: self.method.name().to_string(),
            seed: self.cfg.seed,
            tasks,
            config: serde_json::to_value(&self.cfg).expect("config serializes"),
        }
    }

    fn trace_source(&self, tasks: &[(PathBuf, ChartTask)]) -> Result<Box<dyn TraceSource + '_>, CliError> {
        match self.cfg.eval.traces {
            TraceMode::Shim => Ok(Box::new(RenderTraces(&self.renderer))),
            TraceMode::Pinned => {
                let mut pinned = match &self.cfg.eval.pinned_dir {
                    Some(d) => PinnedTraces::from_dir(d).map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?,
                    None => PinnedTraces::new(),
                };
                for (dir, task) in tasks {
                    let (Some(gold), Ok(raw)) = (
                        &task.gold_program,
                        std::fs::read_to_string(dir.join(fixtures::TRACE_FILE)),
                    ) else {
                        continue;
                    };
                    let trace = ElementTrace::from_sidecar_json(&raw).map_err(|e| {
                        CliError::new(EXIT_TASK, format!("{}: {e}", dir.join(fixtures::TRACE_FILE).display()))
                    })?;
                    pinned.insert(gold, trace);
                }
                Ok(Box::new(pinned))
            }
        }
    }
}

fn http_backends(cfg: &RunConfig) -> AgentBackends {
    let timeout = Duration::from_secs(cfg.model.timeout_secs);
    let retry = RetryPolicy {
        max_attempts: cfg.model.max_attempts,
        ..RetryPolicy::default()
    };
    let make = |base_url: &str| -> Arc<dyn ChatBackend> { Arc::new(HttpBackend::from_env(base_url, timeout, retry)) };
    let default_backend = make(&cfg.model.base_url);
    let mut backends = AgentBackends::uniform(Endpoint::new(default_backend.clone(), cfg.model.model_id.clone()));
    for (name, ep) in &cfg.model.agents {
        let kind: AgentKind = name.parse().expect("validated agent name");
        let backend = match &ep.base_url {
            Some(url) => make(url),
            None => default_backend.clone(),
        };
        let model_id = ep.model_id.clone().unwrap_or_else(|| cfg.model.model_id.clone());
        backends = backends.with_override(kind, Endpoint::new(backend, model_id));
    }
    backends
}

fn failed_record(task: &ChartTask, method: MethodArg, error: String) -> TaskRecord {
    let trace: RunTrace = serde_json::from_value(serde_json::json!({
        "task_id": task.task_id,
        "method": match method {
            MethodArg::Direct => "direct",
            MethodArg::Hint => "hint",
            MethodArg::BestOfN => "best_of_n",
            _ => "metal",
        },
        "variant": method.variant(),
        "hint": null,
        "rounds": [],
        "stopped_early": false,
        "final_program": null,
        "final_round": null,
        "unscored_tail": null,
        "ledger": { "entries": [] },
    }))
    .expect("empty trace deserializes");
    TaskRecord {
        status: TaskStatus::Failed,
        error: Some(error),
        trace,
    }
}

fn persist_err(e: impl std::fmt::Display) -> CliError {
    CliError::new(EXIT_RUN, e.to_string())
}

fn print_record(record: &TaskRecord) {
    let t = &record.trace;
    for r in &t.rounds {
        let s = r.decision.scores;
        println!(
            "{} round {}: {:<13} color={:.4} text={:.4} structure={:.4} mean={:.4}{}",
            t.task_id,
            r.round,
            r.render.status.as_str(),
            s.color,
            s.text,
            s.structure,
            s.mean(),
            if r.decision.passed { " PASS" } else { "" }
        );
    }
    let usage = t.ledger.total();
    println!(
        "{}: {:?}, {} rounds, {} calls, {} completion tokens{}",
        t.task_id,
        record.status,
        t.rounds.len(),
        t.gateway_calls(),
        usage.completion_tokens,
        record.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
    );
}

fn cmd_run(task_dir: &Path, args: &RunArgs, cancel: &AtomicBool) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides())?;
    let task = ChartTask::load_dir(task_dir).map_err(|e| CliError::new(EXIT_TASK, e.to_string()))?;
    let session = Session::build(cfg, args, &[task_dir])?;
    let run = RunDir::new(&session.cfg.out, &session.run_id);
    if args.resume && run.is_complete(&task.task_id) {
        println!("{}: already complete, skipped", task.task_id);
        return Ok(());
    }
    run.write_manifest(&session.manifest(vec![task.task_id.clone()]))
        .map_err(persist_err)?;
    let record = session.run_task(&task, task_dir, cancel);
    run.write_task(&record).map_err(persist_err)?;
    print_record(&record);
    println!("trace: {}", run.task_dir(&task.task_id).display());
    match record.status {
        TaskStatus::Completed => Ok(()),
        TaskStatus::Cancelled => Err(CliError::new(EXIT_INTERRUPTED, "interrupted; partial trace saved")),
        TaskStatus::Failed => Err(CliError::new(EXIT_RUN, record.error.unwrap_or_default())),
    }
}

/// Task subdirectories (those holding a reference image), sorted.
fn dataset_tasks(dataset: &Path) -> Result<Vec<(PathBuf, ChartTask)>, CliError> {
    let entries =
        std::fs::read_dir(dataset).map_err(|e| CliError::new(EXIT_TASK, format!("{}: {e}", dataset.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let tasks: Vec<_> = dirs
        .into_iter()
        .map(|d| ChartTask::load_dir(&d).map(|t| (d, t)))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::new(EXIT_TASK, e.to_string()))?;
    if tasks.is_empty() {
        return Err(CliError::new(
            EXIT_TASK,
            format!("no tasks under {}", dataset.display()),
        ));
    }
    Ok(tasks)
}

fn cmd_bench(dataset: &Path, args: &RunArgs, reports: &Path, cancel: &AtomicBool) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides())?;
    let tasks = dataset_tasks(dataset)?;
    let session = Session::build(cfg, args, &[dataset])?;
    let traces = session.trace_source(&tasks)?;
    let run = RunDir::new(&session.cfg.out, &session.run_id);
    run.write_manifest(&session.manifest(tasks.iter().map(|(_, t)| t.task_id.clone()).collect()))
        .map_err(persist_err)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(session.cfg.workers)
        .build()
        .map_err(|e| CliError::new(EXIT_RUN, e.to_string()))?;
    let outcomes: Vec<Result<TaskOutcome, CliError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(dir, task)| bench_task(&session, &run, traces.as_ref(), dir, task, args.resume, cancel))
            .collect()
    });

    let mut reports_rows: Vec<EvaluationReport> = Vec::new();
    let mut excluded = Vec::new();
    let mut failed = Vec::new();
    let mut interrupted = false;
    for outcome in outcomes {
        let o = outcome?;
        match o.status {
            TaskStatus::Completed => {}
            TaskStatus::Failed => failed.push(o.task_id.clone()),
            TaskStatus::Cancelled => interrupted = true,
        }
        match o.eval {
            Some(Ok(r)) => reports_rows.push(r),
            Some(Err(reason)) => excluded.push(ExcludedTask {
                task_id: o.task_id,
                reason,
            }),
            None => {}
        }
    }

    let report_dir = reports.join(&session.run_id);
    std::fs::create_dir_all(&report_dir).map_err(persist_err)?;
    if reports_rows.is_empty() {
        println!("no task has a gold program; skipping F1 evaluation");
    } else {
        let summary = aggregate(&reports_rows, &excluded).map_err(persist_err)?;
        write_f1_csv(&report_dir.join("f1.csv"), &reports_rows, &summary).map_err(persist_err)?;
        write_excluded_csv(&report_dir.join("excluded.csv"), &excluded).map_err(persist_err)?;
        let table = summary_table(&[(session.method.name(), &summary)]);
        std::fs::write(report_dir.join("summary.md"), &table).map_err(persist_err)?;
        print!("{table}");
        for e in &excluded {
            println!("excluded {}: {}", e.task_id, e.reason);
        }
        println!("f1: {}", report_dir.join("f1.csv").display());
    }
    if interrupted {
        return Err(CliError::new(EXIT_INTERRUPTED, "interrupted; partial traces saved"));
    }
    if !failed.is_empty() {
        return Err(CliError::new(
            EXIT_RUN,
            format!("{} task(s) failed: {}", failed.len(), failed.join(", ")),
        ));
    }
    Ok(())
}

struct TaskOutcome {
    task_id: String,
    status: TaskStatus,
    /// `None` without a gold program; `Err` when the gold program is excluded.
    eval: Option<Result<EvaluationReport, String>>,
}

fn bench_task(
    session: &Session,
    run: &RunDir,
    traces: &dyn TraceSource,
    dir: &Path,
    task: &ChartTask,
    resume: bool,
    cancel: &AtomicBool,
) -> Result<TaskOutcome, CliError> {
    let existing = if resume {
        run.read_task(&task.task_id).ok()
    } else {
        None
    };
    let (mut record, fresh) = match existing {
        Some(r) if r.status == TaskStatus::Completed => (r, false),
        _ => {
            if cancel.load(Ordering::Relaxed) {
                return Ok(TaskOutcome {
                    task_id: task.task_id.clone(),
                    status: TaskStatus::Cancelled,
                    eval: None,
                });
            }
            (session.run_task(task, dir, cancel), true)
        }
    };

    let mut dirty = fresh;
    let eval = match &task.gold_program {
        None => None,
        Some(gold) => match run.read_eval(&task.task_id).filter(|_| !fresh) {
            Some(saved) => Some(Ok(saved)),
            None => {
                let final_src = record.trace.final_program.as_ref().map(|p| p.source.as_str());
                match evaluate_task(&task.task_id, gold, final_src, traces) {
                    Ok(report) => {
                        for r in &mut record.trace.rounds {
                            r.eval_f1 = evaluate_task(&task.task_id, gold, Some(&r.program.source), traces)
                                .ok()
                                .map(|e| e.average_f1);
                        }
                        run.write_eval(&report).map_err(persist_err)?;
                        dirty = true;
                        Some(Ok(report))
                    }
                    Err(e) => Some(Err(e.to_string())),
                }
            }
        },
    };
    if dirty {
        run.write_task(&record).map_err(persist_err)?;
    }
    if fresh {
        print_record(&record);
    }
    Ok(TaskOutcome {
        task_id: task.task_id.clone(),
        status: record.status,
        eval,
    })
}

const PLOT_SCRIPT: &str = r#"# Plots mean best score against log2 completion tokens from scaling.csv.
import csv
import pathlib
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = pathlib.Path(__file__).resolve().parent
src = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else here / "scaling.csv"
with open(src, newline="") as f:
    rows = list(csv.DictReader(f))
xs = [int(r["log2_tokens"]) for r in rows]
ys = [float(r["mean_best_score"]) for r in rows]
fig, ax = plt.subplots(figsize=(5, 3.5))
ax.plot(xs, ys, marker="o")
ax.set_xticks(xs)
ax.set_xticklabels([f"$2^{{{x}}}$" for x in xs])
ax.set_xlabel("completion tokens")
ax.set_ylabel("best score so far")
ax.grid(alpha=0.3)
fig.tight_layout()
fig.savefig(src.with_name("scaling.png"), dpi=150)
"#;

fn cmd_report_scaling(run_dirs: &[PathBuf], out: Option<&Path>, score: ScoreArg) -> Result<(), CliError> {
    let mut traces = Vec::new();
    for d in run_dirs {
        if !d.is_dir() {
            return Err(CliError::new(
                EXIT_TASK,
                format!("{} is not a run directory", d.display()),
            ));
        }
        let records = RunDir::open(d.clone())
            .load_tasks()
            .map_err(|e| CliError::new(EXIT_TASK, e.to_string()))?;
        traces.extend(
            records
                .into_iter()
                .filter(|r| !r.trace.rounds.is_empty())
                .map(|r| r.trace),
        );
    }
    if traces.is_empty() {
        return Err(CliError::new(
            EXIT_TASK,
            "no task traces found in the given run directories",
        ));
    }
    let score = match score {
        ScoreArg::VerifierAvg => ScalingScore::VerifierAvg,
        ScoreArg::EvalF1 => ScalingScore::EvalF1,
    };
    let series = scaling_series(&traces, score);
    let out = match out {
        Some(o) => o.to_path_buf(),
        None => {
            let name = run_dirs[0]
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scaling".into());
            Path::new("reports").join(name)
        }
    };
    std::fs::create_dir_all(&out).map_err(persist_err)?;
    write_scaling_csv(&out.join("scaling.csv"), &series).map_err(persist_err)?;
    std::fs::write(out.join("plot_scaling.py"), PLOT_SCRIPT).map_err(persist_err)?;
    println!("log2_tokens  mean_best_score  n_tasks");
    for p in &series {
        println!("{:>11}  {:>15.4}  {:>7}", p.log2_tokens, p.mean_best_score, p.n_tasks);
    }
    if series.is_empty() {
        println!("(no task reached a budget between 2^9 and 2^13 tokens)");
    }
    println!("scaling: {}", out.join("scaling.csv").display());
    Ok(())
}

fn cmd_fixtures_verify(dir: Option<&Path>, render: bool, config: Option<&Path>) -> Result<(), CliError> {
    let corpus = match dir {
        Some(d) => fixtures::load_dir(d).map_err(|e| CliError::new(EXIT_TASK, format!("{}: {e}", d.display())))?,
        None => fixtures::builtin(),
    };
    if corpus.is_empty() {
        return Err(CliError::new(EXIT_TASK, "fixture corpus is empty"));
    }
    let renderer = if render {
        let cfg = RunConfig::load(config, &Overrides::default())?;
        Some(SubprocessRenderer::new(cfg.render_settings()))
    } else {
        None
    };
    let results: Vec<(String, Result<(), String>)> = corpus
        .par_iter()
        .map(|f| {
            (
                f.name.clone(),
                fixtures::verify_fixture(f, renderer.as_ref().map(|r| r as &dyn ChartRenderer)),
            )
        })
        .collect();
    let mut bad = Vec::new();
    for (name, r) in &results {
        match r {
            Ok(()) => println!("ok    {name}"),
            Err(e) => {
                println!("FAIL  {name}: {e}");
                bad.push(name.clone());
            }
        }
    }
    if bad.is_empty() {
        println!("{} fixtures verified", results.len());
        Ok(())
    } else {
        Err(CliError::new(
            EXIT_RUN,
            format!("corrupt fixture(s): {}", bad.join(", ")),
        ))
    }
}
