//! The refinement loop, the three baselines and the ablation variants.
//!
//! Per round: render y_t, score it, stop if the verifier passes, otherwise
//! collect critiques and revise into y_{t+1}. By default the pass check runs
//! before the critiques so a passing round spends no critique calls;
//! `paper_order` computes both critiques first and then checks.

mod ledger;
mod task;

use std::sync::atomic::{AtomicBool, Ordering};

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use ledger::{BudgetLedger, LedgerEntry};
pub use task::{ChartTask, TaskError, GOLD_FILE, INSTRUCTION_FILE, REFERENCE_FILE};

use crate::agents::{
    AgentBackends, AgentCall, AgentError, Agents, CodeCritique, GeneratedProgram, SamplingConfig, TemplateSet,
    VisualCritique,
};
use crate::render::{ChartRenderer, RenderOutcome, RenderStatus};
use crate::verifier::{ChartScorer, PassDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Visual critique only (no code critic).
    VisualOnly,
    /// Code critique only (no visual critic).
    CodeOnly,
    /// One unified critic replaces both.
    SingleCritique,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Metal,
    Direct,
    Hint,
    BestOfN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub t_max: u32,
    pub variant: Variant,
    /// Critique before the pass check, as in the printed algorithm.
    pub paper_order: bool,
    /// Return the last program instead of the best-scoring one when no round passes.
    pub return_last: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            t_max: 5,
            variant: Variant::Full,
            paper_order: false,
            return_last: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub program: GeneratedProgram,
    pub render: RenderOutcome,
    pub visual_critique: Option<VisualCritique>,
    pub code_critique: Option<CodeCritique>,
    pub decision: PassDecision,
    /// Gateway calls made while this round was current, in order.
    pub calls: Vec<AgentCall>,
    #[serde(default)]
    pub revision_failed: bool,
    #[serde(default)]
    pub critique_degraded: bool,
    /// Element-level F1 of this round's program, when evaluated.
    #[serde(default)]
    pub eval_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub task_id: String,
    pub method: Method,
    pub variant: Option<Variant>,
    pub hint: Option<String>,
    pub rounds: Vec<RoundRecord>,
    pub stopped_early: bool,
    /// `None` only for partial traces of failed runs.
    pub final_program: Option<GeneratedProgram>,
    pub final_round: Option<u32>,
    /// Revision produced after the last scored round (paper order only); never rendered.
    pub unscored_tail: Option<GeneratedProgram>,
    pub ledger: BudgetLedger,
}

impl RunTrace {
    fn new(task_id: &str, method: Method, variant: Option<Variant>) -> Self {
        RunTrace {
            task_id: task_id.to_string(),
            method,
            variant,
            hint: None,
            rounds: Vec::new(),
            stopped_early: false,
            final_program: None,
            final_round: None,
            unscored_tail: None,
            ledger: BudgetLedger::new(),
        }
    }

    pub fn gateway_calls(&self) -> usize {
        self.ledger.calls()
    }

    pub fn best_round_index(&self) -> Option<usize> {
        best_index(self.rounds.iter().map(|r| r.decision.scores.mean()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("agent chain failed: {source}")]
    AgentChain {
        #[source]
        source: AgentError,
        partial: Box<RunTrace>,
    },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("run cancelled")]
    Cancelled { partial: Box<RunTrace> },
    #[error("invalid run parameters: {0}")]
    InvalidParams(String),
}

impl RunError {
    pub fn partial_trace(&self) -> Option<&RunTrace> {
        match self {
            RunError::AgentChain { partial, .. } | RunError::Cancelled { partial } => Some(partial),
            _ => None,
        }
    }
}

/// Everything a run needs besides the task.
#[derive(Clone, Copy)]
pub struct Deps<'a> {
    pub backends: &'a AgentBackends,
    pub templates: &'a TemplateSet,
    pub sampling: &'a SamplingConfig,
    pub renderer: &'a dyn ChartRenderer,
    pub scorer: &'a dyn ChartScorer,
    pub cancel: Option<&'a AtomicBool>,
}

impl<'a> Deps<'a> {
    fn agents(&self) -> Agents<'a> {
        Agents::new(self.templates, self.backends, self.sampling)
    }

    fn cancelled(&self) -> bool {
        self.cancel.is_some_and(|c| c.load(Ordering::Relaxed))
    }
}

/// Index of the first maximum.
pub fn best_index(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Mutable state of one run, so failures can hand back a partial trace.
struct RunState<'t> {
    trace: RunTrace,
    task: &'t ChartTask,
    reference: RgbImage,
}

impl<'t> RunState<'t> {
    fn new(task: &'t ChartTask, method: Method, variant: Option<Variant>) -> Result<Self, RunError> {
        Ok(RunState {
            trace: RunTrace::new(&task.task_id, method, variant),
            reference: task.reference_image()?,
            task,
        })
    }

    fn instruction(&self) -> Option<&'t str> {
        self.task.instruction.as_deref()
    }

    fn fail(mut self, source: AgentError, round: u32, pending: Option<RoundRecord>) -> RunError {
        if let Some(call) = source.consumed_call() {
            self.trace.ledger.record(round, call);
        }
        self.trace.rounds.extend(pending);
        RunError::AgentChain {
            source,
            partial: Box::new(self.trace),
        }
    }

    fn record(&mut self, round: u32, calls: &mut Vec<AgentCall>, call: Option<AgentCall>) {
        if let Some(call) = call {
            self.trace.ledger.record(round, call);
            calls.push(call);
        }
    }
}

struct Critiques {
    visual: Option<VisualCritique>,
    code: Option<CodeCritique>,
    degraded: bool,
}

/// Calls made are pushed to `calls` even when a later critic fails.
fn critique_round(
    agents: &Agents<'_>,
    variant: Variant,
    program: &GeneratedProgram,
    render: &RenderOutcome,
    reference_png: &[u8],
    instruction: Option<&str>,
    calls: &mut Vec<AgentCall>,
) -> Result<Critiques, AgentError> {
    let mut out = Critiques {
        visual: None,
        code: None,
        degraded: false,
    };
    match variant {
        Variant::SingleCritique => {
            let m = agents.critique_unified(render, reference_png, program, instruction)?;
            calls.extend(m.call);
            let (v, c, degraded) = m.value;
            out = Critiques {
                visual: Some(v),
                code: Some(c),
                degraded,
            };
        }
        _ => {
            if matches!(variant, Variant::Full | Variant::VisualOnly) {
                let m = agents.critique_visual(render, reference_png, instruction)?;
                calls.extend(m.call);
                out.visual = Some(m.value);
            }
            if matches!(variant, Variant::Full | Variant::CodeOnly) {
                let m = agents.critique_code(program, instruction)?;
                calls.extend(m.call);
                out.code = Some(m.value);
            }
        }
    }
    Ok(out)
}

/// The full refinement loop with the configured variant.
pub fn run_metal(task: &ChartTask, cfg: &LoopConfig, deps: &Deps<'_>) -> Result<RunTrace, RunError> {
    if cfg.t_max == 0 {
        return Err(RunError::InvalidParams("t_max must be >= 1".into()));
    }
    let agents = deps.agents();
    let mut st = RunState::new(task, Method::Metal, Some(cfg.variant))?;
    let instruction = st.instruction();

    let mut calls = Vec::new();
    let mut program = match agents.generate(&task.reference_png, instruction, None) {
        Ok(m) => {
            st.record(0, &mut calls, m.call);
            m.value
        }
        Err(e) => return Err(st.fail(e, 0, None)),
    };

    for t in 0..cfg.t_max {
        if deps.cancelled() {
            return Err(RunError::Cancelled {
                partial: Box::new(st.trace),
            });
        }
        let render = deps.renderer.render(&program);
        let decision = deps.scorer.score(&render, &st.reference, t);
        let mut record = RoundRecord {
            round: t,
            program: program.clone(),
            render,
            visual_critique: None,
            code_critique: None,
            decision,
            calls: std::mem::take(&mut calls),
            revision_failed: false,
            critique_degraded: false,
            eval_f1: None,
        };
        let last = t + 1 == cfg.t_max;

        let critique = |st: &mut RunState<'_>, record: &mut RoundRecord| -> Result<(), AgentError> {
            let mut made = Vec::new();
            let result = critique_round(
                &agents,
                cfg.variant,
                &record.program,
                &record.render,
                &task.reference_png,
                instruction,
                &mut made,
            );
            for call in made {
                st.record(t, &mut record.calls, Some(call));
            }
            let c = result?;
            record.visual_critique = c.visual;
            record.code_critique = c.code;
            record.critique_degraded = c.degraded;
            Ok(())
        };

        if cfg.paper_order {
            if let Err(e) = critique(&mut st, &mut record) {
                return Err(st.fail(e, t, Some(record)));
            }
        }
        if record.decision.passed {
            st.trace.rounds.push(record);
            st.trace.stopped_early = true;
            break;
        }
        if last && !cfg.paper_order {
            // No later round would render a revision.
            st.trace.rounds.push(record);
            break;
        }
        if !cfg.paper_order {
            if let Err(e) = critique(&mut st, &mut record) {
                return Err(st.fail(e, t, Some(record)));
            }
        }

        let next = match revise_with_retry(&agents, &record, instruction) {
            Ok((next, made, failed)) => {
                for call in made {
                    st.record(t, &mut record.calls, Some(call));
                }
                record.revision_failed = failed;
                next
            }
            Err((e, made)) => {
                for call in made {
                    st.record(t, &mut record.calls, Some(call));
                }
                return Err(st.fail(e, t, Some(record)));
            }
        };
        st.trace.rounds.push(record);
        if last {
            st.trace.unscored_tail = Some(next);
            break;
        }
        program = next;
    }

    finish_loop(&mut st.trace, cfg);
    Ok(st.trace)
}

type ReviseOutcome = Result<(GeneratedProgram, Vec<AgentCall>, bool), (AgentError, Vec<AgentCall>)>;

/// Revision with one retry on an unparseable reply; a second failure carries y_t forward.
fn revise_with_retry(agents: &Agents<'_>, record: &RoundRecord, instruction: Option<&str>) -> ReviseOutcome {
    let mut calls = Vec::new();
    let visual = record.visual_critique.as_ref();
    let code = record.code_critique.as_ref();
    for attempt in 0..2 {
        match agents.revise(&record.program, visual, code, instruction) {
            Ok(m) => {
                calls.extend(m.call);
                return Ok((m.value, calls, false));
            }
            Err(AgentError::CodeExtraction { call, reply, .. }) => {
                calls.push(call);
                if attempt == 1 {
                    log::warn!(
                        "round {}: revision reply had no code twice; keeping current program",
                        record.round
                    );
                    return Ok((record.program.child(record.program.source.clone(), reply), calls, true));
                }
            }
            Err(e) => return Err((e, calls)),
        }
    }
    unreachable!("loop returns on the second attempt")
}

fn finish_loop(trace: &mut RunTrace, cfg: &LoopConfig) {
    let pick = if trace.stopped_early {
        trace.rounds.len().checked_sub(1)
    } else if cfg.return_last {
        if let Some(tail) = &trace.unscored_tail {
            trace.final_program = Some(tail.clone());
            trace.final_round = Some(tail.round);
            return;
        }
        trace.rounds.len().checked_sub(1)
    } else {
        trace.best_round_index()
    };
    if let Some(i) = pick {
        trace.final_program = Some(trace.rounds[i].program.clone());
        trace.final_round = Some(trace.rounds[i].round);
    }
}

/// Ablation entry point: [`run_metal`] with `variant` substituted.
pub fn run_variant(
    task: &ChartTask,
    variant: Variant,
    cfg: &LoopConfig,
    deps: &Deps<'_>,
) -> Result<RunTrace, RunError> {
    let cfg = LoopConfig { variant, ..*cfg };
    run_metal(task, &cfg, deps)
}

fn single_round(st: &mut RunState<'_>, deps: &Deps<'_>, program: GeneratedProgram, calls: Vec<AgentCall>) {
    let render = deps.renderer.render(&program);
    let decision = deps.scorer.score(&render, &st.reference, 0);
    st.trace.stopped_early = decision.passed;
    st.trace.final_program = Some(program.clone());
    st.trace.final_round = Some(0);
    st.trace.rounds.push(RoundRecord {
        round: 0,
        program,
        render,
        visual_critique: None,
        code_critique: None,
        decision,
        calls,
        revision_failed: false,
        critique_degraded: false,
        eval_f1: None,
    });
}

/// Direct prompting: one generation, render and score.
pub fn run_direct(task: &ChartTask, deps: &Deps<'_>) -> Result<RunTrace, RunError> {
    let mut st = RunState::new(task, Method::Direct, None)?;
    let mut calls = Vec::new();
    let program = match deps.agents().generate(&task.reference_png, st.instruction(), None) {
        Ok(m) => {
            st.record(0, &mut calls, m.call);
            m.value
        }
        Err(e) => return Err(st.fail(e, 0, None)),
    };
    single_round(&mut st, deps, program, calls);
    Ok(st.trace)
}

/// Hint-enhanced prompting: describe the reference first, then generate with the hint.
pub fn run_hint(task: &ChartTask, deps: &Deps<'_>) -> Result<RunTrace, RunError> {
    let agents = deps.agents();
    let mut st = RunState::new(task, Method::Hint, None)?;
    let mut calls = Vec::new();
    let hint = match agents.describe_hint(&task.reference_png, st.instruction()) {
        Ok(m) => {
            st.record(0, &mut calls, m.call);
            m.value
        }
        Err(e) => return Err(st.fail(e, 0, None)),
    };
    st.trace.hint = Some(hint.clone());
    let program = match agents.generate(&task.reference_png, st.instruction(), Some(&hint)) {
        Ok(m) => {
            st.record(0, &mut calls, m.call);
            m.value
        }
        Err(e) => return Err(st.fail(e, 0, None)),
    };
    single_round(&mut st, deps, program, calls);
    Ok(st.trace)
}

/// Best-of-N: `n` independent generations, each rendered and scored; the
/// highest mean verifier score wins, ties to the lowest index. Every candidate
/// is judged against the initial threshold.
///
/// Generations are issued in candidate order so scripted backends replay
/// deterministically; rendering and scoring run concurrently.
pub fn run_best_of_n(task: &ChartTask, n: u32, deps: &Deps<'_>) -> Result<RunTrace, RunError> {
    if n == 0 {
        return Err(RunError::InvalidParams("n must be >= 1".into()));
    }
    let agents = deps.agents();
    let mut st = RunState::new(task, Method::BestOfN, None)?;
    let mut candidates = Vec::with_capacity(n as usize);
    for i in 0..n {
        if deps.cancelled() {
            return Err(RunError::Cancelled {
                partial: Box::new(st.trace),
            });
        }
        let mut calls = Vec::new();
        match agents.generate(&task.reference_png, st.instruction(), None) {
            Ok(m) => {
                st.record(i, &mut calls, m.call);
                candidates.push((m.value, None, calls));
            }
            Err(AgentError::CodeExtraction { call, reply, .. }) => {
                st.record(i, &mut calls, Some(call));
                let failed = RenderOutcome::failure(
                    RenderStatus::RuntimeError,
                    "",
                    "no code block found in model reply",
                    0.0,
                );
                candidates.push((GeneratedProgram::initial(reply.clone(), reply), Some(failed), calls));
            }
            Err(e) => return Err(st.fail(e, i, None)),
        }
    }

    let reference = &st.reference;
    let scored: Vec<(RenderOutcome, PassDecision)> = std::thread::scope(|s| {
        let handles: Vec<_> = candidates
            .iter()
            .map(|(program, pre_failed, _)| {
                s.spawn(move || {
                    let render = pre_failed.clone().unwrap_or_else(|| deps.renderer.render(program));
                    let decision = deps.scorer.score(&render, reference, 0);
                    (render, decision)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("candidate worker panicked"))
            .collect()
    });

    for (i, ((program, _, calls), (render, mut decision))) in candidates.into_iter().zip(scored).enumerate() {
        decision.round = i as u32;
        st.trace.rounds.push(RoundRecord {
            round: i as u32,
            program,
            render,
            visual_critique: None,
            code_critique: None,
            decision,
            calls,
            revision_failed: false,
            critique_degraded: false,
            eval_f1: None,
        });
    }
    st.trace.stopped_early = st.trace.rounds.iter().any(|r| r.decision.passed);
    let best = st.trace.best_round_index().expect("n >= 1 candidates");
    st.trace.final_program = Some(st.trace.rounds[best].program.clone());
    st.trace.final_round = Some(best as u32);
    Ok(st.trace)
}
