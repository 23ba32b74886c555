//! Element-level evaluation over logged chart elements, kept apart from the
//! verifier's image metrics.

mod f1;
mod scaling;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use f1::{
    facet_count, facet_f1, facet_f1_with, multiset_matched, normalize_text, Facet, FacetF1, TypeVocabulary,
    UnknownFacet,
};
pub use scaling::{scaling_series, trace_points, BucketPoint, ScalingPoint, ScalingScore, LOG2_BUCKETS};

use crate::agents::GeneratedProgram;
use crate::imaging::sha256_hex;
use crate::render::{ChartRenderer, ElementTrace};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("gold program for {task_id} did not render: {reason}")]
    GoldRender { task_id: String, reason: String },
    #[error("no reports to aggregate")]
    Empty,
    #[error("pinned trace {path}: {reason}")]
    PinnedTrace { path: String, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Produces the element trace of a program; `Err` means it did not render or was not traced.
pub trait TraceSource: Send + Sync {
    fn trace(&self, source: &str) -> Result<ElementTrace, String>;
}

/// Traces by running the program under the tracer.
pub struct RenderTraces<'a>(pub &'a dyn ChartRenderer);

impl TraceSource for RenderTraces<'_> {
    fn trace(&self, source: &str) -> Result<ElementTrace, String> {
        let (outcome, trace) = self.0.render_traced(&GeneratedProgram::initial(source, ""));
        if !outcome.is_success() {
            return Err(outcome.failure_note());
        }
        trace.ok_or_else(|| "rendered without a trace sidecar".to_string())
    }
}

/// Traces pinned ahead of time, keyed by [`PinnedTraces::digest`] of the program source.
#[derive(Debug, Default, Clone)]
pub struct PinnedTraces {
    by_digest: HashMap<String, ElementTrace>,
}

impl PinnedTraces {
    pub fn new() -> Self {
        Self::default()
    }

    /// sha256 of the source with trailing whitespace removed from every line and
    /// surrounding blank lines dropped, so code-fence extraction does not change the key.
    pub fn digest(source: &str) -> String {
        let lines: Vec<&str> = source.lines().map(str::trim_end).collect();
        sha256_hex(lines.join("\n").trim_matches('\n').as_bytes())
    }

    pub fn insert(&mut self, source: &str, trace: ElementTrace) {
        self.by_digest.insert(Self::digest(source), trace);
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, trace: ElementTrace) {
        self.by_digest.insert(digest.into(), trace);
    }

    pub fn len(&self) -> usize {
        self.by_digest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_digest.is_empty()
    }

    /// Loads every `{digest}.json` in `dir`; each file holds a sidecar-schema trace.
    pub fn from_dir(dir: &Path) -> Result<Self, EvalError> {
        let mut out = Self::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let raw = std::fs::read_to_string(&path)?;
            let trace = ElementTrace::from_sidecar_json(&raw).map_err(|e| EvalError::PinnedTrace {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            out.insert_digest(stem, trace);
        }
        Ok(out)
    }
}

impl TraceSource for PinnedTraces {
    fn trace(&self, source: &str) -> Result<ElementTrace, String> {
        self.by_digest
            .get(&Self::digest(source))
            .cloned()
            .ok_or_else(|| "no pinned trace for this program".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task_id: String,
    pub facets: [FacetF1; 4],
    pub average_f1: f64,
    /// Why the generated side has no trace, if it has none.
    pub generated_error: Option<String>,
}

impl EvaluationReport {
    pub fn from_facets(task_id: impl Into<String>, facets: [FacetF1; 4], generated_error: Option<String>) -> Self {
        let average_f1 = facets.iter().map(|f| f.f1).sum::<f64>() / 4.0;
        EvaluationReport {
            task_id: task_id.into(),
            facets,
            average_f1,
            generated_error,
        }
    }

    pub fn get(&self, facet: Facet) -> &FacetF1 {
        &self.facets[Facet::ALL.iter().position(|&f| f == facet).expect("facet in ALL")]
    }
}

/// Gold vs. generated over all four facets. `final_program` is `None` when
/// the run produced no program; that scores like a failed render.
pub fn evaluate_task(
    task_id: &str,
    gold_program: &str,
    final_program: Option<&str>,
    traces: &dyn TraceSource,
) -> Result<EvaluationReport, EvalError> {
    let gold = traces.trace(gold_program).map_err(|reason| EvalError::GoldRender {
        task_id: task_id.to_string(),
        reason,
    })?;
    let generated = match final_program {
        Some(src) => traces.trace(src),
        None => Err("run produced no program".to_string()),
    };
    let report = match generated {
        Ok(gen) => EvaluationReport::from_facets(task_id, Facet::ALL.map(|f| facet_f1(&gold, &gen, f)), None),
        Err(reason) => EvaluationReport::from_facets(
            task_id,
            Facet::ALL.map(|f| FacetF1::missing(f, facet_count(&gold, f))),
            Some(reason),
        ),
    };
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedTask {
    pub task_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_tasks: usize,
    /// Mean F1 per facet, in [`Facet::ALL`] order.
    pub facet_means: [f64; 4],
    pub average: f64,
    pub excluded: Vec<ExcludedTask>,
}

pub fn aggregate(reports: &[EvaluationReport], excluded: &[ExcludedTask]) -> Result<Summary, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = reports.len() as f64;
    let facet_means = std::array::from_fn(|i| reports.iter().map(|r| r.facets[i].f1).sum::<f64>() / n);
    let average = reports.iter().map(|r| r.average_f1).sum::<f64>() / n;
    Ok(Summary {
        n_tasks: reports.len(),
        facet_means,
        average,
        excluded: excluded.to_vec(),
    })
}

pub const F1_HEADER: [&str; 6] = ["task_id", "text_f1", "type_f1", "color_f1", "layout_f1", "average"];

/// One row per report followed by a `mean` row.
pub fn write_f1_csv(path: &Path, reports: &[EvaluationReport], summary: &Summary) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(F1_HEADER)?;
    let fmt = |v: f64| format!("{v:.6}");
    for r in reports {
        let mut row = vec![r.task_id.clone()];
        row.extend(r.facets.iter().map(|f| fmt(f.f1)));
        row.push(fmt(r.average_f1));
        w.write_record(&row)?;
    }
    let mut row = vec!["mean".to_string()];
    row.extend(summary.facet_means.iter().map(|&v| fmt(v)));
    row.push(fmt(summary.average));
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

pub fn write_excluded_csv(path: &Path, excluded: &[ExcludedTask]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["task_id", "reason"])?;
    for e in excluded {
        w.write_record([&e.task_id, &e.reason])?;
    }
    w.flush()?;
    Ok(())
}

pub const SCALING_HEADER: [&str; 3] = ["log2_tokens", "mean_best_score", "n_tasks"];

pub fn write_scaling_csv(path: &Path, points: &[BucketPoint]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SCALING_HEADER)?;
    for p in points {
        w.write_record([
            p.log2_tokens.to_string(),
            format!("{:.6}", p.mean_best_score),
            p.n_tasks.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Markdown-style table with one row per method, matching the facet columns.
pub fn summary_table(rows: &[(&str, &Summary)]) -> String {
    let mut out = String::from("| method | text | type | color | layout | average |\n|---|---|---|---|---|---|\n");
    for (name, s) in rows {
        let cells: Vec<String> = s.facet_means.iter().map(|v| format!("{:.2}", v * 100.0)).collect();
        out.push_str(&format!(
            "| {name} | {} | {:.2} |\n",
            cells.join(" | "),
            s.average * 100.0
        ));
    }
    out
}
