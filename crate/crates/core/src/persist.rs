//! On-disk run layout:
//!
//! ```text
//! {out}/{run_id}/run.json
//! {out}/{run_id}/{task_id}/trace.json
//! {out}/{run_id}/{task_id}/final.src
//! {out}/{run_id}/{task_id}/round_{t}/{program.src, chart.png, visual_critique.txt, code_critique.txt, scores.json}
//! ```
//!
//! `trace.json` is written last and atomically, so its presence with status
//! `completed` marks a finished task for `--resume`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::evaluator::EvaluationReport;
use crate::orchestrator::{RoundRecord, RunTrace};

pub const RUN_FILE: &str = "run.json";
pub const TRACE_FILE: &str = "trace.json";
pub const EVAL_FILE: &str = "eval.json";
pub const FINAL_FILE: &str = "final.src";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Completed,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub status: TaskStatus,
    pub error: Option<String>,
    #[serde(flatten)]
    pub trace: RunTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub tasks: Vec<String>,
    pub config: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PersistError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| PersistError::Json {
        path: path.display().to_string(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PersistError> {
    let raw = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&raw).map_err(|source| PersistError::Json {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(out: &Path, run_id: &str) -> Self {
        RunDir { root: out.join(run_id) }
    }

    pub fn open(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn task_dir(&self, task_id: &str) -> PathBuf {
        self.root.join(task_id)
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), PersistError> {
        write_json(&self.root.join(RUN_FILE), manifest)
    }

    pub fn read_manifest(&self) -> Result<RunManifest, PersistError> {
        read_json(&self.root.join(RUN_FILE))
    }

    /// True when the task has a completed `trace.json`.
    pub fn is_complete(&self, task_id: &str) -> bool {
        matches!(self.read_task(task_id), Ok(r) if r.status == TaskStatus::Completed)
    }

    pub fn read_task(&self, task_id: &str) -> Result<TaskRecord, PersistError> {
        read_json(&self.task_dir(task_id).join(TRACE_FILE))
    }

    pub fn write_task(&self, record: &TaskRecord) -> Result<(), PersistError> {
        let dir = self.task_dir(&record.trace.task_id);
        for round in &record.trace.rounds {
            write_round(&dir.join(format!("round_{}", round.round)), round)?;
        }
        if let Some(p) = &record.trace.final_program {
            write_atomic(&dir.join(FINAL_FILE), p.source.as_bytes())?;
        }
        write_json(&dir.join(TRACE_FILE), record)
    }

    pub fn write_eval(&self, report: &EvaluationReport) -> Result<(), PersistError> {
        write_json(&self.task_dir(&report.task_id).join(EVAL_FILE), report)
    }

    pub fn read_eval(&self, task_id: &str) -> Option<EvaluationReport> {
        read_json(&self.task_dir(task_id).join(EVAL_FILE)).ok()
    }

    /// Every task record under the run, sorted by task id.
    pub fn load_tasks(&self) -> Result<Vec<TaskRecord>, PersistError> {
        let mut out = Vec::new();
        let entries = std::fs::read_dir(&self.root).map_err(io_err(&self.root))?;
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for d in dirs {
            let f = d.join(TRACE_FILE);
            if f.is_file() {
                out.push(read_json(&f)?);
            }
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct RoundScores<'a> {
    round: u32,
    status: &'a str,
    image_sha256: Option<&'a str>,
    #[serde(flatten)]
    decision: &'a crate::verifier::PassDecision,
    mean: f64,
    revision_failed: bool,
}

fn write_round(dir: &Path, r: &RoundRecord) -> Result<(), PersistError> {
    write_atomic(&dir.join("program.src"), r.program.source.as_bytes())?;
    if let Some(png) = &r.render.image {
        write_atomic(&dir.join(crate::render::IMAGE_FILE), png)?;
    }
    if let Some(v) = &r.visual_critique {
        write_atomic(&dir.join("visual_critique.txt"), v.text.as_bytes())?;
    }
    if let Some(c) = &r.code_critique {
        write_atomic(&dir.join("code_critique.txt"), c.text.as_bytes())?;
    }
    write_json(
        &dir.join("scores.json"),
        &RoundScores {
            round: r.round,
            status: r.render.status.as_str(),
            image_sha256: r.render.image_sha256.as_deref(),
            decision: &r.decision,
            mean: r.decision.scores.mean(),
            revision_failed: r.revision_failed,
        },
    )
}
