use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::imaging;

pub const REFERENCE_FILE: &str = "reference.png";
pub const INSTRUCTION_FILE: &str = "instruction.txt";
pub const GOLD_FILE: &str = "gold.src";

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("task {task}: missing {file}")]
    Missing { task: String, file: &'static str },
    #[error("task {task}: reference image does not decode: {detail}")]
    BadReference { task: String, detail: String },
    #[error("task {task}: {source}")]
    Io {
        task: String,
        #[source]
        source: std::io::Error,
    },
}

/// One benchmark item: the reference chart, optional instruction and gold program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartTask {
    pub task_id: String,
    #[serde(skip)]
    pub reference_png: Vec<u8>,
    pub instruction: Option<String>,
    pub gold_program: Option<String>,
}

impl ChartTask {
    pub fn new(task_id: impl Into<String>, reference_png: Vec<u8>) -> Result<Self, TaskError> {
        let task = ChartTask {
            task_id: task_id.into(),
            reference_png,
            instruction: None,
            gold_program: None,
        };
        task.reference_image()?;
        Ok(task)
    }

    /// Loads `reference.png`, and `instruction.txt` / `gold.src` when present.
    /// The task id is the directory name.
    pub fn load_dir(dir: &Path) -> Result<Self, TaskError> {
        let task_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let io = |source| TaskError::Io {
            task: task_id.clone(),
            source,
        };
        let reference = dir.join(REFERENCE_FILE);
        if !reference.is_file() {
            return Err(TaskError::Missing {
                task: task_id,
                file: REFERENCE_FILE,
            });
        }
        let reference_png = std::fs::read(&reference).map_err(io)?;
        let optional = |name: &str| -> Result<Option<String>, TaskError> {
            let p = dir.join(name);
            if !p.is_file() {
                return Ok(None);
            }
            let s = std::fs::read_to_string(&p).map_err(io)?;
            Ok(Some(s).filter(|s| !s.trim().is_empty()))
        };
        let instruction = optional(INSTRUCTION_FILE)?.map(|s| s.trim().to_string());
        let gold_program = optional(GOLD_FILE)?;
        let mut task = ChartTask::new(task_id, reference_png)?;
        task.instruction = instruction;
        task.gold_program = gold_program;
        Ok(task)
    }

    pub fn reference_image(&self) -> Result<RgbImage, TaskError> {
        imaging::decode_rgb(&self.reference_png).map_err(|e| TaskError::BadReference {
            task: self.task_id.clone(),
            detail: e.to_string(),
        })
    }
}
