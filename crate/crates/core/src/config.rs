//! Run configuration: TOML file, then command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentKind, SamplingConfig};
use crate::render::{RenderLimits, RenderSettings};
use crate::verifier::{StopMode, ThresholdSchedule};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    /// Replays `model.script`, resolved against each task directory.
    Scripted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub base_url: Option<String>,
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backend: BackendKind,
    pub base_url: String,
    pub model_id: String,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub script: Option<PathBuf>,
    /// Per-agent endpoint overrides keyed by agent name.
    pub agents: BTreeMap<String, EndpointConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backend: BackendKind::Http,
            base_url: "https://api.openai.com/v1".into(),
            model_id: "gpt-4o".into(),
            timeout_secs: 120,
            max_attempts: 3,
            script: None,
            agents: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopSection {
    pub t_max: u32,
    pub n: u32,
    pub paper_order: bool,
    pub return_last: bool,
    pub critique_max_tokens: u32,
}

impl Default for LoopSection {
    fn default() -> Self {
        LoopSection {
            t_max: 5,
            n: 5,
            paper_order: false,
            return_last: false,
            critique_max_tokens: SamplingConfig::CRITIQUE_TOKEN_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OcrKind {
    /// Text pinned per image: `reference.png` + `reference.txt` in each task dir,
    /// plus any `X.png`/`X.txt` pairs under `verifier.ocr_fixtures`.
    #[default]
    Fixture,
    Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierSection {
    pub mode: StopMode,
    pub threshold: f64,
    pub decay: f64,
    pub ocr: OcrKind,
    /// Invoked as `ocr_command <png>`; prints one recognized line per stdout line.
    pub ocr_command: Option<String>,
    pub ocr_fixtures: Option<PathBuf>,
}

impl Default for VerifierSection {
    fn default() -> Self {
        VerifierSection {
            mode: StopMode::Average,
            threshold: 0.9,
            decay: 0.0,
            ocr: OcrKind::Fixture,
            ocr_command: None,
            ocr_fixtures: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub command: String,
    pub timeout_secs: f64,
    pub workers: usize,
    pub max_output_bytes: usize,
    pub keep_artifacts: bool,
    pub tracer_shim: Option<PathBuf>,
}

impl Default for RenderSection {
    fn default() -> Self {
        let d = RenderSettings::default();
        RenderSection {
            command: d.command,
            timeout_secs: d.limits.timeout.as_secs_f64(),
            workers: d.workers,
            max_output_bytes: d.limits.max_output_bytes,
            keep_artifacts: false,
            tracer_shim: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// Traces pinned by program digest in `eval.pinned_dir`, falling back to
    /// `expected.json` next to each task's gold program.
    #[default]
    Pinned,
    /// Run programs under the tracer shim.
    Shim,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub traces: TraceMode,
    pub pinned_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub prompts_dir: Option<PathBuf>,
    pub model: ModelConfig,
    #[serde(rename = "loop")]
    pub loop_: LoopSection,
    pub verifier: VerifierSection,
    pub render: RenderSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            workers: 1,
            prompts_dir: None,
            model: ModelConfig::default(),
            loop_: LoopSection::default(),
            verifier: VerifierSection::default(),
            render: RenderSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub n: Option<u32>,
    pub t_max: Option<u32>,
    pub paper_order: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// Defaults, then `path` if given, then `overrides`; validated.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.display().to_string(),
                    source,
                })?;
                Self::from_toml(&text, &p.display().to_string())?
            }
            None => RunConfig::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.workers {
            self.workers = v;
            self.render.workers = self.render.workers.max(v);
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.n {
            self.loop_.n = v;
        }
        if let Some(v) = o.t_max {
            self.loop_.t_max = v;
        }
        if o.paper_order {
            self.loop_.paper_order = true;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.loop_.t_max == 0 {
            return bad("loop.t_max must be at least 1".into());
        }
        if self.loop_.n == 0 {
            return bad("loop.n must be at least 1".into());
        }
        if self.loop_.critique_max_tokens == 0 {
            return bad("loop.critique_max_tokens must be positive".into());
        }
        if self.workers == 0 || self.render.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(self.render.timeout_secs > 0.0 && self.render.timeout_secs.is_finite()) {
            return bad("render.timeout_secs must be positive".into());
        }
        if self.model.max_attempts == 0 {
            return bad("model.max_attempts must be at least 1".into());
        }
        self.schedule().validate().map_err(ConfigError::Invalid)?;
        for name in self.model.agents.keys() {
            if name.parse::<AgentKind>().is_err() {
                return bad(format!("unknown agent {name:?} in model.agents"));
            }
        }
        if self.model.backend == BackendKind::Scripted && self.model.script.is_none() {
            return bad("model.backend = \"scripted\" requires model.script".into());
        }
        if self.verifier.ocr == OcrKind::Command && self.verifier.ocr_command.is_none() {
            return bad("verifier.ocr = \"command\" requires verifier.ocr_command".into());
        }
        if self.eval.traces == TraceMode::Shim && self.render.tracer_shim.is_none() {
            return bad("eval.traces = \"shim\" requires render.tracer_shim".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> ThresholdSchedule {
        ThresholdSchedule {
            mode: self.verifier.mode,
            base_threshold: self.verifier.threshold,
            decay_per_round: self.verifier.decay,
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig::default().with_critique_cap(self.loop_.critique_max_tokens)
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            command: self.render.command.clone(),
            limits: RenderLimits {
                timeout: Duration::from_secs_f64(self.render.timeout_secs),
                max_output_bytes: self.render.max_output_bytes,
            },
            workers: self.render.workers,
            keep_artifacts: self.render.keep_artifacts,
            tracer_shim: self.render.tracer_shim.clone(),
        }
    }
}
