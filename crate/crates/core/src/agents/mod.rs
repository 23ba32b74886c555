//! The four refinement agents (generation, visual critique, code critique,
//! revision) plus the unified critic and hint describer used by the ablations
//! and baselines. Each agent is a prompt template and a reply-parsing contract
//! over a [`ChatBackend`].

mod extract;
mod templates;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use extract::{extract_code, CodeExtractionError};
pub use templates::{has_unreplaced_placeholder, PromptTemplate, PromptVars, TemplateError, TemplateSet, MISSING};

use crate::gateway::{self, ChatBackend, ChatMessage, ChatRequest, ContentPart, GatewayError, TokenUsage};
use crate::render::RenderOutcome;

/// Delimiter line the unified critic must emit between its two sections.
pub const CODE_CRITIQUE_DELIMITER: &str = "---CODE CRITIQUE---";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Generation,
    VisualCritique,
    CodeCritique,
    Revision,
    UnifiedCritique,
    HintDescriber,
}

impl AgentKind {
    pub const ALL: [AgentKind; 6] = [
        AgentKind::Generation,
        AgentKind::VisualCritique,
        AgentKind::CodeCritique,
        AgentKind::Revision,
        AgentKind::UnifiedCritique,
        AgentKind::HintDescriber,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Generation => "generation",
            AgentKind::VisualCritique => "visual_critique",
            AgentKind::CodeCritique => "code_critique",
            AgentKind::Revision => "revision",
            AgentKind::UnifiedCritique => "unified_critique",
            AgentKind::HintDescriber => "hint_describer",
        }
    }

    pub fn template_file(self) -> &'static str {
        match self {
            AgentKind::Generation => "generation.txt",
            AgentKind::VisualCritique => "visual_critique.txt",
            AgentKind::CodeCritique => "code_critique.txt",
            AgentKind::Revision => "revision.txt",
            AgentKind::UnifiedCritique => "unified_critique.txt",
            AgentKind::HintDescriber => "hint_describer.txt",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown agent kind {s:?}"))
    }
}

/// A chart program y_t with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedProgram {
    pub source: String,
    pub round: u32,
    pub raw_model_text: String,
    pub parent_round: Option<u32>,
}

impl GeneratedProgram {
    pub fn initial(source: impl Into<String>, raw_model_text: impl Into<String>) -> Self {
        GeneratedProgram {
            source: source.into(),
            round: 0,
            raw_model_text: raw_model_text.into(),
            parent_round: None,
        }
    }

    /// The next-round program derived from `self`.
    pub fn child(&self, source: impl Into<String>, raw_model_text: impl Into<String>) -> Self {
        GeneratedProgram {
            source: source.into(),
            round: self.round + 1,
            raw_model_text: raw_model_text.into(),
            parent_round: Some(self.round),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualCritique {
    pub text: String,
    pub render_failed: bool,
    pub failure_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeCritique {
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Per-agent sampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub generation: SamplingParams,
    pub visual_critique: SamplingParams,
    pub code_critique: SamplingParams,
    pub revision: SamplingParams,
    pub unified_critique: SamplingParams,
    pub hint_describer: SamplingParams,
}

impl SamplingConfig {
    pub const CRITIQUE_TOKEN_CAP: u32 = 600;

    pub fn get(&self, kind: AgentKind) -> SamplingParams {
        match kind {
            AgentKind::Generation => self.generation,
            AgentKind::VisualCritique => self.visual_critique,
            AgentKind::CodeCritique => self.code_critique,
            AgentKind::Revision => self.revision,
            AgentKind::UnifiedCritique => self.unified_critique,
            AgentKind::HintDescriber => self.hint_describer,
        }
    }

    /// Caps every critique and revision call at `cap` tokens.
    pub fn with_critique_cap(mut self, cap: u32) -> Self {
        for p in [
            &mut self.visual_critique,
            &mut self.code_critique,
            &mut self.revision,
            &mut self.unified_critique,
        ] {
            p.max_tokens = cap;
        }
        self
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        let cap = Self::CRITIQUE_TOKEN_CAP;
        SamplingConfig {
            generation: SamplingParams {
                temperature: 0.2,
                max_tokens: 2048,
            },
            visual_critique: SamplingParams {
                temperature: 0.0,
                max_tokens: cap,
            },
            code_critique: SamplingParams {
                temperature: 0.0,
                max_tokens: cap,
            },
            revision: SamplingParams {
                temperature: 0.2,
                max_tokens: cap,
            },
            unified_critique: SamplingParams {
                temperature: 0.0,
                max_tokens: cap,
            },
            hint_describer: SamplingParams {
                temperature: 0.0,
                max_tokens: cap,
            },
        }
    }
}

/// A backend plus the model id to request from it.
#[derive(Clone)]
pub struct Endpoint {
    pub backend: Arc<dyn ChatBackend>,
    pub model_id: String,
}

impl Endpoint {
    pub fn new(backend: Arc<dyn ChatBackend>, model_id: impl Into<String>) -> Self {
        Endpoint {
            backend,
            model_id: model_id.into(),
        }
    }
}

/// Default endpoint with optional per-agent overrides.
#[derive(Clone)]
pub struct AgentBackends {
    default: Endpoint,
    overrides: HashMap<AgentKind, Endpoint>,
}

impl AgentBackends {
    pub fn uniform(default: Endpoint) -> Self {
        AgentBackends {
            default,
            overrides: HashMap::new(),
        }
    }

    pub fn with_override(mut self, kind: AgentKind, endpoint: Endpoint) -> Self {
        self.overrides.insert(kind, endpoint);
        self
    }

    pub fn for_agent(&self, kind: AgentKind) -> &Endpoint {
        self.overrides.get(&kind).unwrap_or(&self.default)
    }
}

/// Token accounting for one gateway call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCall {
    pub agent: AgentKind,
    pub usage: TokenUsage,
    pub estimated: bool,
}

/// An agent result with the call that produced it (none when the model was bypassed).
#[derive(Debug, Clone, PartialEq)]
pub struct Metered<T> {
    pub value: T,
    pub call: Option<AgentCall>,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("{agent}: {source}")]
    Gateway {
        agent: AgentKind,
        #[source]
        source: GatewayError,
    },
    #[error("{agent}: no code block in reply")]
    CodeExtraction {
        agent: AgentKind,
        call: AgentCall,
        reply: String,
    },
    #[error("revision needs at least one critique")]
    NoCritique,
}

impl AgentError {
    /// The call consumed before the failure, if the model did answer.
    pub fn consumed_call(&self) -> Option<AgentCall> {
        match self {
            AgentError::CodeExtraction { call, .. } => Some(*call),
            _ => None,
        }
    }
}

/// Agent invocations bound to a template set, backends and sampling settings.
/// Stateless; safe to share across threads.
#[derive(Clone, Copy)]
pub struct Agents<'a> {
    pub templates: &'a TemplateSet,
    pub backends: &'a AgentBackends,
    pub sampling: &'a SamplingConfig,
}

impl<'a> Agents<'a> {
    pub fn new(templates: &'a TemplateSet, backends: &'a AgentBackends, sampling: &'a SamplingConfig) -> Self {
        Agents {
            templates,
            backends,
            sampling,
        }
    }

    fn call(&self, kind: AgentKind, parts: Vec<ContentPart>) -> Result<(String, AgentCall), AgentError> {
        let endpoint = self.backends.for_agent(kind);
        let params = self.sampling.get(kind);
        let request = ChatRequest {
            model_id: endpoint.model_id.clone(),
            messages: vec![ChatMessage::user(parts)],
            max_tokens: params.max_tokens,
            temperature: params.temperature,
        };
        let response = gateway::complete(endpoint.backend.as_ref(), &request)
            .map_err(|source| AgentError::Gateway { agent: kind, source })?;
        let call = AgentCall {
            agent: kind,
            usage: response.usage,
            estimated: response.usage_estimated,
        };
        Ok((response.text, call))
    }

    fn prompt(&self, kind: AgentKind, vars: &PromptVars<'_>) -> String {
        self.templates.get(kind).render(vars)
    }

    /// y_0: the initial program for a reference chart.
    pub fn generate(
        &self,
        reference_png: &[u8],
        instruction: Option<&str>,
        hint: Option<&str>,
    ) -> Result<Metered<GeneratedProgram>, AgentError> {
        let kind = AgentKind::Generation;
        let text = self.prompt(
            kind,
            &PromptVars {
                instruction,
                hint,
                ..Default::default()
            },
        );
        let (reply, call) = self.call(
            kind,
            vec![ContentPart::text(text), ContentPart::png(reference_png.to_vec())],
        )?;
        let source = match extract_code(&reply) {
            Ok(s) => s,
            Err(_) => {
                return Err(AgentError::CodeExtraction {
                    agent: kind,
                    call,
                    reply,
                })
            }
        };
        Ok(Metered {
            value: GeneratedProgram::initial(source, reply),
            call: Some(call),
        })
    }

    /// v_t. A failed render bypasses the model and reports the execution failure.
    pub fn critique_visual(
        &self,
        rendered: &RenderOutcome,
        reference_png: &[u8],
        instruction: Option<&str>,
    ) -> Result<Metered<VisualCritique>, AgentError> {
        let Some(image) = rendered.image.as_ref().filter(|_| rendered.is_success()) else {
            return Ok(Metered {
                value: failure_critique(rendered),
                call: None,
            });
        };
        let kind = AgentKind::VisualCritique;
        let text = self.prompt(
            kind,
            &PromptVars {
                instruction,
                ..Default::default()
            },
        );
        let (reply, call) = self.call(
            kind,
            vec![
                ContentPart::text(text),
                ContentPart::png(image.clone()),
                ContentPart::png(reference_png.to_vec()),
            ],
        )?;
        Ok(Metered {
            value: VisualCritique {
                text: reply,
                render_failed: false,
                failure_note: None,
            },
            call: Some(call),
        })
    }

    /// c_t: text-only review of the program source.
    pub fn critique_code(
        &self,
        program: &GeneratedProgram,
        instruction: Option<&str>,
    ) -> Result<Metered<CodeCritique>, AgentError> {
        let kind = AgentKind::CodeCritique;
        let text = self.prompt(
            kind,
            &PromptVars {
                instruction,
                code: Some(&program.source),
                ..Default::default()
            },
        );
        let (reply, call) = self.call(kind, vec![ContentPart::text(text)])?;
        Ok(Metered {
            value: CodeCritique { text: reply },
            call: Some(call),
        })
    }

    /// y_{t+1} = R(y_t, v_t, c_t). Text-only; an absent critique becomes "N/A".
    pub fn revise(
        &self,
        program: &GeneratedProgram,
        visual: Option<&VisualCritique>,
        code: Option<&CodeCritique>,
        instruction: Option<&str>,
    ) -> Result<Metered<GeneratedProgram>, AgentError> {
        if visual.is_none() && code.is_none() {
            return Err(AgentError::NoCritique);
        }
        let kind = AgentKind::Revision;
        let text = self.prompt(
            kind,
            &PromptVars {
                instruction,
                code: Some(&program.source),
                visual_feedback: visual.map(|v| v.text.as_str()),
                code_feedback: code.map(|c| c.text.as_str()),
                hint: None,
            },
        );
        let (reply, call) = self.call(kind, vec![ContentPart::text(text)])?;
        let source = match extract_code(&reply) {
            Ok(s) => s,
            Err(_) => {
                return Err(AgentError::CodeExtraction {
                    agent: kind,
                    call,
                    reply,
                })
            }
        };
        Ok(Metered {
            value: program.child(source, reply),
            call: Some(call),
        })
    }

    /// One multimodal call producing both critiques, split at [`CODE_CRITIQUE_DELIMITER`].
    /// The flag is true when the delimiter was missing and the reply was used whole.
    pub fn critique_unified(
        &self,
        rendered: &RenderOutcome,
        reference_png: &[u8],
        program: &GeneratedProgram,
        instruction: Option<&str>,
    ) -> Result<Metered<(VisualCritique, CodeCritique, bool)>, AgentError> {
        let kind = AgentKind::UnifiedCritique;
        let rendered_image = rendered.image.as_ref().filter(|_| rendered.is_success());
        let failure = rendered_image.is_none().then(|| failure_critique(rendered));
        let notes = match &failure {
            Some(f) => f.text.clone(),
            None => "The script ran and produced a chart.".to_string(),
        };
        let text = self.prompt(
            kind,
            &PromptVars {
                instruction,
                code: Some(&program.source),
                visual_feedback: Some(&notes),
                ..Default::default()
            },
        );
        let mut parts = vec![ContentPart::text(text)];
        if let Some(img) = rendered_image {
            parts.push(ContentPart::png(img.clone()));
        }
        parts.push(ContentPart::png(reference_png.to_vec()));
        let (reply, call) = self.call(kind, parts)?;
        let (visual_text, code_text, degraded) = split_unified(&reply);
        if degraded {
            log::warn!(
                "unified critique reply lacks {CODE_CRITIQUE_DELIMITER:?}; using whole reply as visual critique"
            );
        }
        let visual = match failure {
            Some(f) => VisualCritique {
                text: format!("{}\n\n{}", f.text, visual_text),
                ..f
            },
            None => VisualCritique {
                text: visual_text,
                render_failed: false,
                failure_note: None,
            },
        };
        Ok(Metered {
            value: (visual, CodeCritique { text: code_text }, degraded),
            call: Some(call),
        })
    }

    /// Short textual description of the reference chart for the hint baseline.
    pub fn describe_hint(
        &self,
        reference_png: &[u8],
        instruction: Option<&str>,
    ) -> Result<Metered<String>, AgentError> {
        let kind = AgentKind::HintDescriber;
        let text = self.prompt(
            kind,
            &PromptVars {
                instruction,
                ..Default::default()
            },
        );
        let (reply, call) = self.call(
            kind,
            vec![ContentPart::text(text), ContentPart::png(reference_png.to_vec())],
        )?;
        Ok(Metered {
            value: reply,
            call: Some(call),
        })
    }
}

/// Splits a unified-critic reply into (visual, code, degraded).
pub fn split_unified(reply: &str) -> (String, String, bool) {
    let mut visual = Vec::new();
    let mut lines = reply.lines();
    for line in lines.by_ref() {
        if line.trim() == CODE_CRITIQUE_DELIMITER {
            let code = lines.collect::<Vec<_>>().join("\n");
            let code = code.trim();
            let code = if code.is_empty() { MISSING } else { code };
            return (visual.join("\n").trim().to_string(), code.to_string(), false);
        }
        visual.push(line);
    }
    (reply.to_string(), MISSING.to_string(), true)
}

fn failure_critique(rendered: &RenderOutcome) -> VisualCritique {
    let note = rendered.failure_note();
    VisualCritique {
        text: format!(
            "The program did not produce a chart ({}). No visual comparison was possible. Fix the execution problem first.\nExecution error:\n{}",
            rendered.status.as_str(),
            note
        ),
        render_failed: true,
        failure_note: Some(note),
    }
}
