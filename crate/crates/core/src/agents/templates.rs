//! Prompt templates with `{placeholder}` slots, loaded from `prompts/`.

use std::collections::BTreeMap;
use std::path::Path;

use super::AgentKind;

pub const PLACEHOLDERS: [&str; 5] = ["instruction", "code", "visual_feedback", "code_feedback", "hint"];

/// Substituted for any placeholder without a value.
pub const MISSING: &str = "N/A";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("missing prompt template {0}")]
    Missing(String),
    #[error("template {file}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { file: String, name: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default)]
pub struct PromptVars<'a> {
    pub instruction: Option<&'a str>,
    pub code: Option<&'a str>,
    pub visual_feedback: Option<&'a str>,
    pub code_feedback: Option<&'a str>,
    pub hint: Option<&'a str>,
}

impl PromptVars<'_> {
    fn get(&self, name: &str) -> Option<&str> {
        match name {
            "instruction" => self.instruction,
            "code" => self.code,
            "visual_feedback" => self.visual_feedback,
            "code_feedback" => self.code_feedback,
            "hint" => self.hint,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub agent: AgentKind,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(agent: AgentKind, body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        for name in placeholder_names(&body) {
            if !PLACEHOLDERS.contains(&name) {
                return Err(TemplateError::UnknownPlaceholder {
                    file: agent.template_file().to_string(),
                    name: name.to_string(),
                });
            }
        }
        Ok(PromptTemplate { agent, body })
    }

    /// Single pass: substituted values are never rescanned, so code containing
    /// braces passes through untouched.
    pub fn render(&self, vars: &PromptVars<'_>) -> String {
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match placeholder_at(after) {
                Some(name) => {
                    out.push_str(vars.get(name).filter(|v| !v.trim().is_empty()).unwrap_or(MISSING));
                    rest = &after[name.len() + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// If `s` starts with `name}` for an identifier-like name, returns the name.
fn placeholder_at(s: &str) -> Option<&str> {
    let end = s.find('}')?;
    let name = &s[..end];
    let ident = !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_');
    ident.then_some(name)
}

fn placeholder_names(body: &str) -> Vec<&str> {
    let mut names = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        rest = &rest[open + 1..];
        if let Some(name) = placeholder_at(rest) {
            names.push(name);
        }
    }
    names
}

/// True if any known placeholder token survives in `text`.
pub fn has_unreplaced_placeholder(text: &str) -> bool {
    PLACEHOLDERS.iter().any(|p| text.contains(&format!("{{{p}}}")))
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<AgentKind, PromptTemplate>,
}

impl TemplateSet {
    /// The prompt assets compiled into the binary.
    pub fn builtin() -> Self {
        let sources = [
            (AgentKind::Generation, include_str!("../../prompts/generation.txt")),
            (
                AgentKind::VisualCritique,
                include_str!("../../prompts/visual_critique.txt"),
            ),
            (AgentKind::CodeCritique, include_str!("../../prompts/code_critique.txt")),
            (AgentKind::Revision, include_str!("../../prompts/revision.txt")),
            (
                AgentKind::UnifiedCritique,
                include_str!("../../prompts/unified_critique.txt"),
            ),
            (
                AgentKind::HintDescriber,
                include_str!("../../prompts/hint_describer.txt"),
            ),
        ];
        let templates = sources
            .into_iter()
            .map(|(k, body)| (k, PromptTemplate::new(k, body).expect("builtin templates are valid")))
            .collect();
        TemplateSet { templates }
    }

    /// Loads all six templates from `dir`; every file must exist.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut templates = BTreeMap::new();
        for kind in AgentKind::ALL {
            let path = dir.join(kind.template_file());
            if !path.is_file() {
                return Err(TemplateError::Missing(path.display().to_string()));
            }
            let body = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })?;
            templates.insert(kind, PromptTemplate::new(kind, body)?);
        }
        Ok(TemplateSet { templates })
    }

    pub fn get(&self, kind: AgentKind) -> &PromptTemplate {
        // Both constructors populate every kind.
        &self.templates[&kind]
    }
}
