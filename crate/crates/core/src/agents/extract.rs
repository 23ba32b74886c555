//! Pulls program source out of free-form model replies.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no code block found in model reply")]
pub struct CodeExtractionError;

const HEADER_PREFIXES: [&str; 3] = ["import ", "from ", "#!"];

/// Returns the content of the first fenced block, or the whole text when it
/// starts like a program (an import line or a shebang).
pub fn extract_code(model_text: &str) -> Result<String, CodeExtractionError> {
    let mut lines = model_text.lines();
    while let Some(line) = lines.next() {
        if line.trim_start().starts_with("```") {
            // An unclosed fence (truncated reply) runs to the end of the text.
            let body: Vec<&str> = lines
                .by_ref()
                .take_while(|l| !l.trim_start().starts_with("```"))
                .collect();
            let body = body.join("\n");
            if body.trim().is_empty() {
                return Err(CodeExtractionError);
            }
            return Ok(body);
        }
    }
    let first = model_text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if HEADER_PREFIXES.iter().any(|p| first.trim_start().starts_with(p)) {
        return Ok(model_text.to_string());
    }
    Err(CodeExtractionError)
}
