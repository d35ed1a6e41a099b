//! Versioned prompt templates with `{{name}}` placeholders.

use std::path::Path;

use super::LlmError;

pub const VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    Contract,
    CaseExpression,
    CaseGenerator,
    Judge,
}

impl Template {
    pub const ALL: [Template; 4] = [
        Template::Contract,
        Template::CaseExpression,
        Template::CaseGenerator,
        Template::Judge,
    ];

    pub fn file_name(self) -> String {
        let stem = match self {
            Template::Contract => "contract",
            Template::CaseExpression => "case_expression",
            Template::CaseGenerator => "case_generator",
            Template::Judge => "judge",
        };
        format!("{stem}.{VERSION}.txt")
    }

    fn builtin(self) -> &'static str {
        match self {
            Template::Contract => include_str!("../../prompts/contract.v1.txt"),
            Template::CaseExpression => include_str!("../../prompts/case_expression.v1.txt"),
            Template::CaseGenerator => include_str!("../../prompts/case_generator.v1.txt"),
            Template::Judge => include_str!("../../prompts/judge.v1.txt"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prompts {
    texts: [String; 4],
}

impl Default for Prompts {
    fn default() -> Self {
        Self { texts: Template::ALL.map(|t| t.builtin().to_string()) }
    }
}

impl Prompts {
    /// Built-in templates, each replaced by `<dir>/<name>.v1.txt` when present.
    pub fn load(dir: Option<&Path>) -> Result<Self, LlmError> {
        let mut p = Self::default();
        if let Some(dir) = dir {
            for (i, t) in Template::ALL.iter().enumerate() {
                let path = dir.join(t.file_name());
                if path.exists() {
                    p.texts[i] = std::fs::read_to_string(&path)
                        .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
                }
            }
        }
        Ok(p)
    }

    pub fn render(&self, t: Template, vars: &[(&str, &str)]) -> String {
        let idx = Template::ALL.iter().position(|x| *x == t).expect("known template");
        let mut out = self.texts[idx].clone();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }
}

/// Contents of the first fenced code block, or the trimmed text.
pub fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    if let Some(start) = t.find("```") {
        let after = &t[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        let end = body.find("```").unwrap_or(body.len());
        return body[..end].trim_matches('\n');
    }
    t
}
