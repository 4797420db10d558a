//! Prompt construction and decoding parameters.
//!
//! A [`PromptTemplate`] is a system layout with an `{{EXAMPLES}}` slot, a
//! user layout with a `{{FULL_TEXT}}` slot, and a list of one-shot examples.
//! It is stored on disk as plain text (see [`PromptTemplate::to_text`]) and
//! versioned by the SHA-256 of that text.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::UnifiedRecord;

pub const EXAMPLES_SLOT: &str = "{{EXAMPLES}}";
pub const FULL_TEXT_SLOT: &str = "{{FULL_TEXT}}";
pub const TRUNCATION_SENTINEL: &str = "\n[TRUNCATED]";
pub const DEFAULT_MAX_CONTEXT_CHARS: usize = 24_000;

const SYSTEM_HEADER: &str = "### SYSTEM";
const USER_HEADER: &str = "### USER";
const EXAMPLE_HEADER: &str = "### EXAMPLE";

/// The shipped template file; identical to `PromptTemplate::default().to_text()`.
pub const DEFAULT_TEMPLATE_TEXT: &str = include_str!("../assets/prompt_template.txt");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template: {0}")]
    Format(String),
}

/// Sampling configuration sent with every request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_output_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneShotExample {
    pub input: String,
    pub output: String,
}

/// Structured pieces of the analyst instructions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSections {
    pub persona: String,
    pub task_list: Vec<String>,
    pub rules: Vec<String>,
    pub code_tables: String,
    pub secondary_rules: Vec<String>,
    pub output_format: String,
}

impl Default for TemplateSections {
    fn default() -> Self {
        Self {
            persona: "Role: You are an autonomous vehicle (AV) incident analyst. Perform all \
                      reasoning internally and only output the final structured result."
                .into(),
            task_list: vec![
                "Decide if AV contributed.".into(),
                "Select primary cause.".into(),
                "Identify failed system (if S).".into(),
                "Check if AI response was late.".into(),
                "Assign secondary cause.".into(),
            ],
            rules: vec![
                "Moving AV action contributed → Y".into(),
                "Parked/Stationary rear-ended → N (unless avoidable → Y)".into(),
                "Delayed detection/reaction → Y and Late AI = true".into(),
                "Insufficient info → I".into(),
            ],
            code_tables: "Causes: S (Sys), H (Hum), E (Env), N (None)\n\
                          Systems: PE (Perc), PL (Plan), CO (Control), SW, HW, HA, N"
                .into(),
            secondary_rules: vec![
                "Provide only if multiple factors; Must differ from primary (S, H, E, N)".into(),
            ],
            output_format: "Output format: a single JSON object with keys \"AV_Failed\", \
                            \"Cause\", \"System\", \"Late\" and, only if multiple factors, \
                            \"Secondary\"."
                .into(),
        }
    }
}

impl TemplateSections {
    /// System layout with an `{{EXAMPLES}}` slot at the end.
    pub fn layout(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.persona);
        s.push_str("\n\nTasks\n");
        for (i, t) in self.task_list.iter().enumerate() {
            s.push_str(&format!("{}. {}\n", i + 1, t));
        }
        s.push_str("\nRules for AV Failed\n");
        for r in &self.rules {
            s.push_str(&format!("- {r}\n"));
        }
        s.push('\n');
        s.push_str(&self.code_tables);
        s.push_str("\n\nSecondary Cause Rules\n");
        for r in &self.secondary_rules {
            s.push_str(&format!("- {r}\n"));
        }
        s.push('\n');
        s.push_str(&self.output_format);
        s.push_str("\n\n");
        s.push_str(EXAMPLES_SLOT);
        s
    }
}

pub fn default_examples() -> Vec<OneShotExample> {
    vec![
        OneShotExample {
            input: "AV rear-ended while stopped at a red light.".into(),
            output: r#"{"AV_Failed": "N", "Cause": "H", "System": "N", "Late": false}"#.into(),
        },
        OneShotExample {
            input: "AV failed to detect pedestrian; emergency braking engaged 0.5s after impact."
                .into(),
            output: r#"{"AV_Failed": "Y", "Cause": "S", "System": "PE", "Late": true}"#.into(),
        },
    ]
}

const DEFAULT_USER_LAYOUT: &str =
    "Incident report:\n{{FULL_TEXT}}\n\nRespond with only the JSON object.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system_layout: String,
    pub user_layout: String,
    pub examples: Vec<OneShotExample>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_layout: TemplateSections::default().layout(),
            user_layout: DEFAULT_USER_LAYOUT.into(),
            examples: default_examples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    /// Parse the `### SYSTEM` / `### USER` / `### EXAMPLE` file format.
    pub fn from_text(text: &str) -> Result<Self, TemplateError> {
        let mut system: Option<Vec<&str>> = None;
        let mut user: Option<Vec<&str>> = None;
        let mut examples: Vec<Vec<&str>> = Vec::new();
        let mut current: Option<&mut Vec<&str>> = None;
        for line in text.lines() {
            match line.trim_end() {
                SYSTEM_HEADER => {
                    if system.is_some() {
                        return Err(TemplateError::Format("duplicate ### SYSTEM section".into()));
                    }
                    current = Some(system.insert(Vec::new()));
                }
                USER_HEADER => {
                    if user.is_some() {
                        return Err(TemplateError::Format("duplicate ### USER section".into()));
                    }
                    current = Some(user.insert(Vec::new()));
                }
                EXAMPLE_HEADER => {
                    examples.push(Vec::new());
                    current = examples.last_mut();
                }
                _ => match current.as_deref_mut() {
                    Some(buf) => buf.push(line),
                    None if line.trim().is_empty() => {}
                    None => {
                        return Err(TemplateError::Format(
                            "text before the first section header".into(),
                        ))
                    }
                },
            }
        }
        let join = |lines: Vec<&str>| lines.join("\n").trim_matches('\n').to_string();
        let system_layout = join(system.ok_or_else(|| missing("### SYSTEM"))?);
        let user_layout = join(user.ok_or_else(|| missing("### USER"))?);
        if !user_layout.contains(FULL_TEXT_SLOT) {
            return Err(TemplateError::Format(format!(
                "user section lacks the {FULL_TEXT_SLOT} placeholder"
            )));
        }
        let examples = examples
            .into_iter()
            .map(parse_example)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            system_layout,
            user_layout,
            examples,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{SYSTEM_HEADER}\n{}\n{USER_HEADER}\n{}\n",
            self.system_layout, self.user_layout
        );
        for ex in &self.examples {
            s.push_str(&format!(
                "{EXAMPLE_HEADER}\nInput: {}\nOutput: {}\n",
                ex.input, ex.output
            ));
        }
        s
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn version(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn render_examples(&self) -> String {
        if self.examples.is_empty() {
            return String::new();
        }
        let mut s = String::from("Examples\n");
        for (i, ex) in self.examples.iter().enumerate() {
            s.push_str(&format!("Ex {}: {}\nOutput: {}\n", i + 1, ex.input, ex.output));
        }
        s
    }

    pub fn system_text(&self) -> String {
        let rendered = self
            .system_layout
            .replace(EXAMPLES_SLOT, &self.render_examples());
        format!("{}\n", rendered.trim_end())
    }
}

fn missing(section: &str) -> TemplateError {
    TemplateError::Format(format!("missing {section} section"))
}

fn parse_example(lines: Vec<&str>) -> Result<OneShotExample, TemplateError> {
    let mut input = None;
    let mut output = None;
    for line in lines {
        if let Some(rest) = line.strip_prefix("Input:") {
            input = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("Output:") {
            output = Some(rest.trim().to_string());
        } else if !line.trim().is_empty() {
            return Err(TemplateError::Format(format!(
                "unexpected line in example: {line:?}"
            )));
        }
    }
    match (input, output) {
        (Some(input), Some(output)) => Ok(OneShotExample { input, output }),
        _ => Err(TemplateError::Format(
            "example needs both Input: and Output: lines".into(),
        )),
    }
}

/// Keep the head of `text` within `budget` characters.
fn truncate_head(text: &str, budget: usize) -> (String, bool) {
    match text.char_indices().nth(budget) {
        None => (text.to_string(), false),
        Some((cut, _)) => (text[..cut].to_string(), true),
    }
}

/// System text is the rendered template; user text wraps the record's full
/// text, cut tail-first so the user text stays within `max_context_chars`
/// plus the `[TRUNCATED]` sentinel.
pub fn build_prompt(
    record: &UnifiedRecord,
    template: &PromptTemplate,
    max_context_chars: usize,
) -> Prompt {
    let wrapper_chars = template.user_layout.chars().count() - FULL_TEXT_SLOT.chars().count();
    let budget = max_context_chars.saturating_sub(wrapper_chars);
    let (mut body, truncated) = truncate_head(&record.full_text, budget);
    if truncated {
        body.push_str(TRUNCATION_SENTINEL);
    }
    Prompt {
        system: template.system_text(),
        user: template.user_layout.replacen(FULL_TEXT_SLOT, &body, 1),
    }
}
