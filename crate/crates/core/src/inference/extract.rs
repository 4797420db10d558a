//! Pull the classification object out of free-form model text.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::taxonomy::{AvFailed, Cause, Dimension, FailedSystem, Labels, Violation};

/// Keys a candidate object must carry to count as a classification.
pub const REQUIRED_KEYS: [&str; 4] = ["AV_Failed", "Cause", "System", "Late"];

/// Delimiters of a reasoning block emitted before the answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThinkTags {
    pub open: String,
    pub close: String,
}

impl Default for ThinkTags {
    fn default() -> Self {
        Self {
            open: "<think>".into(),
            close: "</think>".into(),
        }
    }
}

/// Remove reasoning blocks. An unterminated block runs to the end of the
/// text; a close tag with no opener drops everything before it.
pub fn strip_reasoning(text: &str, tags: &ThinkTags) -> String {
    let mut rest = text;
    if let Some(close) = rest.find(&tags.close) {
        let opened_before = rest.find(&tags.open).is_some_and(|o| o < close);
        if !opened_before {
            rest = &rest[close + tags.close.len()..];
        }
    }
    let mut out = String::with_capacity(rest.len());
    while let Some(open) = rest.find(&tags.open) {
        out.push_str(&rest[..open]);
        let after = &rest[open + tags.open.len()..];
        match after.find(&tags.close) {
            Some(close) => rest = &after[close + tags.close.len()..],
            None => {
                rest = "";
                break;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Byte index of the brace closing the object opened at `start`, honouring
/// JSON string literals and escapes.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn has_required_keys(obj: &Map<String, Value>) -> bool {
    REQUIRED_KEYS.iter().all(|k| obj.contains_key(*k))
}

/// First balanced `{...}` group that parses as a JSON object carrying the
/// required keys, after reasoning blocks are stripped.
pub fn extract_object(model_text: &str, tags: &ThinkTags) -> Option<Map<String, Value>> {
    let text = strip_reasoning(model_text, tags);
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(offset) = text[from..].find('{') {
        let start = from + offset;
        if let Some(end) = balanced_end(bytes, start) {
            if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(&text[start..=end]) {
                if has_required_keys(&obj) {
                    return Some(obj);
                }
            }
        }
        from = start + 1;
    }
    None
}

/// Why a model response could not be accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    NoObject,
    BadValue { key: &'static str, value: String },
    Invalid(Vec<Violation>),
}

impl Rejection {
    pub fn name(&self) -> String {
        match self {
            Rejection::NoObject => "no-object-found".into(),
            Rejection::BadValue { key, .. } => format!("invalid-value-{key}"),
            Rejection::Invalid(v) => v.iter().map(|v| v.name()).collect::<Vec<_>>().join(","),
        }
    }

    /// One-line instruction appended to the next attempt.
    pub fn repair_instruction(&self) -> String {
        let detail = match self {
            Rejection::NoObject => format!(
                "no JSON object with keys {} was found",
                REQUIRED_KEYS.map(|k| format!("\"{k}\"")).join(", ")
            ),
            Rejection::BadValue { key, value } => {
                let dim = match *key {
                    "AV_Failed" => Dimension::AvFailed,
                    "Cause" => Dimension::Cause,
                    "System" => Dimension::System,
                    "Late" => Dimension::Late,
                    _ => Dimension::Secondary,
                };
                format!(
                    "\"{key}\" was {value}, allowed values are {}",
                    dim.codes().join(", ")
                )
            }
            Rejection::Invalid(v) => v
                .iter()
                .map(|v| v.repair_hint())
                .collect::<Vec<_>>()
                .join("; "),
        };
        format!(
            "Your previous answer was rejected ({}): {detail}. Output only the corrected JSON object.",
            self.name()
        )
    }
}

fn code_field<T: std::str::FromStr>(
    obj: &Map<String, Value>,
    key: &'static str,
) -> Result<Option<T>, Rejection> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => s.parse().map(Some).map_err(|_| Rejection::BadValue {
            key,
            value: Value::String(s.clone()).to_string(),
        }),
        Some(other) => Err(Rejection::BadValue {
            key,
            value: other.to_string(),
        }),
    }
}

fn required<T>(v: Option<T>, key: &'static str) -> Result<T, Rejection> {
    v.ok_or(Rejection::BadValue {
        key,
        value: "null".into(),
    })
}

/// Typed labels from an extracted object. `Secondary` defaults to `N`.
pub fn parse_labels(obj: &Map<String, Value>) -> Result<Labels, Rejection> {
    let av_failed: AvFailed = required(code_field(obj, "AV_Failed")?, "AV_Failed")?;
    let primary_cause: Cause = required(code_field(obj, "Cause")?, "Cause")?;
    let failed_system: FailedSystem = required(code_field(obj, "System")?, "System")?;
    let late_ai = match obj.get("Late") {
        Some(Value::Bool(b)) => *b,
        Some(Value::String(s)) if s.trim().eq_ignore_ascii_case("true") => true,
        Some(Value::String(s)) if s.trim().eq_ignore_ascii_case("false") => false,
        other => {
            return Err(Rejection::BadValue {
                key: "Late",
                value: other.map_or("null".into(), |v| v.to_string()),
            })
        }
    };
    let secondary_cause: Cause = code_field(obj, "Secondary")?.unwrap_or(Cause::N);
    Ok(Labels::new(
        av_failed,
        primary_cause,
        failed_system,
        late_ai,
        secondary_cause,
    ))
}

/// Extraction, typing and validation in one step.
pub fn interpret(model_text: &str, tags: &ThinkTags) -> Result<Labels, Rejection> {
    let obj = extract_object(model_text, tags).ok_or(Rejection::NoObject)?;
    let labels = parse_labels(&obj)?;
    let violations = crate::taxonomy::validate_labels(&labels);
    if violations.is_empty() {
        Ok(labels)
    } else {
        Err(Rejection::Invalid(violations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX2: &str = r#"{"AV_Failed": "Y", "Cause": "S", "System": "PE", "Late": true}"#;

    fn tags() -> ThinkTags {
        ThinkTags::default()
    }

    #[test]
    fn exact_example_output() {
        let obj = extract_object(EX2, &tags()).unwrap();
        let l = parse_labels(&obj).unwrap();
        assert_eq!(
            l,
            Labels::new(AvFailed::Y, Cause::S, FailedSystem::PE, true, Cause::N)
        );
    }

    #[test]
    fn empty_text() {
        assert!(extract_object("", &tags()).is_none());
        assert_eq!(interpret("", &tags()), Err(Rejection::NoObject));
    }

    #[test]
    fn wrapped_in_reasoning_and_prose() {
        let text = format!(
            "<think>maybe {{\"AV_Failed\": \"N\", \"Cause\": \"H\", \"System\": \"N\", \"Late\": false}}</think>\
             Here is the answer: {EX2} and also {{\"note\": 1}}"
        );
        let obj = extract_object(&text, &tags()).unwrap();
        assert_eq!(obj["Cause"], "S");
    }

    #[test]
    fn skips_non_matching_objects_and_braces_in_strings() {
        let text = format!(r#"{{"summary": "a }} b"}} then {EX2}"#);
        assert_eq!(extract_object(&text, &tags()).unwrap()["System"], "PE");
    }

    #[test]
    fn nested_object_is_found() {
        let text = format!(r#"{{"result": {EX2}}}"#);
        assert_eq!(extract_object(&text, &tags()).unwrap()["System"], "PE");
    }

    #[test]
    fn stray_close_tag_and_unterminated_block() {
        assert!(extract_object(&format!("{EX2} reasoning </think> nothing"), &tags()).is_none());
        assert!(extract_object(&format!("<think> {EX2}"), &tags()).is_none());
        assert!(extract_object(&format!("thinking...</think>{EX2}"), &tags()).is_some());
    }

    #[test]
    fn custom_tags() {
        let t = ThinkTags {
            open: "<reasoning>".into(),
            close: "</reasoning>".into(),
        };
        let text = format!("<reasoning>{{\"AV_Failed\": \"I\", \"Cause\": \"N\", \"System\": \"N\", \"Late\": false}}</reasoning>{EX2}");
        assert_eq!(extract_object(&text, &t).unwrap()["AV_Failed"], "Y");
    }

    #[test]
    fn bad_codes_and_violations() {
        let r = interpret(
            r#"{"AV_Failed": "Y", "Cause": "S", "System": "XX", "Late": true}"#,
            &tags(),
        );
        assert!(matches!(r, Err(Rejection::BadValue { key: "System", .. })));
        let r = interpret(
            r#"{"AV_Failed": "N", "Cause": "H", "System": "PE", "Late": false}"#,
            &tags(),
        );
        assert_eq!(r, Err(Rejection::Invalid(vec![Violation::SystemRequiresCauseS])));
        let msg = r.unwrap_err().repair_instruction();
        assert!(msg.contains("system-requires-cause-S"));
        assert!(!msg.contains('\n'));
    }

    #[test]
    fn late_as_string_and_null_secondary() {
        let l = interpret(
            r#"{"AV_Failed": "y", "Cause": "s", "System": "pl", "Late": "true", "Secondary": null}"#,
            &tags(),
        )
        .unwrap();
        assert_eq!(l.failed_system, FailedSystem::PL);
        assert!(l.late_ai);
        assert_eq!(l.secondary_cause, Cause::N);
    }
}
