//! Per-record classification against a chat-completion endpoint.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::extract::{interpret, ThinkTags};
use crate::ingest::UnifiedRecord;
use crate::prompting::{build_prompt, DecodingParams, PromptTemplate, DEFAULT_MAX_CONTEXT_CHARS};
use crate::taxonomy::{ClassificationRecord, Source};

pub const DEFAULT_ENDPOINT: &str = "http://localhost:11434/api/chat";
pub const DEFAULT_MODEL: &str = "deepseek-r1:32b";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Full URL of the chat endpoint, path included.
    pub endpoint_url: String,
    pub model_name: String,
    pub decoding: DecodingParams,
    pub request_timeout: Duration,
    /// Total attempts per record, the first one included.
    pub max_retries: u32,
    pub think_tags: ThinkTags,
    pub max_context_chars: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            endpoint_url: DEFAULT_ENDPOINT.into(),
            model_name: DEFAULT_MODEL.into(),
            decoding: DecodingParams::default(),
            request_timeout: Duration::from_secs(300),
            max_retries: 3,
            think_tags: ThinkTags::default(),
            max_context_chars: DEFAULT_MAX_CONTEXT_CHARS,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.max_retries < 1 {
            return Err("max_retries must be at least 1".into());
        }
        if self.request_timeout.is_zero() {
            return Err("request timeout must be positive".into());
        }
        if self.endpoint_url.trim().is_empty() {
            return Err("endpoint URL is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
}

/// Something that answers a chat request with the model's text.
pub trait ChatBackend: Sync {
    fn chat(&self, messages: &[ChatMessage], config: &ModelConfig)
        -> Result<String, TransportError>;
}

/// Request body in the local-inference chat shape.
pub fn request_body(messages: &[ChatMessage], config: &ModelConfig) -> Value {
    json!({
        "model": config.model_name,
        "messages": messages,
        "options": {
            "temperature": config.decoding.temperature,
            "top_p": config.decoding.top_p,
            "num_predict": config.decoding.max_output_tokens,
        },
        "stream": false,
    })
}

/// Assistant text from either the local-inference (`message.content`) or
/// OpenAI-style (`choices[0].message.content`) response shape.
pub fn response_text(body: &Value) -> Option<&str> {
    body.pointer("/message/content")
        .or_else(|| body.pointer("/choices/0/message/content"))
        .or_else(|| body.get("response"))
        .and_then(Value::as_str)
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: &ModelConfig) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(Self { client })
    }
}

impl ChatBackend for HttpBackend {
    fn chat(
        &self,
        messages: &[ChatMessage],
        config: &ModelConfig,
    ) -> Result<String, TransportError> {
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.to_string())
            }
        };
        let resp = self
            .client
            .post(&config.endpoint_url)
            .json(&request_body(messages, config))
            .send()
            .map_err(classify)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError::Network(format!("HTTP {status}")));
        }
        let body: Value = resp.json().map_err(classify)?;
        response_text(&body)
            .map(str::to_string)
            .ok_or_else(|| TransportError::Network("response has no message content".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Timeout,
    Network,
    ExhaustedRetries,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeResult {
    Success(ClassificationRecord),
    Failure(FailureKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceOutcome {
    pub report_id: String,
    #[serde(flatten)]
    pub result: OutcomeResult,
    pub attempts: u32,
    pub latencies_ms: Vec<u64>,
}

impl InferenceOutcome {
    pub fn record(&self) -> Option<&ClassificationRecord> {
        match &self.result {
            OutcomeResult::Success(r) => Some(r),
            OutcomeResult::Failure(_) => None,
        }
    }

    pub fn failure(&self) -> Option<FailureKind> {
        match self.result {
            OutcomeResult::Success(_) => None,
            OutcomeResult::Failure(k) => Some(k),
        }
    }
}

/// Ask the model about one record, re-asking with a repair line until the
/// answer validates or `max_retries` attempts are spent.
///
/// A final failure is `Timeout`/`Network` when the last attempt failed in
/// transport, `ExhaustedRetries` when the last answer was unusable.
pub fn classify_record<B: ChatBackend + ?Sized>(
    backend: &B,
    record: &UnifiedRecord,
    config: &ModelConfig,
    template: &PromptTemplate,
) -> InferenceOutcome {
    let prompt = build_prompt(record, template, config.max_context_chars);
    let version = template.version();
    let mut repair: Option<String> = None;
    let mut latencies_ms = Vec::new();
    let mut last_failure = FailureKind::ExhaustedRetries;

    for attempt in 1..=config.max_retries.max(1) {
        let user = match &repair {
            Some(line) => format!("{}\n{}", prompt.user, line),
            None => prompt.user.clone(),
        };
        let messages = [ChatMessage::system(&prompt.system), ChatMessage::user(user)];
        let started = Instant::now();
        let reply = backend.chat(&messages, config);
        latencies_ms.push(started.elapsed().as_millis() as u64);

        match reply {
            Err(TransportError::Timeout) => {
                log::warn!("{}: attempt {attempt} timed out", record.report_id);
                last_failure = FailureKind::Timeout;
            }
            Err(TransportError::Network(msg)) => {
                log::warn!("{}: attempt {attempt}: {msg}", record.report_id);
                last_failure = FailureKind::Network;
            }
            Ok(text) => match interpret(&text, &config.think_tags) {
                Ok(labels) => {
                    return InferenceOutcome {
                        report_id: record.report_id.clone(),
                        result: OutcomeResult::Success(ClassificationRecord {
                            report_id: record.report_id.clone(),
                            labels,
                            source: Source::Llm,
                            raw_output: text,
                            attempts: attempt,
                            prompt_version: Some(version),
                        }),
                        attempts: attempt,
                        latencies_ms,
                    };
                }
                Err(rejection) => {
                    log::debug!(
                        "{}: attempt {attempt} rejected: {}",
                        record.report_id,
                        rejection.name()
                    );
                    repair = Some(rejection.repair_instruction());
                    last_failure = FailureKind::ExhaustedRetries;
                }
            },
        }
    }

    InferenceOutcome {
        report_id: record.report_id.clone(),
        result: OutcomeResult::Failure(last_failure),
        attempts: config.max_retries.max(1),
        latencies_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Category;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<String, TransportError>>>,
        seen: Mutex<Vec<Vec<ChatMessage>>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<String, TransportError>>) -> Self {
            replies.reverse();
            Self {
                replies: Mutex::new(replies),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl ChatBackend for Scripted {
        fn chat(&self, m: &[ChatMessage], _: &ModelConfig) -> Result<String, TransportError> {
            self.seen.lock().unwrap().push(m.to_vec());
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Ok("garbage".into()))
        }
    }

    fn record() -> UnifiedRecord {
        UnifiedRecord {
            report_id: "R1".into(),
            entity_make: "X/Y".into(),
            full_text: "Narrative:\nAV rear-ended while stopped at a red light.".into(),
            category: Category::Ads,
        }
    }

    const EX1: &str = r#"{"AV_Failed": "N", "Cause": "H", "System": "N", "Late": false}"#;

    #[test]
    fn first_try_success() {
        let b = Scripted::new(vec![Ok(EX1.into())]);
        let o = classify_record(&b, &record(), &ModelConfig::default(), &PromptTemplate::default());
        assert_eq!(o.attempts, 1);
        let rec = o.record().unwrap();
        assert_eq!(rec.raw_output, EX1);
        assert_eq!(rec.prompt_version, Some(PromptTemplate::default().version()));
    }

    #[test]
    fn repair_line_names_the_violation() {
        let bad = r#"{"AV_Failed": "N", "Cause": "H", "System": "PE", "Late": false}"#;
        let b = Scripted::new(vec![Ok(bad.into()), Ok(EX1.into())]);
        let o = classify_record(&b, &record(), &ModelConfig::default(), &PromptTemplate::default());
        assert_eq!(o.attempts, 2);
        let seen = b.seen.lock().unwrap();
        assert!(!seen[0][1].content.contains("rejected"));
        let last_line = seen[1][1].content.lines().last().unwrap();
        assert!(last_line.contains("system-requires-cause-S"), "{last_line}");
    }

    #[test]
    fn exhausted_and_transport_failures() {
        let cfg = ModelConfig::default();
        let b = Scripted::new(vec![]);
        let o = classify_record(&b, &record(), &cfg, &PromptTemplate::default());
        assert_eq!(o.failure(), Some(FailureKind::ExhaustedRetries));
        assert_eq!(o.attempts, 3);
        assert_eq!(o.latencies_ms.len(), 3);

        let b = Scripted::new(vec![
            Err(TransportError::Timeout),
            Err(TransportError::Timeout),
            Err(TransportError::Timeout),
        ]);
        let o = classify_record(&b, &record(), &cfg, &PromptTemplate::default());
        assert_eq!(o.failure(), Some(FailureKind::Timeout));

        let b = Scripted::new(vec![Err(TransportError::Timeout), Ok(EX1.into())]);
        let o = classify_record(&b, &record(), &cfg, &PromptTemplate::default());
        assert_eq!(o.attempts, 2);
        assert!(o.record().is_some());
    }

    #[test]
    fn wire_shape() {
        let body = request_body(&[ChatMessage::user("hi")], &ModelConfig::default());
        assert_eq!(body["stream"], false);
        assert_eq!(body["options"]["temperature"], 0.0);
        assert_eq!(body["options"]["top_p"], 1.0);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(
            response_text(&json!({"choices": [{"message": {"content": "x"}}]})),
            Some("x")
        );
        assert_eq!(response_text(&json!({"message": {"content": "y"}})), Some("y"));
    }

    #[test]
    fn outcome_serialization() {
        let o = InferenceOutcome {
            report_id: "a".into(),
            result: OutcomeResult::Failure(FailureKind::Timeout),
            attempts: 3,
            latencies_ms: vec![1, 2, 3],
        };
        let s = serde_json::to_string(&o).unwrap();
        assert!(s.contains(r#""failure":"timeout""#), "{s}");
        assert_eq!(serde_json::from_str::<InferenceOutcome>(&s).unwrap(), o);
    }
}
