//! Pipeline configuration file (TOML).
//!
//! Every key is optional; unknown keys are rejected. `CRASH_ENDPOINT` and
//! `CRASH_MODEL` override the inference endpoint and model name.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::aggregate::RearEndDetector;
use crate::baselines::RuleSet;
use crate::inference::{ModelConfig, ThinkTags};
use crate::ingest::{Redaction, DEFAULT_REDACTION_MARKERS};
use crate::prompting::{DecodingParams, PromptTemplate, DEFAULT_MAX_CONTEXT_CHARS};

pub const ENDPOINT_ENV: &str = "CRASH_ENDPOINT";
pub const MODEL_ENV: &str = "CRASH_MODEL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config: {key} points at missing file {path}")]
    MissingFile { key: &'static str, path: PathBuf },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub endpoint_url: String,
    pub model_name: String,
    pub decoding: DecodingParams,
    pub request_timeout_secs: u64,
    pub max_retries: u32,
    pub parallelism: usize,
    pub max_context_chars: usize,
    pub think_tags: ThinkTags,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            endpoint_url: model.endpoint_url,
            model_name: model.model_name,
            decoding: model.decoding,
            request_timeout_secs: model.request_timeout.as_secs(),
            max_retries: model.max_retries,
            parallelism: 4,
            max_context_chars: DEFAULT_MAX_CONTEXT_CHARS,
            think_tags: model.think_tags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inference: InferenceSection,
    pub template_path: Option<PathBuf>,
    pub keyword_rules_path: Option<PathBuf>,
    pub rear_end_patterns_path: Option<PathBuf>,
    pub redaction_markers: Vec<String>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inference: InferenceSection::default(),
            template_path: None,
            keyword_rules_path: None,
            rear_end_patterns_path: None,
            redaction_markers: DEFAULT_REDACTION_MARKERS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            seed: 7,
        }
    }
}

impl PipelineConfig {
    /// Parses `text`; relative paths resolve against `base`.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self, ConfigError> {
        let mut config: PipelineConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse {
                path: origin.to_path_buf(),
                message: e.message().to_string(),
            })?;
        for (key, slot) in [
            ("template_path", &mut config.template_path),
            ("keyword_rules_path", &mut config.keyword_rules_path),
            ("rear_end_patterns_path", &mut config.rear_end_patterns_path),
        ] {
            if let Some(p) = slot {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.is_file() {
                    return Err(ConfigError::MissingFile {
                        key,
                        path: p.clone(),
                    });
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Loads `path` if given, else defaults; then applies env overrides.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok());
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(url) = lookup(ENDPOINT_ENV).filter(|v| !v.trim().is_empty()) {
            self.inference.endpoint_url = url;
        }
        if let Some(model) = lookup(MODEL_ENV).filter(|v| !v.trim().is_empty()) {
            self.inference.model_name = model;
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.inference.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        self.model_config().check().map_err(ConfigError::Invalid)
    }

    pub fn model_config(&self) -> ModelConfig {
        let i = &self.inference;
        ModelConfig {
            endpoint_url: i.endpoint_url.clone(),
            model_name: i.model_name.clone(),
            decoding: i.decoding,
            request_timeout: Duration::from_secs(i.request_timeout_secs),
            max_retries: i.max_retries,
            think_tags: i.think_tags.clone(),
            max_context_chars: i.max_context_chars,
        }
    }

    pub fn template(&self) -> Result<PromptTemplate, ConfigError> {
        match &self.template_path {
            Some(p) => PromptTemplate::load(p).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(PromptTemplate::default()),
        }
    }

    pub fn keyword_rules(&self) -> Result<RuleSet, ConfigError> {
        match &self.keyword_rules_path {
            Some(p) => RuleSet::load(p).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(RuleSet::default()),
        }
    }

    pub fn rear_end_detector(&self) -> Result<RearEndDetector, ConfigError> {
        match &self.rear_end_patterns_path {
            Some(p) => {
                RearEndDetector::load(p).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            None => Ok(RearEndDetector::default()),
        }
    }

    pub fn redaction(&self) -> Result<Redaction, ConfigError> {
        Redaction::new(&self.redaction_markers).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
