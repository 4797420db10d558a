//! Reference predictors: corpus-majority constant and keyword rules.
//!
//! Both always emit taxonomy-valid records; invalid combinations are coerced
//! with [`Labels::coerced`].

use std::collections::HashMap;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::Serialize;
use thiserror::Error;

use crate::ingest::UnifiedRecord;
use crate::taxonomy::{
    AvFailed, Cause, ClassificationRecord, Dimension, FailedSystem, Labels, Source,
};

pub const DEFAULT_RULES_TEXT: &str = include_str!("../assets/keyword_rules.tsv");

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("cannot compute priors over an empty corpus")]
    EmptyCorpus,
    #[error("rule line {line}: {message}")]
    Rule { line: usize, message: String },
    #[error("duplicate priority {priority} in dimension {dimension}")]
    DuplicatePriority { dimension: Dimension, priority: i64 },
    #[error("cannot read rules {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The most frequent value of one dimension plus the counts behind it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mode<T> {
    pub value: T,
    pub counts: Vec<(T, usize)>,
}

/// First value (in canonical order) with the highest count.
fn mode<T: Copy + PartialEq>(order: &[T], values: impl Iterator<Item = T> + Clone) -> Mode<T> {
    let counts: Vec<(T, usize)> = order
        .iter()
        .map(|&v| (v, values.clone().filter(|x| *x == v).count()))
        .collect();
    let mut best = counts[0];
    for &c in &counts[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    Mode {
        value: best.0,
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusPriors {
    pub av_failed: Mode<AvFailed>,
    pub primary_cause: Mode<Cause>,
    pub failed_system: Mode<FailedSystem>,
    pub late_ai: Mode<bool>,
}

/// Per-dimension argmax. Ties go to the earlier value in
/// Y<N<I, S<H<E<N, PE<PL<CO<SW<HW<HA<N, true<false.
pub fn compute_priors(records: &[ClassificationRecord]) -> Result<CorpusPriors, BaselineError> {
    if records.is_empty() {
        return Err(BaselineError::EmptyCorpus);
    }
    let labels = records.iter().map(|r| r.labels);
    Ok(CorpusPriors {
        av_failed: mode(&AvFailed::ALL, labels.clone().map(|l| l.av_failed)),
        primary_cause: mode(&Cause::ALL, labels.clone().map(|l| l.primary_cause)),
        failed_system: mode(&FailedSystem::ALL, labels.clone().map(|l| l.failed_system)),
        late_ai: mode(&[true, false], labels.map(|l| l.late_ai)),
    })
}

impl CorpusPriors {
    pub fn labels(&self) -> Labels {
        Labels::new(
            self.av_failed.value,
            self.primary_cause.value,
            self.failed_system.value,
            self.late_ai.value,
            Cause::N,
        )
        .coerced()
    }
}

pub fn majority_predict(report_id: &str, priors: &CorpusPriors) -> ClassificationRecord {
    ClassificationRecord::new(report_id, priors.labels(), Source::MajorityBaseline)
}

#[derive(Debug, Clone)]
pub struct KeywordRule {
    pub pattern: Regex,
    pub dimension: Dimension,
    pub value: String,
    pub priority: i64,
}

impl KeywordRule {
    pub fn new(
        pattern: &str,
        dimension: Dimension,
        value: &str,
        priority: i64,
    ) -> Result<Self, String> {
        let pattern = RegexBuilder::new(pattern)
            .case_insensitive(true)
            .build()
            .map_err(|e| e.to_string())?;
        let value = value.trim();
        crate::taxonomy::decode_label(dimension, value).map_err(|e| e.to_string())?;
        Ok(Self {
            pattern,
            dimension,
            value: value.to_string(),
            priority,
        })
    }
}

/// Validated rule table: priorities are unique within each dimension.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<KeywordRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<KeywordRule>) -> Result<Self, BaselineError> {
        let mut seen = HashMap::new();
        for r in &rules {
            if seen.insert((r.dimension, r.priority), ()).is_some() {
                return Err(BaselineError::DuplicatePriority {
                    dimension: r.dimension,
                    priority: r.priority,
                });
            }
        }
        Ok(Self { rules })
    }

    /// `priority<TAB>dimension<TAB>pattern<TAB>code` per line; `#` comments
    /// and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, BaselineError> {
        let mut rules = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let err = |message: String| BaselineError::Rule {
                line: idx + 1,
                message,
            };
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [priority, dimension, pattern, code] = cols[..] else {
                return Err(err(format!("expected 4 tab-separated columns, got {}", cols.len())));
            };
            let priority: i64 = priority
                .trim()
                .parse()
                .map_err(|_| err(format!("bad priority {priority:?}")))?;
            let dimension: Dimension = dimension.parse().map_err(err)?;
            rules.push(KeywordRule::new(pattern, dimension, code, priority).map_err(err)?);
        }
        Self::new(rules)
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let text = std::fs::read_to_string(path).map_err(|source| BaselineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn rules(&self) -> &[KeywordRule] {
        &self.rules
    }

    /// Highest-priority matching rule per dimension.
    pub fn winners(&self, text: &str) -> HashMap<Dimension, &KeywordRule> {
        let mut best: HashMap<Dimension, &KeywordRule> = HashMap::new();
        for r in self.rules.iter().filter(|r| r.pattern.is_match(text)) {
            match best.get(&r.dimension) {
                Some(b) if b.priority >= r.priority => {}
                _ => {
                    best.insert(r.dimension, r);
                }
            }
        }
        best
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES_TEXT).expect("shipped rule table is valid")
    }
}

/// Labels used for dimensions no rule matched.
pub fn keyword_defaults() -> Labels {
    Labels::new(AvFailed::I, Cause::N, FailedSystem::N, false, Cause::N)
}

pub fn keyword_predict(
    record: &UnifiedRecord,
    rules: &RuleSet,
    defaults: &Labels,
) -> ClassificationRecord {
    let mut labels = *defaults;
    for (dim, rule) in rules.winners(&record.full_text) {
        // codes were validated when the rule was built
        let v = rule.value.as_str();
        match dim {
            Dimension::AvFailed => labels.av_failed = v.parse().expect("valid code"),
            Dimension::Cause => labels.primary_cause = v.parse().expect("valid code"),
            Dimension::System => labels.failed_system = v.parse().expect("valid code"),
            Dimension::Secondary => labels.secondary_cause = v.parse().expect("valid code"),
            Dimension::Late => labels.late_ai = v == "true",
        }
    }
    ClassificationRecord::new(
        record.report_id.clone(),
        labels.coerced(),
        Source::KeywordBaseline,
    )
}
