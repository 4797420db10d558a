//! Classification schema: codes, cross-field validity rules and the cause
//! taxonomy tree.
//!
//! Every downstream stage (baselines, scoring, aggregation, review) speaks in
//! these types. The serialized form of [`ClassificationRecord`] uses the key
//! names `AV_Failed`, `Cause`, `System`, `Late` and `Secondary`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown {dimension} code {code:?}")]
    UnknownCode { dimension: Dimension, code: String },
}

/// Whether the AV materially contributed to the incident.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AvFailed {
    Y,
    N,
    I,
}

/// Primary or secondary cause family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cause {
    S,
    H,
    E,
    N,
}

/// Subsystem that failed, only meaningful when the primary cause is `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailedSystem {
    PE,
    PL,
    CO,
    SW,
    HW,
    HA,
    N,
}

impl AvFailed {
    pub const ALL: [AvFailed; 3] = [AvFailed::Y, AvFailed::N, AvFailed::I];

    pub fn code(self) -> &'static str {
        match self {
            AvFailed::Y => "Y",
            AvFailed::N => "N",
            AvFailed::I => "I",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AvFailed::Y => "Yes",
            AvFailed::N => "No",
            AvFailed::I => "Insufficient information",
        }
    }
}

impl Cause {
    pub const ALL: [Cause; 4] = [Cause::S, Cause::H, Cause::E, Cause::N];

    pub fn code(self) -> &'static str {
        match self {
            Cause::S => "S",
            Cause::H => "H",
            Cause::E => "E",
            Cause::N => "N",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Cause::S => "System",
            Cause::H => "Human",
            Cause::E => "Environmental",
            Cause::N => "None",
        }
    }
}

impl FailedSystem {
    pub const ALL: [FailedSystem; 7] = [
        FailedSystem::PE,
        FailedSystem::PL,
        FailedSystem::CO,
        FailedSystem::SW,
        FailedSystem::HW,
        FailedSystem::HA,
        FailedSystem::N,
    ];

    pub fn code(self) -> &'static str {
        match self {
            FailedSystem::PE => "PE",
            FailedSystem::PL => "PL",
            FailedSystem::CO => "CO",
            FailedSystem::SW => "SW",
            FailedSystem::HW => "HW",
            FailedSystem::HA => "HA",
            FailedSystem::N => "N",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FailedSystem::PE => "Perception",
            FailedSystem::PL => "Planning",
            FailedSystem::CO => "Control",
            FailedSystem::SW => "Software",
            FailedSystem::HW => "Hardware",
            FailedSystem::HA => "Handover",
            FailedSystem::N => "None",
        }
    }
}

macro_rules! code_enum_traits {
    ($ty:ty, $dim:expr) => {
        impl FromStr for $ty {
            type Err = TaxonomyError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let trimmed = s.trim();
                <$ty>::ALL
                    .into_iter()
                    .find(|v| v.code().eq_ignore_ascii_case(trimmed))
                    .ok_or_else(|| TaxonomyError::UnknownCode {
                        dimension: $dim,
                        code: s.to_string(),
                    })
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.code())
            }
        }
    };
}

code_enum_traits!(AvFailed, Dimension::AvFailed);
code_enum_traits!(Cause, Dimension::Cause);
code_enum_traits!(FailedSystem, Dimension::System);

/// One coded field of a classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    AvFailed,
    Cause,
    System,
    Late,
    Secondary,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::AvFailed,
        Dimension::Cause,
        Dimension::System,
        Dimension::Late,
        Dimension::Secondary,
    ];

    /// Key used in the canonical structured object.
    pub fn key(self) -> &'static str {
        match self {
            Dimension::AvFailed => "AV_Failed",
            Dimension::Cause => "Cause",
            Dimension::System => "System",
            Dimension::Late => "Late",
            Dimension::Secondary => "Secondary",
        }
    }

    /// Codes valid for this dimension, in canonical order.
    pub fn codes(self) -> Vec<&'static str> {
        match self {
            Dimension::AvFailed => AvFailed::ALL.iter().map(|v| v.code()).collect(),
            Dimension::Cause | Dimension::Secondary => {
                Cause::ALL.iter().map(|v| v.code()).collect()
            }
            Dimension::System => FailedSystem::ALL.iter().map(|v| v.code()).collect(),
            Dimension::Late => vec!["true", "false"],
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::AvFailed => "AV failed",
            Dimension::Cause => "cause",
            Dimension::System => "system",
            Dimension::Late => "late",
            Dimension::Secondary => "secondary cause",
        })
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "av_failed" | "avfailed" => Ok(Dimension::AvFailed),
            "cause" | "primary_cause" => Ok(Dimension::Cause),
            "system" | "failed_system" => Ok(Dimension::System),
            "late" | "late_ai" => Ok(Dimension::Late),
            "secondary" | "secondary_cause" => Ok(Dimension::Secondary),
            other => Err(format!("unknown dimension {other:?}")),
        }
    }
}

/// Human-readable label for a code of the given dimension.
pub fn decode_label(dimension: Dimension, code: &str) -> Result<&'static str, TaxonomyError> {
    match dimension {
        Dimension::AvFailed => code.parse::<AvFailed>().map(AvFailed::label),
        Dimension::Cause | Dimension::Secondary => code.parse::<Cause>().map(|c| c.label()),
        Dimension::System => code.parse::<FailedSystem>().map(FailedSystem::label),
        Dimension::Late => match code.trim() {
            "true" => Ok("Late"),
            "false" => Ok("Not late"),
            _ => Err(TaxonomyError::UnknownCode {
                dimension,
                code: code.to_string(),
            }),
        },
    }
}

/// Where a classification came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Llm,
    MajorityBaseline,
    KeywordBaseline,
    Manual,
}

/// The five coded fields of a verdict, without provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labels {
    #[serde(rename = "AV_Failed")]
    pub av_failed: AvFailed,
    #[serde(rename = "Cause")]
    pub primary_cause: Cause,
    #[serde(rename = "System")]
    pub failed_system: FailedSystem,
    #[serde(rename = "Late")]
    pub late_ai: bool,
    #[serde(rename = "Secondary", default = "default_secondary")]
    pub secondary_cause: Cause,
}

fn default_secondary() -> Cause {
    Cause::N
}

impl Labels {
    pub fn new(
        av_failed: AvFailed,
        primary_cause: Cause,
        failed_system: FailedSystem,
        late_ai: bool,
        secondary_cause: Cause,
    ) -> Self {
        Self {
            av_failed,
            primary_cause,
            failed_system,
            late_ai,
            secondary_cause,
        }
    }

    /// Code string for a dimension (`"true"`/`"false"` for late).
    pub fn code(&self, dimension: Dimension) -> String {
        match dimension {
            Dimension::AvFailed => self.av_failed.code().to_string(),
            Dimension::Cause => self.primary_cause.code().to_string(),
            Dimension::System => self.failed_system.code().to_string(),
            Dimension::Late => self.late_ai.to_string(),
            Dimension::Secondary => self.secondary_cause.code().to_string(),
        }
    }

    /// Force the record into the valid region: system dropped unless the
    /// cause is `S`, late dropped unless the AV failed, secondary dropped
    /// when it repeats the primary cause.
    pub fn coerced(mut self) -> Self {
        if self.primary_cause != Cause::S {
            self.failed_system = FailedSystem::N;
        }
        if self.av_failed != AvFailed::Y {
            self.late_ai = false;
        }
        if self.secondary_cause == self.primary_cause {
            self.secondary_cause = Cause::N;
        }
        self
    }
}

/// A validated or to-be-validated verdict for one report, plus provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub report_id: String,
    #[serde(flatten)]
    pub labels: Labels,
    pub source: Source,
    #[serde(default)]
    pub raw_output: String,
    pub attempts: u32,
    /// Content hash of the prompt template that produced the output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_version: Option<String>,
}

impl ClassificationRecord {
    pub fn new(report_id: impl Into<String>, labels: Labels, source: Source) -> Self {
        Self {
            report_id: report_id.into(),
            labels,
            source,
            raw_output: String::new(),
            attempts: 1,
            prompt_version: None,
        }
    }
}

/// A broken cross-field rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Violation {
    /// A failed system other than `N` requires primary cause `S`.
    SystemRequiresCauseS,
    /// Secondary cause repeats the primary cause.
    SecondaryEqualsPrimary,
    /// Late AI response implies the AV failed.
    LateRequiresAvFailed,
}

impl Violation {
    pub const ALL: [Violation; 3] = [
        Violation::SystemRequiresCauseS,
        Violation::SecondaryEqualsPrimary,
        Violation::LateRequiresAvFailed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Violation::SystemRequiresCauseS => "system-requires-cause-S",
            Violation::SecondaryEqualsPrimary => "secondary-equals-primary",
            Violation::LateRequiresAvFailed => "late-requires-av-failed",
        }
    }

    /// Sentence appended to a re-ask when the model produced this violation.
    pub fn repair_hint(self) -> &'static str {
        match self {
            Violation::SystemRequiresCauseS => "\"System\" must be \"N\" unless \"Cause\" is \"S\"",
            Violation::SecondaryEqualsPrimary => {
                "\"Secondary\" must differ from \"Cause\" or be \"N\""
            }
            Violation::LateRequiresAvFailed => "\"Late\": true requires \"AV_Failed\": \"Y\"",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every rule the labels break; empty means valid.
pub fn validate_labels(labels: &Labels) -> Vec<Violation> {
    let mut out = Vec::new();
    if labels.failed_system != FailedSystem::N && labels.primary_cause != Cause::S {
        out.push(Violation::SystemRequiresCauseS);
    }
    if labels.secondary_cause != Cause::N && labels.secondary_cause == labels.primary_cause {
        out.push(Violation::SecondaryEqualsPrimary);
    }
    if labels.late_ai && labels.av_failed != AvFailed::Y {
        out.push(Violation::LateRequiresAvFailed);
    }
    out
}

pub fn validate(record: &ClassificationRecord) -> Vec<Violation> {
    validate_labels(&record.labels)
}

/// Node of the cause taxonomy tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaxonomyNode {
    pub code: String,
    pub label: String,
    pub children: Vec<TaxonomyNode>,
}

impl TaxonomyNode {
    fn leaf(code: &str, label: &str) -> Self {
        Self {
            code: code.to_string(),
            label: label.to_string(),
            children: Vec::new(),
        }
    }

    fn branch(code: &str, label: &str, children: Vec<TaxonomyNode>) -> Self {
        Self {
            code: code.to_string(),
            label: label.to_string(),
            children,
        }
    }

    pub fn find(&self, code: &str) -> Option<&TaxonomyNode> {
        if self.code == code {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(code))
    }

    pub fn leaves(&self) -> Vec<&TaxonomyNode> {
        if self.children.is_empty() {
            return vec![self];
        }
        self.children.iter().flat_map(|c| c.leaves()).collect()
    }

    /// Indented outline, one node per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(0, &mut out);
        out
    }

    fn render_into(&self, depth: usize, out: &mut String) {
        out.push_str(&"  ".repeat(depth));
        out.push_str(&format!("{} [{}]\n", self.label, self.code));
        for c in &self.children {
            c.render_into(depth + 1, out);
        }
    }
}

/// The full cause taxonomy. Leaves are descriptive only; classification
/// output stays at cause/system code granularity.
pub fn taxonomy() -> TaxonomyNode {
    TaxonomyNode::branch(
        "ROOT",
        "AV incident causes",
        vec![
            TaxonomyNode::branch(
                "S",
                "System Failures",
                vec![
                    TaxonomyNode::leaf("S.PE", "Perception"),
                    TaxonomyNode::leaf("S.PR", "Prediction"),
                    TaxonomyNode::leaf("S.PL", "Planning/Control"),
                    TaxonomyNode::leaf("S.SW", "Software faults"),
                    TaxonomyNode::leaf("S.LA", "Latency"),
                    TaxonomyNode::leaf("S.HA", "Delayed handover"),
                    TaxonomyNode::leaf("S.HW", "Hardware/Communication"),
                ],
            ),
            TaxonomyNode::branch(
                "H",
                "Human Factors",
                vec![
                    TaxonomyNode::branch(
                        "H.OP",
                        "AV operator",
                        vec![
                            TaxonomyNode::leaf("H.OP.IN", "Inattention"),
                            TaxonomyNode::leaf("H.OP.PI", "Premature intervention"),
                        ],
                    ),
                    TaxonomyNode::branch(
                        "H.RU",
                        "Other road users",
                        vec![TaxonomyNode::leaf("H.RU.RD", "Reckless driving")],
                    ),
                ],
            ),
            TaxonomyNode::branch(
                "E",
                "Environmental Conditions",
                vec![
                    TaxonomyNode::leaf("E.RD", "Adverse roadway"),
                    TaxonomyNode::leaf("E.WX", "Weather"),
                    TaxonomyNode::leaf("E.TR", "Complex traffic"),
                ],
            ),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(a: AvFailed, c: Cause, s: FailedSystem, late: bool, sec: Cause) -> Labels {
        Labels::new(a, c, s, late, sec)
    }

    #[test]
    fn stationary_rear_end_is_valid() {
        let l = labels(AvFailed::N, Cause::H, FailedSystem::N, false, Cause::N);
        assert!(validate_labels(&l).is_empty());
    }

    #[test]
    fn missed_pedestrian_is_valid() {
        let l = labels(AvFailed::Y, Cause::S, FailedSystem::PE, true, Cause::N);
        assert!(validate_labels(&l).is_empty());
    }

    #[test]
    fn system_without_cause_s() {
        let l = labels(AvFailed::N, Cause::H, FailedSystem::PE, false, Cause::N);
        assert_eq!(validate_labels(&l), vec![Violation::SystemRequiresCauseS]);
        assert_eq!(Violation::SystemRequiresCauseS.name(), "system-requires-cause-S");
    }

    #[test]
    fn secondary_repeats_primary() {
        let l = labels(AvFailed::Y, Cause::S, FailedSystem::PE, true, Cause::S);
        assert_eq!(validate_labels(&l), vec![Violation::SecondaryEqualsPrimary]);
        assert_eq!(Violation::SecondaryEqualsPrimary.name(), "secondary-equals-primary");
    }

    #[test]
    fn late_without_failure() {
        let l = labels(AvFailed::I, Cause::H, FailedSystem::N, true, Cause::N);
        assert_eq!(validate_labels(&l), vec![Violation::LateRequiresAvFailed]);
    }

    #[test]
    fn decode_known_and_unknown() {
        assert_eq!(decode_label(Dimension::System, "PE").unwrap(), "Perception");
        assert_eq!(decode_label(Dimension::Cause, "N").unwrap(), "None");
        let err = decode_label(Dimension::System, "XX").unwrap_err();
        assert_eq!(
            err,
            TaxonomyError::UnknownCode {
                dimension: Dimension::System,
                code: "XX".into()
            }
        );
        assert!(err.to_string().contains("system"));
        assert!(err.to_string().contains("XX"));
    }

    #[test]
    fn labels_are_injective_per_dimension() {
        for dim in Dimension::ALL {
            let labels: Vec<_> = dim
                .codes()
                .into_iter()
                .map(|c| decode_label(dim, c).unwrap())
                .collect();
            let mut dedup = labels.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), labels.len(), "{dim:?}");
        }
    }

    #[test]
    fn canonical_keys() {
        let rec = ClassificationRecord::new(
            "r1",
            labels(AvFailed::Y, Cause::S, FailedSystem::PE, true, Cause::N),
            Source::Llm,
        );
        let v = serde_json::to_value(&rec).unwrap();
        assert_eq!(v["AV_Failed"], "Y");
        assert_eq!(v["Cause"], "S");
        assert_eq!(v["System"], "PE");
        assert_eq!(v["Late"], true);
        assert_eq!(v["Secondary"], "N");
        let back: ClassificationRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn missing_secondary_defaults_to_none() {
        let l: Labels =
            serde_json::from_str(r#"{"AV_Failed": "N", "Cause": "H", "System": "N", "Late": false}"#)
                .unwrap();
        assert_eq!(l.secondary_cause, Cause::N);
    }

    #[test]
    fn taxonomy_shape() {
        let root = taxonomy();
        let names: Vec<_> = root.children.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(
            names,
            ["System Failures", "Human Factors", "Environmental Conditions"]
        );
        let system = root.find("S").unwrap();
        for leaf in [
            "Perception",
            "Prediction",
            "Planning/Control",
            "Software faults",
            "Latency",
            "Delayed handover",
            "Hardware/Communication",
        ] {
            assert!(system.children.iter().any(|c| c.label == leaf), "{leaf}");
        }
        assert!(root.render().contains("  System Failures [S]\n"));
    }

    #[test]
    fn coercion_yields_valid() {
        let l = labels(AvFailed::N, Cause::H, FailedSystem::PL, true, Cause::H).coerced();
        assert!(validate_labels(&l).is_empty());
        assert_eq!(l.failed_system, FailedSystem::N);
        assert!(!l.late_ai);
        assert_eq!(l.secondary_cause, Cause::N);
    }
}
