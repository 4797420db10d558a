//! Lenient gold labels from expert reviews, per-dimension accuracy, and
//! reviewer agreement.
//!
//! A dimension's gold value is the model's own output whenever at least one
//! reviewer marked it correct. Cases where every reviewer said the report
//! lacked context, or where reviewers rejected the output without offering
//! an alternative, have no gold value and score zero for every predictor.
//! Accuracy denominators are always the full number of reviewed cases.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{ClassificationRecord, Dimension};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoringError {
    #[error("reviews reference cases without a model output: {0:?}")]
    UnknownCases(Vec<String>),
    #[error("predictions missing for cases: {0:?}")]
    MissingPredictions(Vec<String>),
    #[error("review of case {case_id} by {reviewer_id} lacks dimensions {missing:?}")]
    IncompleteReview {
        case_id: String,
        reviewer_id: String,
        missing: Vec<ReviewDimension>,
    },
    #[error("no case has exactly two reviews")]
    NoDoublyReviewed,
}

/// A dimension a reviewer judges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewDimension {
    AvFailed,
    LateAi,
    PrimaryCause,
    FailedSystem,
}

impl ReviewDimension {
    pub const ALL: [ReviewDimension; 4] = [
        ReviewDimension::AvFailed,
        ReviewDimension::LateAi,
        ReviewDimension::PrimaryCause,
        ReviewDimension::FailedSystem,
    ];

    /// Matching classification field.
    pub fn field(self) -> Dimension {
        match self {
            ReviewDimension::AvFailed => Dimension::AvFailed,
            ReviewDimension::LateAi => Dimension::Late,
            ReviewDimension::PrimaryCause => Dimension::Cause,
            ReviewDimension::FailedSystem => Dimension::System,
        }
    }

    /// Column heading used in score tables.
    pub fn heading(self) -> &'static str {
        match self {
            ReviewDimension::AvFailed => "AV Fail",
            ReviewDimension::LateAi => "Late AI",
            ReviewDimension::PrimaryCause => "Cause",
            ReviewDimension::FailedSystem => "Sys. Fail",
        }
    }
}

impl fmt::Display for ReviewDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReviewDimension::AvFailed => "av_failed",
            ReviewDimension::LateAi => "late_ai",
            ReviewDimension::PrimaryCause => "primary_cause",
            ReviewDimension::FailedSystem => "failed_system",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    InsufficientContext,
}

/// One reviewer's verdicts on one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub case_id: String,
    pub reviewer_id: String,
    pub verdicts: BTreeMap<ReviewDimension, Verdict>,
    /// RFC 3339; filled in by the review service when left empty.
    #[serde(default)]
    pub timestamp: String,
    /// Free-text feedback on clarity or consistency; never scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ReviewRecord {
    pub fn missing_dimensions(&self) -> Vec<ReviewDimension> {
        ReviewDimension::ALL
            .into_iter()
            .filter(|d| !self.verdicts.contains_key(d))
            .collect()
    }

    fn check_complete(&self) -> Result<(), ScoringError> {
        let missing = self.missing_dimensions();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ScoringError::IncompleteReview {
                case_id: self.case_id.clone(),
                reviewer_id: self.reviewer_id.clone(),
                missing,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldLabel {
    Value(String),
    InsufficientContext,
    Unresolvable,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GoldLabelSet {
    pub cases: BTreeMap<String, BTreeMap<ReviewDimension, GoldLabel>>,
}

impl GoldLabelSet {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, case_id: &str, dim: ReviewDimension) -> Option<&GoldLabel> {
        self.cases.get(case_id).and_then(|c| c.get(&dim))
    }
}

fn gold_for(verdicts: &[Verdict], model_code: String) -> GoldLabel {
    if verdicts.contains(&Verdict::Correct) {
        GoldLabel::Value(model_code)
    } else if verdicts.iter().all(|v| *v == Verdict::InsufficientContext) {
        GoldLabel::InsufficientContext
    } else {
        GoldLabel::Unresolvable
    }
}

pub fn derive_gold(
    reviews: &[ReviewRecord],
    crash_outputs: &[ClassificationRecord],
) -> Result<GoldLabelSet, ScoringError> {
    let outputs: HashMap<&str, &ClassificationRecord> = crash_outputs
        .iter()
        .map(|r| (r.report_id.as_str(), r))
        .collect();
    let unknown: BTreeSet<String> = reviews
        .iter()
        .filter(|r| !outputs.contains_key(r.case_id.as_str()))
        .map(|r| r.case_id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(ScoringError::UnknownCases(unknown.into_iter().collect()));
    }
    let mut by_case: BTreeMap<&str, Vec<&ReviewRecord>> = BTreeMap::new();
    for r in reviews {
        r.check_complete()?;
        by_case.entry(r.case_id.as_str()).or_default().push(r);
    }
    let mut gold = GoldLabelSet::default();
    for (case_id, case_reviews) in by_case {
        let output = outputs[case_id];
        let dims = ReviewDimension::ALL
            .into_iter()
            .map(|dim| {
                let verdicts: Vec<Verdict> = case_reviews.iter().map(|r| r.verdicts[&dim]).collect();
                (dim, gold_for(&verdicts, output.labels.code(dim.field())))
            })
            .collect();
        gold.cases.insert(case_id.to_string(), dims);
    }
    Ok(gold)
}

/// Correct-case counts per dimension over `n` cases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScoreRow {
    pub n: usize,
    pub correct: BTreeMap<ReviewDimension, usize>,
}

impl ScoreRow {
    pub fn accuracy(&self, dim: ReviewDimension) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.correct.get(&dim).copied().unwrap_or(0) as f64 / self.n as f64
    }
}

/// Exact (trimmed) code match against each gold value; cases without a gold
/// value score zero.
pub fn score(
    predictions: &[ClassificationRecord],
    gold: &GoldLabelSet,
) -> Result<ScoreRow, ScoringError> {
    let mut by_id: HashMap<&str, &ClassificationRecord> = HashMap::new();
    for p in predictions {
        by_id.entry(p.report_id.as_str()).or_insert(p);
    }
    let missing: Vec<String> = gold
        .cases
        .keys()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(ScoringError::MissingPredictions(missing));
    }
    let mut correct: BTreeMap<ReviewDimension, usize> =
        ReviewDimension::ALL.into_iter().map(|d| (d, 0)).collect();
    for (case_id, dims) in &gold.cases {
        let pred = by_id[case_id.as_str()];
        for (dim, label) in dims {
            if let GoldLabel::Value(code) = label {
                if pred.labels.code(dim.field()).trim() == code.trim() {
                    *correct.get_mut(dim).expect("all dimensions present") += 1;
                }
            }
        }
    }
    Ok(ScoreRow {
        n: gold.len(),
        correct,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AgreementCount {
    pub agreed: usize,
    pub total: usize,
}

impl AgreementCount {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.agreed as f64 / self.total as f64
        }
    }
}

/// Raw percent agreement per dimension, pooled over every case that has
/// exactly two reviews.
pub fn reviewer_agreement(
    reviews: &[ReviewRecord],
) -> Result<BTreeMap<ReviewDimension, AgreementCount>, ScoringError> {
    let mut by_case: BTreeMap<&str, Vec<&ReviewRecord>> = BTreeMap::new();
    for r in reviews {
        r.check_complete()?;
        by_case.entry(r.case_id.as_str()).or_default().push(r);
    }
    let pairs: Vec<(&ReviewRecord, &ReviewRecord)> = by_case
        .values()
        .filter(|v| v.len() == 2)
        .map(|v| (v[0], v[1]))
        .collect();
    if pairs.is_empty() {
        return Err(ScoringError::NoDoublyReviewed);
    }
    Ok(ReviewDimension::ALL
        .into_iter()
        .map(|dim| {
            let agreed = pairs
                .iter()
                .filter(|(a, b)| a.verdicts[&dim] == b.verdicts[&dim])
                .count();
            (
                dim,
                AgreementCount {
                    agreed,
                    total: pairs.len(),
                },
            )
        })
        .collect())
}

/// Share of individual reviews that marked `dim` as lacking context.
pub fn insufficient_rate(reviews: &[ReviewRecord], dim: ReviewDimension) -> f64 {
    if reviews.is_empty() {
        return 0.0;
    }
    let n = reviews
        .iter()
        .filter(|r| r.verdicts.get(&dim) == Some(&Verdict::InsufficientContext))
        .count();
    n as f64 / reviews.len() as f64
}

fn format_percent(fraction: f64) -> String {
    let p = format!("{:.1}", fraction * 100.0);
    format!("{}%", p.strip_suffix(".0").unwrap_or(&p))
}

/// Method-by-dimension accuracy table, one row per predictor.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScoreTable {
    pub rows: Vec<(String, ScoreRow)>,
}

impl ScoreTable {
    pub fn push(&mut self, method: impl Into<String>, row: ScoreRow) {
        self.rows.push((method.into(), row));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("Method");
        for d in ReviewDimension::ALL {
            out.push(',');
            out.push_str(d.heading());
        }
        out.push('\n');
        for (method, row) in &self.rows {
            out.push_str(method);
            for d in ReviewDimension::ALL {
                out.push(',');
                out.push_str(&format_percent(row.accuracy(d)));
            }
            out.push('\n');
        }
        out
    }
}
