use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::assignment::Assignment;
use super::store::{ReviewStore, StoreError};
use crate::ingest::UnifiedRecord;
use crate::scoring::{ReviewDimension, ReviewRecord};
use crate::taxonomy::{decode_label, ClassificationRecord};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown reviewer {0:?}")]
    UnknownReviewer(String),
    #[error("case {case_id} is not assigned to reviewer {reviewer_id}")]
    NotAssigned {
        case_id: String,
        reviewer_id: String,
    },
    #[error("review of {case_id} is missing dimensions: {}", fmt_dims(.missing))]
    Incomplete {
        case_id: String,
        missing: Vec<ReviewDimension>,
    },
    #[error("assigned case {0} has no report text or no model output")]
    MissingCase(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn fmt_dims(dims: &[ReviewDimension]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
}

impl ReviewError {
    pub fn kind(&self) -> &'static str {
        match self {
            ReviewError::UnknownReviewer(_) => "unknown_reviewer",
            ReviewError::NotAssigned { .. } => "not_assigned",
            ReviewError::Incomplete { .. } => "incomplete",
            ReviewError::MissingCase(_) => "missing_case",
            ReviewError::Store(StoreError::Duplicate { .. }) => "duplicate",
            ReviewError::Store(_) => "store",
        }
    }
}

/// The model's answer on one reviewed dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionOutput {
    pub dimension: ReviewDimension,
    pub code: String,
    pub label: String,
}

/// What a reviewer sees for one case. Deliberately carries nothing about the
/// reporting entity beyond what the report text itself says.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CasePayload {
    pub case_id: String,
    pub full_text: String,
    pub crash_output: Vec<DimensionOutput>,
    /// 1-based position of this case in the reviewer's queue.
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub reviewer_id: String,
    pub case_ids: Vec<String>,
    pub submitted: Vec<String>,
    pub remaining: usize,
}

pub struct ReviewService {
    texts: HashMap<String, String>,
    outputs: HashMap<String, ClassificationRecord>,
    assignment: Assignment,
    store: ReviewStore,
}

impl ReviewService {
    pub fn new(
        cases: Vec<UnifiedRecord>,
        outputs: Vec<ClassificationRecord>,
        assignment: Assignment,
        store: ReviewStore,
    ) -> Result<Self, ReviewError> {
        let texts: HashMap<_, _> = cases
            .into_iter()
            .map(|c| (c.report_id, c.full_text))
            .collect();
        let outputs: HashMap<_, _> = outputs
            .into_iter()
            .map(|o| (o.report_id.clone(), o))
            .collect();
        for queue in &assignment.queues {
            for id in &queue.case_ids {
                if !texts.contains_key(id) || !outputs.contains_key(id) {
                    return Err(ReviewError::MissingCase(id.clone()));
                }
            }
        }
        Ok(Self {
            texts,
            outputs,
            assignment,
            store,
        })
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    fn queue(&self, reviewer_id: &str) -> Result<&[String], ReviewError> {
        self.assignment
            .queue(reviewer_id)
            .ok_or_else(|| ReviewError::UnknownReviewer(reviewer_id.to_string()))
    }

    pub fn progress(&self, reviewer_id: &str) -> Result<Progress, ReviewError> {
        let queue = self.queue(reviewer_id)?;
        let snapshot = self.store.snapshot();
        let submitted: Vec<String> = queue
            .iter()
            .filter(|c| {
                snapshot
                    .iter()
                    .any(|r| &r.case_id == *c && r.reviewer_id == reviewer_id)
            })
            .cloned()
            .collect();
        Ok(Progress {
            reviewer_id: reviewer_id.to_string(),
            case_ids: queue.to_vec(),
            remaining: queue.len() - submitted.len(),
            submitted,
        })
    }

    /// Next case in queue order that this reviewer has not submitted yet, or
    /// `None` once the queue is exhausted.
    pub fn next_case(&self, reviewer_id: &str) -> Result<Option<CasePayload>, ReviewError> {
        let queue = self.queue(reviewer_id)?;
        let snapshot = self.store.snapshot();
        let done = |c: &String| {
            snapshot
                .iter()
                .any(|r| &r.case_id == c && r.reviewer_id == reviewer_id)
        };
        let Some(index) = queue.iter().position(|c| !done(c)) else {
            return Ok(None);
        };
        let case_id = &queue[index];
        let output = &self.outputs[case_id];
        let crash_output = ReviewDimension::ALL
            .into_iter()
            .map(|dimension| {
                let code = output.labels.code(dimension.field());
                let label = decode_label(dimension.field(), &code)
                    .unwrap_or("unknown")
                    .to_string();
                DimensionOutput {
                    dimension,
                    code,
                    label,
                }
            })
            .collect();
        Ok(Some(CasePayload {
            case_id: case_id.clone(),
            full_text: self.texts[case_id].clone(),
            crash_output,
            position: queue.iter().filter(|c| done(c)).count() + 1,
            total: queue.len(),
        }))
    }

    /// Validates and durably stores one review. The timestamp is set by the
    /// server when the submission leaves it empty.
    pub fn submit(&self, mut review: ReviewRecord) -> Result<ReviewRecord, ReviewError> {
        self.queue(&review.reviewer_id)?;
        if !self.assignment.is_assigned(&review.reviewer_id, &review.case_id) {
            return Err(ReviewError::NotAssigned {
                case_id: review.case_id,
                reviewer_id: review.reviewer_id,
            });
        }
        let missing = review.missing_dimensions();
        if !missing.is_empty() {
            return Err(ReviewError::Incomplete {
                case_id: review.case_id,
                missing,
            });
        }
        if review.timestamp.is_empty() {
            review.timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        }
        self.store.append(&review)?;
        Ok(review)
    }

    /// All persisted reviews in submission order.
    pub fn export(&self) -> Vec<ReviewRecord> {
        self.store.snapshot().as_ref().clone()
    }
}
