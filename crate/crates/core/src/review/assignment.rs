use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssignmentError {
    #[error("need at least 2 reviewers, got {0}")]
    TooFewReviewers(usize),
    #[error("overlap {overlap} exceeds the number of cases {cases}")]
    OverlapExceedsCases { overlap: usize, cases: usize },
    #[error(
        "overlap {overlap} is smaller than the largest block ({block} cases); \
         some cases would get fewer than 2 reviews"
    )]
    OverlapTooSmall { overlap: usize, block: usize },
    #[error("duplicate id {0:?}")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewerQueue {
    pub reviewer_id: String,
    pub case_ids: Vec<String>,
}

/// Ordered case queue per reviewer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub queues: Vec<ReviewerQueue>,
}

impl Assignment {
    pub fn queue(&self, reviewer_id: &str) -> Option<&[String]> {
        self.queues
            .iter()
            .find(|q| q.reviewer_id == reviewer_id)
            .map(|q| q.case_ids.as_slice())
    }

    /// Number of reviewer lists containing `case_id`.
    pub fn multiplicity(&self, case_id: &str) -> usize {
        self.queues
            .iter()
            .filter(|q| q.case_ids.iter().any(|c| c == case_id))
            .count()
    }

    pub fn is_assigned(&self, reviewer_id: &str, case_id: &str) -> bool {
        self.queue(reviewer_id)
            .is_some_and(|q| q.iter().any(|c| c == case_id))
    }
}

fn check_unique(ids: &[String]) -> Result<(), AssignmentError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(AssignmentError::Duplicate(id.clone()));
        }
    }
    Ok(())
}

/// Ring assignment: shuffle the cases with `seed`, cut them into one
/// contiguous block per reviewer, and give each reviewer their own block
/// plus the first `overlap` cases of the next reviewer's block (wrapping).
///
/// Every case then sits in exactly two queues, which requires `overlap` to
/// cover the largest block.
pub fn assign_cases(
    case_ids: &[String],
    reviewer_ids: &[String],
    overlap: usize,
    seed: u64,
) -> Result<Assignment, AssignmentError> {
    if reviewer_ids.len() < 2 {
        return Err(AssignmentError::TooFewReviewers(reviewer_ids.len()));
    }
    if case_ids.len() < overlap {
        return Err(AssignmentError::OverlapExceedsCases {
            overlap,
            cases: case_ids.len(),
        });
    }
    check_unique(case_ids)?;
    check_unique(reviewer_ids)?;

    let r = reviewer_ids.len();
    let base = case_ids.len() / r;
    let extra = case_ids.len() % r;
    let largest = base + usize::from(extra > 0);
    if overlap < largest {
        return Err(AssignmentError::OverlapTooSmall {
            overlap,
            block: largest,
        });
    }

    let mut shuffled = case_ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut blocks: Vec<&[String]> = Vec::with_capacity(r);
    let mut start = 0;
    for i in 0..r {
        let len = base + usize::from(i < extra);
        blocks.push(&shuffled[start..start + len]);
        start += len;
    }

    let queues = reviewer_ids
        .iter()
        .enumerate()
        .map(|(i, reviewer)| {
            let next = blocks[(i + 1) % r];
            let mut case_ids = blocks[i].to_vec();
            case_ids.extend(next.iter().take(overlap).cloned());
            ReviewerQueue {
                reviewer_id: reviewer.clone(),
                case_ids,
            }
        })
        .collect();
    Ok(Assignment { queues })
}

/// `n` cases drawn without replacement under `seed`, in input order.
pub fn sample_cases(case_ids: &[String], n: usize, seed: u64) -> Vec<String> {
    if n >= case_ids.len() {
        return case_ids.to_vec();
    }
    let mut idx: Vec<usize> = (0..case_ids.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = idx[..n].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| case_ids[i].clone()).collect()
}
