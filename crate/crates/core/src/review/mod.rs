//! Expert review: who reviews what, what they see, and where verdicts go.

pub mod assignment;
pub mod http;
pub mod service;
pub mod store;

pub use assignment::{assign_cases, sample_cases, Assignment, AssignmentError, ReviewerQueue};
pub use http::{router, serve, serve_until_interrupted, ReviewServer};
pub use service::{CasePayload, DimensionOutput, Progress, ReviewError, ReviewService};
pub use store::{ReviewStore, StoreError};
