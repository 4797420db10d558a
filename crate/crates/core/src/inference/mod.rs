//! Model-facing side of the pipeline: prompt out, validated record back.

pub mod batch;
pub mod client;
pub mod extract;
pub mod stub;

pub use batch::{run_batch, BatchError, BatchOptions, Checkpoint};
pub use client::{
    classify_record, ChatBackend, ChatMessage, FailureKind, HttpBackend, InferenceOutcome,
    ModelConfig, OutcomeResult, TransportError,
};
pub use extract::{extract_object, interpret, parse_labels, Rejection, ThinkTags};
