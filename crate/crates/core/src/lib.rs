//! Incident-report causal classification pipeline.
//!
//! Raw crash-report tables are merged and flattened ([`ingest`]), classified
//! by a language model behind an HTTP endpoint ([`inference`]) using a fixed
//! analyst prompt ([`prompting`]) and code schema ([`taxonomy`]), compared
//! with two simple predictors ([`baselines`]) against expert reviews
//! ([`scoring`], [`review`]), and summarised at corpus level ([`aggregate`]).

pub mod aggregate;
pub mod baselines;
pub mod config;
pub mod inference;
pub mod ingest;
pub mod jsonl;
pub mod prompting;
pub mod review;
pub mod scoring;
pub mod taxonomy;
