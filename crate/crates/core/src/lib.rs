//! Generate-then-rank answering for generative commonsense QA.
//!
//! Given a prompt-style question ("Name something an athlete keeps in her
//! refrigerator."), the pipeline extracts its salient keywords, rewrites the
//! question into a declarative stem, attaches dictionary definitions of the
//! keywords as background knowledge, asks a generator backend for candidate
//! answers, merges near-duplicate candidates, and re-ranks the survivors
//! with a plausibility scorer before emitting the final answer list.
//!
//! The crate is organized along those stages:
//!
//! - [`data`]: questions, answer clusters, predictions, and their file
//!   formats.
//! - [`keywords`]: tf-idf keyword extraction.
//! - [`rewrite`]: interrogative-to-declarative question rewriting.
//! - [`retrieve`]: lemmatization, the dictionary index, and definition
//!   selection.
//! - [`generate`]: prompt assembly and candidate generation.
//! - [`dedup`]: lemma- and synonym-aware candidate merging.
//! - [`rank`]: ranker corpus construction, the logistic plausibility
//!   scorer, and final answer ranking.
//! - [`eval`]: cluster-weighted accuracy metrics.
//! - [`backend`]: wire-protocol clients and the fixture-driven mock
//!   generator.
//! - [`pipeline`]: configuration and end-to-end orchestration.

pub mod backend;
pub mod data;
pub mod dedup;
mod error;
pub mod eval;
pub mod generate;
pub mod jsonl;
pub mod keywords;
pub mod pipeline;
pub mod rank;
pub mod retrieve;
pub mod rewrite;

pub use error::{Error, Result};
