//! Confidence-guided test-time scaling.
//!
//! Sample repeatedly from a language-model backend, score each response with
//! a P(True) confidence, and pick answers with confidence-aware strategies
//! (early stopping, weighted self-consistency, weighted adaptive
//! self-consistency). Also synthesizes self-calibration training tuples and
//! measures calibration quality (ECE, AUC, accuracy) under matched budgets.

pub mod answer;
pub mod backend;
pub mod budget;
pub mod confidence;
pub mod dataset;
pub mod edt;
pub mod metrics;
pub mod numfmt;
pub mod persistence;
pub mod prompts;
pub mod sampling;
pub mod seed;
pub mod strategies;

pub use answer::{answers_equal, extract_answer, AnswerType, CanonicalAnswer, Query, ResponsePool, SampledResponse};
