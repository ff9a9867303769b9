//! Reward scoring and evaluation for text-to-SQL critique responses.
//!
//! A critique response is a structured judgment of a predicted SQL query:
//! a `<think>` block of numbered rubric question/answer steps, a binary
//! `<result>` verdict and, for negative verdicts, a `<correctedSQL>` block.
//! This crate parses those responses, grades their reasoning steps through a
//! judge model, verifies corrections by execution against SQLite databases,
//! and assembles the composite reward used for group-relative policy
//! optimization. It also carries the evaluation metrics, corpus labeling
//! tools, and the critique synthesis pipeline used to build training data.
//!
//! Batch entry points fan out with rayon when the `parallel` feature is on
//! (the default) and fall back to sequential iteration otherwise. Results are
//! identical either way.

pub mod critique;
pub mod dataset;
pub mod exec;
pub mod grpo;
pub mod judge;
pub mod llm;
pub mod metrics;
pub mod par;
pub mod reward;
pub mod scoring;
pub mod synthesis;
pub mod tree_edit;

pub use critique::{parse_critique, CritiqueResponse, FormatReport, RubricStep, Violation};
pub use dataset::{DatabaseRef, EvalSample, Hardness};
pub use exec::{ExecConfig, ExecOutcome, MatchOutcome, QueryResult};
pub use judge::{JudgeConfig, StepJudgment};
pub use reward::{RewardBreakdown, RewardMode};
