// SPDX-License-Identifier: Apache-2.0

//! Issue-report triage: multi-label categorisation into bug / enhancement /
//! question and developer assignment, from issue text.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: issue records, dataset files, ingestion, sampling and splits
//! - [`textproc`]: normalisation, vocabulary, token sequences, hashed n-grams
//! - [`classifier`]: linear and transformer backends, training, model files
//! - [`evaluation`]: confusion counts, precision/recall/F1, report rendering
//! - [`triage`]: turning probabilities into labels and an assignee
//! - [`tracker`]: the issue-tracker client boundary used by ingestion and the
//!   webhook service
//! - [`synth`]: a seeded synthetic issue corpus for smoke tests and benchmarks

pub mod classifier;
pub mod corpus;
pub mod evaluation;
pub mod fnv;
pub mod pipeline;
pub mod synth;
pub mod textproc;
pub mod tracker;
pub mod triage;

pub use classifier::{Backend, ModelBundle, Prediction, TaskConfig, TaskKind};
pub use corpus::{IssueRecord, LabelVector};
pub use evaluation::EvalReport;
pub use triage::{TriageDecision, TriagePolicy};
