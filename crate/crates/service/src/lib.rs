// SPDX-License-Identifier: Apache-2.0

//! Webhook service: verifies deliveries from the issue tracker, triages newly
//! opened issues and writes labels and an assignee back through the tracker
//! API, at most once per delivery id.

pub mod apply;
pub mod config;
pub mod dedup;
pub mod event;
pub mod github;
pub mod http;
pub mod service;
pub mod signature;
pub mod testing;

pub use config::ServiceConfig;
pub use service::{Models, Outcome, OutcomeKind, Service, WebhookDelivery};
pub use signature::{sign, verify_signature};
