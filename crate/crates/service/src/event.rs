// SPDX-License-Identifier: Apache-2.0

//! Webhook payload parsing.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use triage_core::tracker::RepoId;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed webhook payload: {0}")]
pub struct ProtocolError(pub String);

/// The fields triage needs from an `issues` event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueEvent {
    pub action: String,
    pub repo: RepoId,
    pub number: u64,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventVerdict {
    /// A newly opened issue.
    Triage(IssueEvent),
    /// `ping`: acknowledged, nothing to do.
    Ack,
    /// Any other event or action.
    Skip(String),
}

#[derive(Deserialize)]
struct Payload {
    action: Option<String>,
    issue: Option<Issue>,
    repository: Option<Repository>,
}

#[derive(Deserialize)]
struct Issue {
    number: u64,
    title: String,
    body: Option<String>,
}

#[derive(Deserialize)]
struct Repository {
    full_name: String,
}

/// Classifies a delivery by its `X-GitHub-Event` header and body. Only
/// `issues`/`opened` bodies are parsed in full.
pub fn parse_event(event: &str, body: &[u8]) -> Result<EventVerdict, ProtocolError> {
    match event {
        "ping" => return Ok(EventVerdict::Ack),
        "issues" => {}
        other => return Ok(EventVerdict::Skip(format!("event {other:?} is not handled"))),
    }
    let p: Payload = serde_json::from_slice(body).map_err(|e| ProtocolError(e.to_string()))?;
    let action = p.action.ok_or_else(|| ProtocolError("missing action".into()))?;
    if action != "opened" {
        return Ok(EventVerdict::Skip(format!("issues action {action:?} is not handled")));
    }
    let issue = p.issue.ok_or_else(|| ProtocolError("missing issue".into()))?;
    let repo = p
        .repository
        .ok_or_else(|| ProtocolError("missing repository".into()))?
        .full_name
        .parse::<RepoId>()
        .map_err(|e| ProtocolError(e.to_string()))?;
    Ok(EventVerdict::Triage(IssueEvent {
        action,
        repo,
        number: issue.number,
        title: issue.title,
        body: issue.body.unwrap_or_default(),
    }))
}
