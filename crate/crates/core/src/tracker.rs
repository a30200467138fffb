// SPDX-License-Identifier: Apache-2.0

//! Boundary to a GitHub-compatible issue tracker.
//!
//! Ingestion and the webhook service talk to the tracker only through
//! [`TrackerClient`]; the HTTP implementation lives in the service crate and
//! tests substitute in-memory fakes.

use std::fmt;
use std::str::FromStr;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `owner/name`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RepoId {
    owner: String,
    name: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid repository identifier {0:?}; expected owner/name")]
pub struct InvalidRepoId(pub String);

impl RepoId {
    pub fn new(owner: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            owner: owner.into(),
            name: name.into(),
        }
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl FromStr for RepoId {
    type Err = InvalidRepoId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((o, n)) if !o.is_empty() && !n.is_empty() && !n.contains('/') => Ok(Self::new(o, n)),
            _ => Err(InvalidRepoId(s.to_string())),
        }
    }
}

impl TryFrom<String> for RepoId {
    type Error = InvalidRepoId;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RepoId> for String {
    fn from(r: RepoId) -> String {
        r.to_string()
    }
}

impl fmt::Display for RepoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.owner, self.name)
    }
}

/// One search hit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSummary {
    pub full_name: RepoId,
    pub stars: u64,
    /// Primary language as reported by the tracker, if any.
    pub language: Option<String>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TrackerError {
    /// Network or protocol failure; safe to retry.
    #[error("transport error: {0}")]
    Transport(String),
    /// 403 with the rate limit exhausted. `reset` is the epoch second at
    /// which the limit resets, when the tracker reported it.
    #[error("rate limited (reset at {reset:?})")]
    RateLimited { reset: Option<u64> },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unprocessable: {0}")]
    Unprocessable(String),
    #[error("HTTP {status}: {message}")]
    Status { status: u16, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl TrackerError {
    /// Server errors, transport failures and rate limiting are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            TrackerError::Transport(_) | TrackerError::RateLimited { .. } => true,
            TrackerError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            TrackerError::RateLimited { .. } => Some(403),
            TrackerError::NotFound(_) => Some(404),
            TrackerError::Unprocessable(_) => Some(422),
            TrackerError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[async_trait]
pub trait TrackerClient: Send + Sync {
    /// Repositories for `language`, most-starred first, at most `count`.
    async fn search_repositories(&self, language: &str, count: usize) -> Result<Vec<RepoSummary>, TrackerError>;

    /// Every issue item of `repo` (all states), following pagination to the
    /// end. Items are returned as raw JSON so callers can skip bad ones.
    async fn list_issues(&self, repo: &RepoId) -> Result<Vec<serde_json::Value>, TrackerError>;

    async fn add_labels(&self, repo: &RepoId, issue_number: u64, labels: &[String]) -> Result<(), TrackerError>;

    async fn add_assignees(&self, repo: &RepoId, issue_number: u64, logins: &[String]) -> Result<(), TrackerError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repo_id_parsing() {
        let r: RepoId = "rust-lang/rust".parse().unwrap();
        assert_eq!(r.owner(), "rust-lang");
        assert_eq!(r.name(), "rust");
        assert_eq!(r.to_string(), "rust-lang/rust");
        for bad in ["", "a", "/b", "a/", "a/b/c"] {
            assert!(bad.parse::<RepoId>().is_err(), "{bad}");
        }
    }

    #[test]
    fn retryable_classes() {
        assert!(TrackerError::Status {
            status: 502,
            message: String::new()
        }
        .is_retryable());
        assert!(TrackerError::RateLimited { reset: None }.is_retryable());
        assert!(!TrackerError::NotFound("x".into()).is_retryable());
        assert!(!TrackerError::Unprocessable("x".into()).is_retryable());
        assert!(!TrackerError::Status {
            status: 400,
            message: String::new()
        }
        .is_retryable());
    }
}
