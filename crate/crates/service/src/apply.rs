// SPDX-License-Identifier: Apache-2.0

//! Writing decisions back to the tracker, with retries.

use std::future::Future;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;
use triage_core::tracker::{RepoId, TrackerClient, TrackerError};

/// Exponential backoff: attempt `k` (from 1) is followed by a wait of
/// `base_delay * 2^(k-1)` when it fails with a retryable error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ApplyError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{error} (after {attempts} attempt(s))")]
    Tracker { error: TrackerError, attempts: u32 },
}

/// What happened to one write.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiResult {
    pub attempts: u32,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ApiResult {
    pub fn from_result(r: &Result<u32, ApplyError>) -> Self {
        match r {
            Ok(attempts) => Self {
                attempts: *attempts,
                ok: true,
                error: None,
            },
            Err(e) => Self {
                attempts: match e {
                    ApplyError::Tracker { attempts, .. } => *attempts,
                    ApplyError::Precondition(_) => 0,
                },
                ok: false,
                error: Some(e.to_string()),
            },
        }
    }
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// policy's attempts are used up. Returns the number of attempts made.
pub async fn with_retry<F, Fut>(policy: &RetryPolicy, mut op: F) -> Result<u32, ApplyError>
where
    F: FnMut() -> Fut,
    Fut: Future<Output = Result<(), TrackerError>>,
{
    let max = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match op().await {
            Ok(()) => return Ok(attempt),
            Err(e) if e.is_retryable() && attempt < max => {
                tracing::warn!(attempt, error = %e, "tracker call failed, retrying");
                tokio::time::sleep(policy.delay_after(attempt)).await;
            }
            Err(error) => {
                return Err(ApplyError::Tracker {
                    error,
                    attempts: attempt,
                })
            }
        }
    }
}

pub async fn apply_labels(
    api: &dyn TrackerClient,
    repo: &RepoId,
    issue_number: u64,
    labels: &[String],
    retry: &RetryPolicy,
) -> Result<u32, ApplyError> {
    if labels.is_empty() {
        return Err(ApplyError::Precondition("no labels to apply".into()));
    }
    with_retry(retry, || api.add_labels(repo, issue_number, labels)).await
}

pub async fn apply_assignee(
    api: &dyn TrackerClient,
    repo: &RepoId,
    issue_number: u64,
    login: &str,
    roster: &[String],
    retry: &RetryPolicy,
) -> Result<u32, ApplyError> {
    if !roster.iter().any(|r| r == login) {
        return Err(ApplyError::Precondition(format!("{login:?} is not in the roster")));
    }
    let logins = [login.to_string()];
    with_retry(retry, || api.add_assignees(repo, issue_number, &logins)).await
}
