// SPDX-License-Identifier: Apache-2.0

//! In-memory tracker that records every write, for tests and dry
//! integration runs.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use triage_core::tracker::{RepoId, RepoSummary, TrackerClient, TrackerError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Call {
    AddLabels {
        repo: RepoId,
        number: u64,
        labels: Vec<String>,
    },
    AddAssignees {
        repo: RepoId,
        number: u64,
        logins: Vec<String>,
    },
}

#[derive(Debug, Default)]
pub struct RecordingTracker {
    transcript: Mutex<Vec<Call>>,
    label_script: Mutex<VecDeque<Result<(), TrackerError>>>,
    assignee_script: Mutex<VecDeque<Result<(), TrackerError>>>,
    /// Held before answering each write.
    pub latency: Duration,
}

impl RecordingTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_latency(latency: Duration) -> Self {
        Self {
            latency,
            ..Self::default()
        }
    }

    /// Responses for successive label writes; once exhausted, writes succeed.
    pub fn script_labels(&self, responses: impl IntoIterator<Item = Result<(), TrackerError>>) {
        self.label_script.lock().unwrap().extend(responses);
    }

    pub fn script_assignees(&self, responses: impl IntoIterator<Item = Result<(), TrackerError>>) {
        self.assignee_script.lock().unwrap().extend(responses);
    }

    pub fn transcript(&self) -> Vec<Call> {
        self.transcript.lock().unwrap().clone()
    }

    async fn record(&self, call: Call, script: &Mutex<VecDeque<Result<(), TrackerError>>>) -> Result<(), TrackerError> {
        self.transcript.lock().unwrap().push(call);
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        script.lock().unwrap().pop_front().unwrap_or(Ok(()))
    }
}

#[async_trait]
impl TrackerClient for RecordingTracker {
    async fn search_repositories(&self, _language: &str, _count: usize) -> Result<Vec<RepoSummary>, TrackerError> {
        Ok(Vec::new())
    }

    async fn list_issues(&self, repo: &RepoId) -> Result<Vec<serde_json::Value>, TrackerError> {
        Err(TrackerError::NotFound(repo.to_string()))
    }

    async fn add_labels(&self, repo: &RepoId, issue_number: u64, labels: &[String]) -> Result<(), TrackerError> {
        let call = Call::AddLabels {
            repo: repo.clone(),
            number: issue_number,
            labels: labels.to_vec(),
        };
        self.record(call, &self.label_script).await
    }

    async fn add_assignees(&self, repo: &RepoId, issue_number: u64, logins: &[String]) -> Result<(), TrackerError> {
        let call = Call::AddAssignees {
            repo: repo.clone(),
            number: issue_number,
            logins: logins.to_vec(),
        };
        self.record(call, &self.assignee_script).await
    }
}
