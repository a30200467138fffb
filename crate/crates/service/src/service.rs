// SPDX-License-Identifier: Apache-2.0

//! Delivery handling: verify, parse, deduplicate, triage, apply.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;
use triage_core::classifier::{ModelBundle, TaskKind};
use triage_core::tracker::{RepoId, TrackerClient};
use triage_core::triage::{triage_issue, Assigner, TriageDecision, TriageError, TriagePolicy};

use crate::apply::{apply_assignee, apply_labels, ApiResult};
use crate::config::{ConfigError, ServiceConfig};
use crate::dedup::DedupCache;
use crate::event::{parse_event, EventVerdict};
use crate::signature::verify_signature;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] TriageError),
    #[error("{0}")]
    Models(String),
}

/// The models a service triages with.
#[derive(Debug, Clone)]
pub struct Models {
    pub labels: ModelBundle,
    pub assignee: Option<ModelBundle>,
    /// Assignment is enabled but the project has too little history for a
    /// model; decisions carry the cold-start flag instead of an assignee.
    pub cold_start: bool,
}

impl Models {
    pub fn labels_only(labels: ModelBundle) -> Self {
        Self {
            labels,
            assignee: None,
            cold_start: false,
        }
    }
}

/// One received webhook request.
#[derive(Debug, Clone)]
pub struct WebhookDelivery {
    pub delivery_id: String,
    pub event: String,
    pub signature_header: String,
    pub raw_body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Bad or missing signature.
    Rejected { reason: String },
    /// Signed but unparseable.
    Malformed { reason: String },
    /// Delivery id already processed.
    Duplicate,
    /// `ping`.
    Pong,
    /// An event or action the service does not act on.
    Ignored { reason: String },
    Triaged {
        repo: RepoId,
        number: u64,
        decision: Box<TriageDecision>,
        dry_run: bool,
        labels: Option<ApiResult>,
        assignee: Option<ApiResult>,
    },
    /// Triage itself failed; nothing was written.
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub delivery_id: String,
    /// HTTP status the endpoint answers with.
    pub status: u16,
    #[serde(flatten)]
    pub kind: OutcomeKind,
}

pub struct Service {
    models: Models,
    policy: TriagePolicy,
    config: ServiceConfig,
    api: Arc<dyn TrackerClient>,
    dedup: DedupCache,
}

impl Service {
    pub fn new(
        models: Models,
        policy: TriagePolicy,
        config: ServiceConfig,
        api: Arc<dyn TrackerClient>,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        policy.validate()?;
        if models.labels.task().task != TaskKind::Multilabel {
            return Err(ServiceError::Models("label model is not a category model".into()));
        }
        if policy.assign_enabled {
            match &models.assignee {
                Some(m) if m.task().label_names != policy.roster => {
                    return Err(ServiceError::Models(
                        "policy roster differs from the assignment model's developers".into(),
                    ))
                }
                None if !models.cold_start => {
                    return Err(ServiceError::Models(
                        "assignment enabled but no assignment model supplied".into(),
                    ))
                }
                _ => {}
            }
        }
        Ok(Self {
            dedup: DedupCache::new(config.dedup_capacity),
            models,
            policy,
            config,
            api,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn policy(&self) -> &TriagePolicy {
        &self.policy
    }

    fn outcome(d: &WebhookDelivery, status: u16, kind: OutcomeKind) -> Outcome {
        Outcome {
            delivery_id: d.delivery_id.clone(),
            status,
            kind,
        }
    }

    /// Processes one delivery. Nothing is recorded or written before the
    /// signature checks out; a delivery id is claimed in the dedup cache
    /// only once the payload parsed as an opened issue.
    pub async fn handle_delivery(&self, d: &WebhookDelivery) -> Outcome {
        if !verify_signature(&d.raw_body, &d.signature_header, &self.config.webhook_secret) {
            tracing::warn!(delivery = %d.delivery_id, "rejected delivery with a bad signature");
            return Self::outcome(
                d,
                401,
                OutcomeKind::Rejected {
                    reason: "signature mismatch".into(),
                },
            );
        }
        if d.delivery_id.is_empty() {
            return Self::outcome(
                d,
                400,
                OutcomeKind::Malformed {
                    reason: "missing delivery id".into(),
                },
            );
        }
        let event = match parse_event(&d.event, &d.raw_body) {
            Ok(EventVerdict::Triage(e)) => e,
            Ok(EventVerdict::Ack) => return Self::outcome(d, 202, OutcomeKind::Pong),
            Ok(EventVerdict::Skip(reason)) => return Self::outcome(d, 202, OutcomeKind::Ignored { reason }),
            Err(e) => return Self::outcome(d, 400, OutcomeKind::Malformed { reason: e.to_string() }),
        };
        if !self.dedup.insert_if_absent(&d.delivery_id) {
            tracing::info!(delivery = %d.delivery_id, "duplicate delivery");
            return Self::outcome(d, 202, OutcomeKind::Duplicate);
        }

        let assigner = match (&self.models.assignee, self.models.cold_start) {
            (Some(m), _) => Assigner::Model(m),
            (None, true) => Assigner::ColdStart,
            (None, false) => Assigner::None,
        };
        let decision = match triage_issue(&event.title, &event.body, &self.models.labels, assigner, &self.policy) {
            Ok(d) => d,
            Err(e) => {
                tracing::error!(delivery = %d.delivery_id, error = %e, "triage failed");
                return Self::outcome(d, 500, OutcomeKind::Failed { reason: e.to_string() });
            }
        };
        if decision.cold_start {
            tracing::warn!(delivery = %d.delivery_id, "no assignment model (cold start); labels only");
        }

        let (mut labels, mut assignee) = (None, None);
        if self.config.dry_run {
            tracing::info!(delivery = %d.delivery_id, ?decision, "dry run");
        } else {
            let names: Vec<String> = decision.labels.iter().map(|l| l.name.clone()).collect();
            if !names.is_empty() {
                let r = apply_labels(self.api.as_ref(), &event.repo, event.number, &names, &self.config.retry).await;
                if let Err(e) = &r {
                    tracing::error!(delivery = %d.delivery_id, error = %e, "applying labels failed");
                }
                labels = Some(ApiResult::from_result(&r));
            }
            if let Some(a) = &decision.assignee {
                let r = apply_assignee(
                    self.api.as_ref(),
                    &event.repo,
                    event.number,
                    &a.name,
                    &self.policy.roster,
                    &self.config.retry,
                )
                .await;
                if let Err(e) = &r {
                    tracing::error!(delivery = %d.delivery_id, error = %e, "assigning failed");
                }
                assignee = Some(ApiResult::from_result(&r));
            }
        }
        Self::outcome(
            d,
            202,
            OutcomeKind::Triaged {
                repo: event.repo,
                number: event.number,
                decision: Box::new(decision),
                dry_run: self.config.dry_run,
                labels,
                assignee,
            },
        )
    }
}
