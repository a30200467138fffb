// SPDX-License-Identifier: Apache-2.0

//! Decisions from probabilities: which categories to apply and which
//! developer, if any, to assign.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{forward, ModelBundle, ModelError, Prediction, TaskKind};
use crate::corpus::{LabelVector, CATEGORIES};

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("invalid triage policy: {0}")]
    Config(String),
    #[error("roster has {roster} developers but the prediction has {outputs} outputs")]
    RosterMismatch { roster: usize, outputs: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("policy file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriagePolicy {
    #[serde(default = "default_threshold")]
    pub label_threshold: f64,
    #[serde(default)]
    pub assign_enabled: bool,
    #[serde(default)]
    pub assign_min_confidence: f64,
    #[serde(default)]
    pub roster: Vec<String>,
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for TriagePolicy {
    fn default() -> Self {
        Self {
            label_threshold: default_threshold(),
            assign_enabled: false,
            assign_min_confidence: 0.0,
            roster: Vec::new(),
        }
    }
}

impl TriagePolicy {
    /// Labelling only, with the given threshold.
    pub fn labels_only(label_threshold: f64) -> Self {
        Self {
            label_threshold,
            ..Self::default()
        }
    }

    /// Labelling plus assignment over `roster`.
    pub fn with_roster(roster: Vec<String>) -> Self {
        Self {
            assign_enabled: true,
            roster,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TriageError> {
        if !(self.label_threshold > 0.0 && self.label_threshold <= 1.0) {
            return Err(TriageError::Config(format!(
                "label_threshold {} outside (0, 1]",
                self.label_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.assign_min_confidence) {
            return Err(TriageError::Config(format!(
                "assign_min_confidence {} outside [0, 1]",
                self.assign_min_confidence
            )));
        }
        if self.assign_enabled && self.roster.is_empty() {
            return Err(TriageError::Config("assignment enabled with an empty roster".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, TriageError> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, TriageError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A category or developer with the probability that selected it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub name: String,
    pub confidence: f64,
}

/// Categories with probability at or above the threshold, most confident
/// first. Equal confidences keep category order.
pub fn decide_labels(pred: &Prediction, policy: &TriagePolicy) -> Vec<Scored> {
    let mut out: Vec<Scored> = CATEGORIES
        .iter()
        .zip(&pred.probs)
        .filter(|(_, &p)| p >= policy.label_threshold)
        .map(|(name, &p)| Scored {
            name: name.to_string(),
            confidence: p,
        })
        .collect();
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    out
}

/// Multi-hot form of a label decision.
pub fn label_vector(labels: &[Scored]) -> LabelVector {
    let mut a = [false; 3];
    for l in labels {
        if let Some(i) = CATEGORIES.iter().position(|c| *c == l.name) {
            a[i] = true;
        }
    }
    LabelVector::from_array(a)
}

/// Most probable roster member, or `None` when that probability is below
/// `assign_min_confidence`.
pub fn decide_assignee(pred: &Prediction, policy: &TriagePolicy) -> Result<Option<Scored>, TriageError> {
    if policy.roster.len() != pred.probs.len() {
        return Err(TriageError::RosterMismatch {
            roster: policy.roster.len(),
            outputs: pred.probs.len(),
        });
    }
    if pred.probs.is_empty() {
        return Ok(None);
    }
    let best = pred.argmax();
    let confidence = pred.probs[best];
    if confidence < policy.assign_min_confidence {
        return Ok(None);
    }
    Ok(Some(Scored {
        name: policy.roster[best].clone(),
        confidence,
    }))
}

/// Source of the assignee decision.
#[derive(Debug, Clone, Copy)]
pub enum Assigner<'a> {
    /// No model supplied.
    None,
    /// The project has too little assignment history for a model.
    ColdStart,
    Model(&'a ModelBundle),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersions {
    pub labels: String,
    pub assignee: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageDecision {
    pub labels: Vec<Scored>,
    pub assignee: Option<Scored>,
    pub model_versions: ModelVersions,
    /// Set when assignment was requested but no assignment model exists.
    pub cold_start: bool,
}

/// Encodes the issue, runs the label model and, when enabled, the assignment
/// model, and applies the policy to both outputs.
pub fn triage_issue(
    title: &str,
    body: &str,
    label_model: &ModelBundle,
    assigner: Assigner<'_>,
    policy: &TriagePolicy,
) -> Result<TriageDecision, TriageError> {
    policy.validate()?;
    if label_model.task().task != TaskKind::Multilabel {
        return Err(TriageError::Config("label model is not a category model".into()));
    }
    let pred = forward(label_model, &label_model.encode_issue(title, body))?;
    let labels = decide_labels(&pred, policy);
    let mut decision = TriageDecision {
        labels,
        assignee: None,
        model_versions: ModelVersions {
            labels: label_model.fingerprint().to_string(),
            assignee: None,
        },
        cold_start: false,
    };
    if !policy.assign_enabled {
        return Ok(decision);
    }
    match assigner {
        Assigner::None => {
            return Err(TriageError::Config(
                "assignment enabled but no assignment model supplied".into(),
            ))
        }
        Assigner::ColdStart => decision.cold_start = true,
        Assigner::Model(m) => {
            if m.task().task != TaskKind::Multiclass {
                return Err(TriageError::Config("assignment model is not a developer model".into()));
            }
            if m.task().label_names != policy.roster {
                return Err(TriageError::Config(
                    "policy roster differs from the assignment model's developers".into(),
                ));
            }
            let pred = forward(m, &m.encode_issue(title, body))?;
            decision.assignee = decide_assignee(&pred, policy)?;
            decision.model_versions.assignee = Some(m.fingerprint().to_string());
        }
    }
    Ok(decision)
}
