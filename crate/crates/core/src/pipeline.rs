// SPDX-License-Identifier: Apache-2.0

//! Glue from issue records to classifier examples.

use crate::classifier::{Example, ModelBundle, ModelError, Target, TaskKind};
use crate::corpus::{IssueRecord, LabelVector};
use crate::textproc::{build_vocab, concat_title_body, TextError, Vocabulary};

pub fn label_target(labels: &LabelVector) -> Target {
    Target::MultiHot(labels.as_array().to_vec())
}

/// Vocabulary over the concatenated title and body of every record.
pub fn vocabulary_for(records: &[IssueRecord], min_frequency: u32, max_size: usize) -> Result<Vocabulary, TextError> {
    let texts: Vec<String> = records.iter().map(|r| concat_title_body(&r.title, &r.body)).collect();
    build_vocab(&texts, min_frequency, max_size)
}

/// Records that can serve as labelling examples: those with at least one
/// category.
pub fn labelled(records: &[IssueRecord]) -> Vec<&IssueRecord> {
    records.iter().filter(|r| !r.labels.is_unlabelled()).collect()
}

/// Records with an assignee.
pub fn assigned(records: &[IssueRecord]) -> Vec<&IssueRecord> {
    records.iter().filter(|r| r.assignee.is_some()).collect()
}

/// Examples for `model`'s task. Labelling skips unlabelled records;
/// assignment skips unassigned records and rejects assignees outside the
/// model's roster.
pub fn examples_for(model: &ModelBundle, records: &[IssueRecord]) -> Result<Vec<Example>, ModelError> {
    match model.task().task {
        TaskKind::Multilabel => Ok(labelled(records)
            .into_iter()
            .map(|r| Example {
                input: model.encode_issue(&r.title, &r.body),
                target: label_target(&r.labels),
            })
            .collect()),
        TaskKind::Multiclass => assigned(records)
            .into_iter()
            .map(|r| {
                let login = r.assignee.as_deref().unwrap_or_default();
                let class = roster_index(model, login)?;
                Ok(Example {
                    input: model.encode_issue(&r.title, &r.body),
                    target: Target::Class(class),
                })
            })
            .collect(),
    }
}

fn roster_index(model: &ModelBundle, login: &str) -> Result<usize, ModelError> {
    model
        .task()
        .label_names
        .iter()
        .position(|n| n == login)
        .ok_or_else(|| ModelError::InputMismatch(format!("assignee {login:?} is not in the model's roster")))
}
