// SPDX-License-Identifier: Apache-2.0

//! Precision, recall and F1 per class, with macro, micro and
//! support-weighted averages, and a plain-text table renderer.

use std::fmt::Write as _;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::classifier::{predict_probs, ModelBundle, ModelError, Target, TaskKind};
use crate::corpus::{IssueRecord, LabelVector, CATEGORIES};
use crate::pipeline::examples_for;
use crate::triage::{decide_assignee, decide_labels, label_vector, TriageError, TriagePolicy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions but {truths} truths")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("invalid decision threshold {0}")]
    Threshold(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Triage(#[from] TriageError),
}

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub task: TaskKind,
    pub classes: Vec<String>,
    pub counts: Vec<ClassCounts>,
    pub n: u64,
}

fn check_lengths(preds: usize, truths: usize) -> Result<(), EvalError> {
    if preds != truths {
        return Err(EvalError::LengthMismatch { preds, truths });
    }
    if preds == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn confusion_multilabel(preds: &[LabelVector], truths: &[LabelVector]) -> Result<ConfusionCounts, EvalError> {
    check_lengths(preds.len(), truths.len())?;
    let mut counts = vec![ClassCounts::default(); 3];
    for (p, t) in preds.iter().zip(truths) {
        for (c, (p, t)) in counts.iter_mut().zip(p.as_array().into_iter().zip(t.as_array())) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(ConfusionCounts {
        task: TaskKind::Multilabel,
        classes: CATEGORIES.iter().map(|s| s.to_string()).collect(),
        counts,
        n: preds.len() as u64,
    })
}

/// Counts for classes `0..k`, named by index. See
/// [`ConfusionCounts::with_names`].
pub fn confusion_multiclass(preds: &[usize], truths: &[usize], k: usize) -> Result<ConfusionCounts, EvalError> {
    check_lengths(preds.len(), truths.len())?;
    if let Some(&index) = preds.iter().chain(truths).find(|&&i| i >= k) {
        return Err(EvalError::ClassOutOfRange { index, classes: k });
    }
    let mut matrix = vec![vec![0u64; k]; k];
    for (&p, &t) in preds.iter().zip(truths) {
        matrix[t][p] += 1;
    }
    let n = preds.len() as u64;
    let counts = (0..k)
        .map(|c| {
            let tp = matrix[c][c];
            let fn_ = matrix[c].iter().sum::<u64>() - tp;
            let fp = matrix.iter().map(|row| row[c]).sum::<u64>() - tp;
            ClassCounts {
                tp,
                fp,
                fn_,
                tn: n - tp - fp - fn_,
            }
        })
        .collect();
    Ok(ConfusionCounts {
        task: TaskKind::Multiclass,
        classes: (0..k).map(|i| i.to_string()).collect(),
        counts,
        n,
    })
}

impl ConfusionCounts {
    /// Replaces the class names; `names` must have one entry per class.
    pub fn with_names(mut self, names: &[String]) -> Self {
        assert_eq!(names.len(), self.counts.len(), "one name per class");
        self.classes = names.to_vec();
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// Zero denominators give zero. F1 is computed as 2tp / (2tp + fp + fn),
    /// which equals 2PR / (P + R).
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        Self {
            p: ratio(tp, tp + fp),
            r: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    /// F1 from precision and recall, 0 when both are 0.
    pub fn from_pr(p: f64, r: f64) -> Self {
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Self { p, r, f1 }
    }
}

/// Unweighted mean of each metric.
pub fn macro_average(per_class: &[Metrics]) -> Metrics {
    if per_class.is_empty() {
        return Metrics::default();
    }
    let n = per_class.len() as f64;
    Metrics {
        p: per_class.iter().map(|m| m.p).sum::<f64>() / n,
        r: per_class.iter().map(|m| m.r).sum::<f64>() / n,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ClassReport {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            p: self.p,
            r: self.r,
            f1: self.f1,
        }
    }

    pub fn counts(&self) -> ClassCounts {
        ClassCounts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            tn: self.tn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub task: TaskKind,
    pub n: u64,
    pub threshold: Option<f64>,
    #[serde(serialize_with = "ser_classes", deserialize_with = "de_classes")]
    pub per_class: Vec<(String, ClassReport)>,
    #[serde(rename = "macro")]
    pub macro_avg: Metrics,
    pub micro: Metrics,
    pub weighted: Metrics,
}

fn ser_classes<S: Serializer>(v: &[(String, ClassReport)], s: S) -> Result<S::Ok, S::Error> {
    let mut m = s.serialize_map(Some(v.len()))?;
    for (k, r) in v {
        m.serialize_entry(k, r)?;
    }
    m.end()
}

fn de_classes<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(String, ClassReport)>, D::Error> {
    struct Ordered;
    impl<'de> Visitor<'de> for Ordered {
        type Value = Vec<(String, ClassReport)>;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a map of class reports")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some(entry) = map.next_entry()? {
                out.push(entry);
            }
            Ok(out)
        }
    }
    d.deserialize_map(Ordered)
}

pub fn metrics_from_counts(counts: &ConfusionCounts) -> EvalReport {
    let per_class: Vec<(String, ClassReport)> = counts
        .classes
        .iter()
        .zip(&counts.counts)
        .map(|(name, c)| {
            let m = Metrics::from_counts(c.tp, c.fp, c.fn_);
            (
                name.clone(),
                ClassReport {
                    p: m.p,
                    r: m.r,
                    f1: m.f1,
                    tp: c.tp,
                    fp: c.fp,
                    fn_: c.fn_,
                    tn: c.tn,
                },
            )
        })
        .collect();
    let metrics: Vec<Metrics> = per_class.iter().map(|(_, r)| r.metrics()).collect();
    let sum = |f: fn(&ClassCounts) -> u64| counts.counts.iter().map(f).sum::<u64>();
    let micro = Metrics::from_counts(sum(|c| c.tp), sum(|c| c.fp), sum(|c| c.fn_));
    let support = sum(ClassCounts::support);
    let weighted = if support == 0 {
        Metrics::default()
    } else {
        let w = |f: fn(&Metrics) -> f64| {
            metrics
                .iter()
                .zip(&counts.counts)
                .map(|(m, c)| f(m) * c.support() as f64)
                .sum::<f64>()
                / support as f64
        };
        Metrics {
            p: w(|m| m.p),
            r: w(|m| m.r),
            f1: w(|m| m.f1),
        }
    };
    EvalReport {
        task: counts.task,
        n: counts.n,
        threshold: None,
        macro_avg: macro_average(&metrics),
        per_class,
        micro,
        weighted,
    }
}

impl EvalReport {
    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts {
            task: self.task,
            classes: self.per_class.iter().map(|(n, _)| n.clone()).collect(),
            counts: self.per_class.iter().map(|(_, r)| r.counts()).collect(),
            n: self.n,
        }
    }
}

/// Predicts every usable record, applies the policy and scores the
/// decisions. Labelling uses records with at least one category; assignment
/// uses assigned records and requires `policy.roster` to match the model.
pub fn evaluate_model(
    model: &ModelBundle,
    records: &[IssueRecord],
    policy: &TriagePolicy,
) -> Result<EvalReport, EvalError> {
    let examples = examples_for(model, records)?;
    if examples.is_empty() {
        return Err(EvalError::Empty);
    }
    let inputs: Vec<_> = examples.iter().map(|e| e.input.clone()).collect();
    let preds = predict_probs(model, &inputs)?;
    match model.task().task {
        TaskKind::Multilabel => {
            let t = policy.label_threshold;
            if !(t.is_finite() && t > 0.0) {
                return Err(EvalError::Threshold(t));
            }
            let decided: Vec<LabelVector> = preds.iter().map(|p| label_vector(&decide_labels(p, policy))).collect();
            let truths: Vec<LabelVector> = examples
                .iter()
                .map(|e| match &e.target {
                    Target::MultiHot(y) => LabelVector::from_array([y[0], y[1], y[2]]),
                    Target::Class(_) => unreachable!("labelling examples are multi-hot"),
                })
                .collect();
            let mut report = metrics_from_counts(&confusion_multilabel(&decided, &truths)?);
            report.threshold = Some(t);
            Ok(report)
        }
        TaskKind::Multiclass => {
            let names = &model.task().label_names;
            let mut policy = policy.clone();
            policy.roster = names.clone();
            let k = names.len();
            // an abstention is scored as a miss: it predicts no class
            let mut counts = vec![ClassCounts::default(); k];
            for (p, e) in preds.iter().zip(&examples) {
                let truth = match e.target {
                    Target::Class(c) => c,
                    Target::MultiHot(_) => unreachable!("assignment examples are classes"),
                };
                let decided = decide_assignee(p, &policy)?.and_then(|s| names.iter().position(|n| *n == s.name));
                for (c, cc) in counts.iter_mut().enumerate() {
                    match (decided == Some(c), truth == c) {
                        (true, true) => cc.tp += 1,
                        (true, false) => cc.fp += 1,
                        (false, true) => cc.fn_ += 1,
                        (false, false) => cc.tn += 1,
                    }
                }
            }
            let mut report = metrics_from_counts(&ConfusionCounts {
                task: TaskKind::Multiclass,
                classes: names.clone(),
                counts,
                n: examples.len() as u64,
            });
            report.threshold = (policy.assign_min_confidence > 0.0).then_some(policy.assign_min_confidence);
            Ok(report)
        }
    }
}

/// Whole percent, rounded half-up. A tolerance of 1e-9 absorbs binary
/// representation error, so 0.785 renders as 79%.
pub fn percent(x: f64) -> u64 {
    (x * 100.0 + 0.5 + 1e-9).floor().max(0.0) as u64
}

/// `"P% R% F1%"`.
pub fn percent_triple(m: &Metrics) -> String {
    format!("{}% {}% {}%", percent(m.p), percent(m.r), percent(m.f1))
}

/// Table with one row per class and a Macro-Average row, percentages only.
pub fn render_table(rows: &[(String, Metrics)], macro_avg: &Metrics) -> String {
    let width = rows
        .iter()
        .map(|(n, _)| n.chars().count())
        .chain([13])
        .max()
        .unwrap_or(13);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>6}  {:>8}",
        "", "Precision", "Recall", "F1-Score"
    );
    let mut row = |name: &str, m: &Metrics| {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>6}  {:>8}",
            name,
            format!("{}%", percent(m.p)),
            format!("{}%", percent(m.r)),
            format!("{}%", percent(m.f1)),
        );
    };
    for (name, m) in rows {
        row(name, m);
    }
    row("Macro-Average", macro_avg);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => {
            let rows: Vec<(String, Metrics)> = report.per_class.iter().map(|(n, r)| (n.clone(), r.metrics())).collect();
            let mut out = render_table(&rows, &report.macro_avg);
            let _ = writeln!(out, "n = {}", report.n);
            if let Some(t) = report.threshold {
                let _ = writeln!(out, "threshold = {t}");
            }
            out
        }
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serialises"),
    }
}
