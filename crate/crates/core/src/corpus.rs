// SPDX-License-Identifier: Apache-2.0

//! Issue records, the JSONL dataset file, ingestion from a tracker, and the
//! seeded sampling/splitting used to build training sets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use futures::stream::{self, StreamExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tracker::{RepoId, RepoSummary, TrackerClient, TrackerError};

/// Canonical category names, in vector order.
pub const CATEGORIES: [&str; 3] = ["bug", "enhancement", "question"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("size error: requested {requested} from {available} records")]
    Size { requested: usize, available: usize },
    #[error("cold start: no assignee has {min_assigned} or more assignments in the window")]
    ColdStart { min_assigned: usize },
    #[error("duplicate issue id {0}")]
    DuplicateId(u64),
    #[error("unknown repository {0}")]
    UnknownRepo(RepoId),
    #[error("tracker: {0}")]
    Tracker(#[from] TrackerError),
    #[error("dataset line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Multi-hot membership over the three categories. Any subset is valid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelVector {
    pub bug: bool,
    pub enhancement: bool,
    pub question: bool,
}

impl LabelVector {
    pub fn new(bug: bool, enhancement: bool, question: bool) -> Self {
        Self {
            bug,
            enhancement,
            question,
        }
    }

    pub fn from_array(a: [bool; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn as_array(&self) -> [bool; 3] {
        [self.bug, self.enhancement, self.question]
    }

    pub fn is_unlabelled(&self) -> bool {
        !(self.bug || self.enhancement || self.question)
    }

    /// Canonical names of the set categories.
    pub fn names(&self) -> Vec<&'static str> {
        CATEGORIES
            .iter()
            .zip(self.as_array())
            .filter_map(|(n, set)| set.then_some(*n))
            .collect()
    }
}

/// Raw-label aliases per category. Matching is case-insensitive on trimmed
/// strings; the JSON form is `{"bug": [...], "enhancement": [...], "question": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelAliases {
    pub bug: Vec<String>,
    pub enhancement: Vec<String>,
    pub question: Vec<String>,
}

impl Default for LabelAliases {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            bug: v(&["bug", "bug-report", "type: bug", "kind/bug", "defect", "crash"]),
            enhancement: v(&[
                "enhancement",
                "feature",
                "feature request",
                "kind/feature",
                "type: feature",
                "improvement",
            ]),
            question: v(&["question", "kind/question", "support", "type: question"]),
        }
    }
}

impl LabelAliases {
    pub fn canonicalize<S: AsRef<str>>(&self, raw_labels: &[S]) -> LabelVector {
        let matches = |aliases: &[String], raw: &str| aliases.iter().any(|a| a.trim().to_lowercase() == raw);
        let mut out = LabelVector::default();
        for raw in raw_labels {
            let raw = raw.as_ref().trim().to_lowercase();
            out.bug |= matches(&self.bug, &raw);
            out.enhancement |= matches(&self.enhancement, &raw);
            out.question |= matches(&self.question, &raw);
        }
        out
    }
}

/// Maps raw tracker labels onto the categories with the default alias map.
pub fn canonicalize_labels<S: AsRef<str>>(raw_labels: &[S]) -> LabelVector {
    LabelAliases::default().canonicalize(raw_labels)
}

/// One issue report. Field order matches the dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssueRecord {
    pub id: u64,
    pub repo: RepoId,
    pub title: String,
    pub body: String,
    pub raw_labels: Vec<String>,
    pub labels: LabelVector,
    pub assignee: Option<String>,
    pub created_at: DateTime<Utc>,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<IssueRecord>,
    pub test: Vec<IssueRecord>,
    pub seed: u64,
    pub train_fraction: f64,
}

pub fn write_dataset_to<W: Write>(mut w: W, records: &[IssueRecord]) -> Result<(), CorpusError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, records: &[IssueRecord]) -> Result<(), CorpusError> {
    check_unique_ids(records)?;
    write_dataset_to(BufWriter::new(File::create(path)?), records)
}

/// Reads JSONL records; blank lines are ignored, ids must be unique.
pub fn read_dataset_from<R: Read>(r: R) -> Result<Vec<IssueRecord>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.strip_prefix('\u{feff}').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let rec: IssueRecord =
            serde_json::from_str(line).map_err(|source| CorpusError::Parse { line: i + 1, source })?;
        records.push(rec);
    }
    check_unique_ids(&records)?;
    Ok(records)
}

pub fn read_dataset(path: &Path) -> Result<Vec<IssueRecord>, CorpusError> {
    read_dataset_from(File::open(path)?)
}

fn check_unique_ids(records: &[IssueRecord]) -> Result<(), CorpusError> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.id) {
            return Err(CorpusError::DuplicateId(r.id));
        }
    }
    Ok(())
}

fn sorted_by_id(records: &[IssueRecord]) -> Vec<IssueRecord> {
    let mut v = records.to_vec();
    v.sort_by_key(|r| r.id);
    v
}

/// Uniform sample of `n` records without replacement. Records are ordered by
/// id before the seeded shuffle, so the result does not depend on input order.
pub fn sample_dataset(records: &[IssueRecord], n: usize, seed: u64) -> Result<Vec<IssueRecord>, CorpusError> {
    if n == 0 {
        return Err(CorpusError::InvalidArgument("sample size must be >= 1".into()));
    }
    if n > records.len() {
        return Err(CorpusError::Size {
            requested: n,
            available: records.len(),
        });
    }
    let mut v = sorted_by_id(records);
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v.truncate(n);
    Ok(v)
}

/// Seeded train/test split with `round(train_fraction * N)` training records.
pub fn split_dataset(records: &[IssueRecord], train_fraction: f64, seed: u64) -> Result<DatasetSplit, CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = records.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n < 2 || n_train == 0 || n_train == n {
        return Err(CorpusError::Size {
            requested: n_train,
            available: n,
        });
    }
    let mut v = sorted_by_id(records);
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = v.split_off(n_train);
    Ok(DatasetSplit {
        train: v,
        test,
        seed,
        train_fraction,
    })
}

/// Closed time interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeWindow {
    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        *t >= self.start && *t <= self.end
    }

    /// The 365 days ending at the newest `created_at` in `records`.
    pub fn trailing_year(records: &[IssueRecord]) -> Option<Self> {
        let end = records.iter().map(|r| r.created_at).max()?;
        Some(Self {
            start: end - Duration::days(365),
            end,
        })
    }
}

/// Candidate roster: assignees with at least `min_assigned` issues created in
/// `window`, ordered by descending count then login. Returns the in-window
/// records assigned to roster members.
pub fn filter_candidates(
    records: &[IssueRecord],
    min_assigned: usize,
    window: TimeWindow,
) -> Result<(Vec<IssueRecord>, Vec<String>), CorpusError> {
    if min_assigned == 0 {
        return Err(CorpusError::InvalidArgument("min_assigned must be >= 1".into()));
    }
    let in_window: Vec<&IssueRecord> = records
        .iter()
        .filter(|r| r.assignee.is_some() && window.contains(&r.created_at))
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &in_window {
        *counts.entry(r.assignee.as_deref().unwrap()).or_default() += 1;
    }
    let mut roster: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_assigned).collect();
    if roster.is_empty() {
        return Err(CorpusError::ColdStart { min_assigned });
    }
    roster.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let roster: Vec<String> = roster.into_iter().map(|(l, _)| l.to_string()).collect();
    let members: HashSet<&str> = roster.iter().map(String::as_str).collect();
    let kept = in_window
        .into_iter()
        .filter(|r| members.contains(r.assignee.as_deref().unwrap()))
        .cloned()
        .collect();
    Ok((kept, roster))
}

/// Top `count` repositories whose primary language matches, most stars first.
pub async fn search_top_repos(
    language: &str,
    count: usize,
    api: &dyn TrackerClient,
) -> Result<Vec<RepoSummary>, CorpusError> {
    if count == 0 {
        return Err(CorpusError::InvalidArgument("repository count must be >= 1".into()));
    }
    let mut repos: Vec<RepoSummary> = api
        .search_repositories(language, count)
        .await?
        .into_iter()
        .filter(|r| r.language.as_deref().is_some_and(|l| l.eq_ignore_ascii_case(language)))
        .collect();
    repos.sort_by(|a, b| b.stars.cmp(&a.stars).then_with(|| a.full_name.cmp(&b.full_name)));
    repos.truncate(count);
    Ok(repos)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchOutcome {
    pub records: Vec<IssueRecord>,
    pub pull_requests: usize,
    /// Items that could not be turned into a record.
    pub malformed: usize,
}

/// All issues of `repo`, pull requests excluded.
pub async fn fetch_issues(repo: &RepoId, language: &str, api: &dyn TrackerClient) -> Result<FetchOutcome, CorpusError> {
    let items = api.list_issues(repo).await.map_err(|e| match e {
        TrackerError::NotFound(_) => CorpusError::UnknownRepo(repo.clone()),
        other => CorpusError::Tracker(other),
    })?;
    let aliases = LabelAliases::default();
    let mut out = FetchOutcome::default();
    for item in &items {
        if item.get("pull_request").is_some_and(|v| !v.is_null()) {
            out.pull_requests += 1;
            continue;
        }
        match record_from_item(item, repo, language, &aliases) {
            Some(r) => out.records.push(r),
            None => out.malformed += 1,
        }
    }
    Ok(out)
}

fn record_from_item(item: &Value, repo: &RepoId, language: &str, aliases: &LabelAliases) -> Option<IssueRecord> {
    let id = item.get("id")?.as_u64().filter(|&id| id > 0)?;
    let title = item.get("title")?.as_str()?.replace('\0', "");
    let body = match item.get("body") {
        None | Some(Value::Null) => String::new(),
        Some(v) => v.as_str()?.replace('\0', ""),
    };
    let created_at: DateTime<Utc> = item.get("created_at")?.as_str()?.parse().ok()?;
    let mut raw_labels = Vec::new();
    if let Some(labels) = item.get("labels") {
        for l in labels.as_array()? {
            let name = match l {
                Value::String(s) => s.as_str(),
                other => other.get("name")?.as_str()?,
            };
            raw_labels.push(name.to_string());
        }
    }
    let login = |v: &Value| v.get("login").and_then(Value::as_str).map(str::to_owned);
    let assignee = item
        .get("assignees")
        .and_then(Value::as_array)
        .and_then(|a| a.first())
        .and_then(login)
        .or_else(|| item.get("assignee").and_then(login));
    Some(IssueRecord {
        id,
        repo: repo.clone(),
        title,
        body,
        labels: aliases.canonicalize(&raw_labels),
        raw_labels,
        assignee,
        created_at,
        language: language.to_string(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub records: Vec<IssueRecord>,
    pub repositories: usize,
    /// Search hits whose issues answered 404; skipped.
    pub missing_repositories: usize,
    pub pull_requests: usize,
    pub malformed: usize,
}

/// Searches each language and fetches issues of every hit, with at most
/// `concurrency` repositories in flight. Output order is deterministic:
/// languages in the given order, repositories by stars. Repositories that
/// disappeared between search and fetch (404) are skipped and counted.
pub async fn ingest(
    api: &dyn TrackerClient,
    languages: &[String],
    repos_per_language: usize,
    concurrency: usize,
) -> Result<IngestReport, CorpusError> {
    let mut targets = Vec::new();
    for lang in languages {
        for r in search_top_repos(lang, repos_per_language, api).await? {
            targets.push((r.full_name, lang.clone()));
        }
    }
    let results: Vec<Result<FetchOutcome, CorpusError>> = stream::iter(targets.iter())
        .map(|(repo, lang)| fetch_issues(repo, lang, api))
        .buffered(concurrency.max(1))
        .collect()
        .await;
    let mut report = IngestReport {
        repositories: targets.len(),
        ..Default::default()
    };
    let mut seen: HashMap<u64, ()> = HashMap::new();
    for res in results {
        let out = match res {
            Err(CorpusError::UnknownRepo(_)) => {
                report.missing_repositories += 1;
                continue;
            }
            other => other?,
        };
        report.pull_requests += out.pull_requests;
        report.malformed += out.malformed;
        for r in out.records {
            if seen.insert(r.id, ()).is_none() {
                report.records.push(r);
            }
        }
    }
    Ok(report)
}
