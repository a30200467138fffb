// SPDX-License-Identifier: Apache-2.0

//! Seeded synthetic issue corpus. Each category and each developer has its
//! own keyword pool; documents mix those keywords with shared filler words.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{canonicalize_labels, IssueRecord, CATEGORIES};
use crate::tracker::RepoId;

const KEYWORDS: [&[&str]; 3] = [
    &[
        "crash",
        "error",
        "exception",
        "panic",
        "segfault",
        "broken",
        "fails",
        "regression",
        "traceback",
        "null",
        "leak",
        "wrong",
    ],
    &[
        "feature",
        "support",
        "add",
        "option",
        "improve",
        "proposal",
        "allow",
        "extend",
        "configurable",
        "request",
        "new",
        "plugin",
    ],
    &[
        "how",
        "why",
        "docs",
        "understand",
        "help",
        "possible",
        "usage",
        "example",
        "clarify",
        "explain",
        "guidance",
        "wondering",
    ],
];

const RAW_FORMS: [&[&str]; 3] = [
    &["bug", "Bug", "kind/bug", "type: bug"],
    &["enhancement", "feature", "kind/feature", "Feature Request"],
    &["question", "Question", "kind/question", "support"],
];

const FILLER: &[&str] = &[
    "the", "when", "app", "using", "with", "after", "version", "build", "config", "file", "server", "page", "window",
    "run", "install", "update", "user", "data", "api", "module", "test", "code", "project", "release", "linux",
    "windows", "mac", "on", "in", "for", "this", "that", "it", "we", "i", "is", "a", "to", "from", "of",
];

const COMPONENTS: &[&[&str]] = &[
    &["network", "socket", "proxy", "tls"],
    &["storage", "disk", "database", "migration"],
    &["render", "canvas", "font", "layout"],
    &["auth", "login", "token", "session"],
    &["cli", "terminal", "flag", "shell"],
    &["scheduler", "thread", "queue", "worker"],
    &["cache", "eviction", "memory", "ttl"],
    &["index", "search", "query", "ranking"],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub documents: usize,
    /// Probability that a document carries a second category.
    pub multi_label_fraction: f64,
    /// Probability of one stray keyword from a category the document lacks.
    pub noise: f64,
    /// Number of developers; zero leaves every record unassigned.
    pub developers: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            documents: 600,
            multi_label_fraction: 0.15,
            noise: 0.1,
            developers: 0,
            seed: 42,
        }
    }
}

pub fn developer_name(i: usize) -> String {
    format!("dev{i}")
}

/// Generates `cfg.documents` records with ids `1..=documents`, one hour
/// apart, in repository `synth/issues`.
pub fn generate(cfg: &SynthConfig) -> Vec<IssueRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base: DateTime<Utc> = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let repo = RepoId::new("synth", "issues");
    (0..cfg.documents)
        .map(|i| {
            let primary = rng.random_range(0..3);
            let mut cats = vec![primary];
            if rng.random_bool(cfg.multi_label_fraction) {
                cats.push((primary + rng.random_range(1..3)) % 3);
            }
            let dev = (cfg.developers > 0).then(|| rng.random_range(0..cfg.developers));

            let mut title: Vec<&str> = cats.iter().map(|&c| *KEYWORDS[c].choose(&mut rng).unwrap()).collect();
            for _ in 0..rng.random_range(2..5) {
                title.push(FILLER.choose(&mut rng).unwrap());
            }
            title.shuffle(&mut rng);

            let mut body: Vec<&str> = Vec::new();
            for &c in &cats {
                for _ in 0..rng.random_range(3..6) {
                    body.push(KEYWORDS[c].choose(&mut rng).unwrap());
                }
            }
            if rng.random_bool(cfg.noise) {
                let others: Vec<usize> = (0..3).filter(|c| !cats.contains(c)).collect();
                let c = *others.choose(&mut rng).unwrap();
                body.push(KEYWORDS[c].choose(&mut rng).unwrap());
            }
            if let Some(d) = dev {
                let pool = COMPONENTS[d % COMPONENTS.len()];
                for _ in 0..rng.random_range(2..4) {
                    body.push(pool.choose(&mut rng).unwrap());
                }
            }
            for _ in 0..rng.random_range(8..21) {
                body.push(FILLER.choose(&mut rng).unwrap());
            }
            body.shuffle(&mut rng);

            let mut raw_labels: Vec<String> = cats
                .iter()
                .map(|&c| RAW_FORMS[c].choose(&mut rng).unwrap().to_string())
                .collect();
            if rng.random_bool(0.2) {
                raw_labels.push("good first issue".into());
            }
            let labels = canonicalize_labels(&raw_labels);
            IssueRecord {
                id: i as u64 + 1,
                repo: repo.clone(),
                title: title.join(" "),
                body: body.join(" "),
                raw_labels,
                labels,
                assignee: dev.map(developer_name),
                created_at: base + Duration::hours(i as i64),
                language: "Rust".into(),
            }
        })
        .collect()
}

/// Category names carried by a record, for diagnostics.
pub fn category_names(r: &IssueRecord) -> Vec<&'static str> {
    CATEGORIES
        .iter()
        .zip(r.labels.as_array())
        .filter(|(_, on)| *on)
        .map(|(n, _)| *n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labelled() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg);
        assert_eq!(a, generate(&cfg));
        assert_eq!(a.len(), 600);
        assert!(a.iter().all(|r| !r.labels.is_unlabelled() && r.assignee.is_none()));
        let multi = a.iter().filter(|r| category_names(r).len() == 2).count();
        assert!(multi > 40 && multi < 150, "{multi}");
        for c in 0..3 {
            assert!(a.iter().filter(|r| r.labels.as_array()[c]).count() > 150);
        }
        assert_ne!(a, generate(&SynthConfig { seed: 1, ..cfg }));
    }

    #[test]
    fn developers_assigned() {
        let a = generate(&SynthConfig {
            documents: 50,
            developers: 3,
            ..SynthConfig::default()
        });
        assert!(a.iter().all(|r| r.assignee.is_some()));
        let mut devs: Vec<_> = a.iter().filter_map(|r| r.assignee.clone()).collect();
        devs.sort();
        devs.dedup();
        assert_eq!(devs, ["dev0", "dev1", "dev2"]);
    }
}
