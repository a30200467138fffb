// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use axum::extract::Path as UrlPath;
use axum::routing::get;
use axum::{Json, Router};
use serde_json::{json, Value};
use tempfile::TempDir;
use triage_core::corpus::read_dataset;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn triage(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("triage").chain(args.iter().copied());
    let code = triage_cli::run_with(argv, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let r = triage(args);
    assert_eq!(r.code, 0, "{args:?}\nstdout:\n{}\nstderr:\n{}", r.out, r.err);
    r.out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &TempDir, name: &str, developers: &str) -> PathBuf {
    let p = dir.path().join(name);
    ok(&[
        "synth",
        "--documents",
        "300",
        "--developers",
        developers,
        "--seed",
        "7",
        "--out",
        s(&p),
    ]);
    p
}

fn train_linear(data: &Path, out: &Path, test_out: Option<&Path>) -> String {
    let mut args = vec![
        "train",
        "--task",
        "labels",
        "--backend",
        "linear",
        "--data",
        s(data),
        "--epochs",
        "5",
        "--lr",
        "0.1",
        "--seed",
        "1",
        "--dim",
        "16",
        "--buckets",
        "4096",
        "--out",
        s(out),
    ];
    if let Some(t) = test_out {
        args.extend(["--test-out", s(t)]);
    }
    ok(&args)
}

#[test]
fn train_evaluate_predict() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.jsonl", "0");
    let model = dir.path().join("m.momb");
    let test = dir.path().join("test.jsonl");
    let out = train_linear(&data, &model, Some(&test));
    assert_eq!(out.lines().filter(|l| l.starts_with("epoch ")).count(), 5, "{out}");
    assert!(out.contains("held-out macro P/R/F1:"), "{out}");
    assert_eq!(read_dataset(&test).unwrap().len(), 60);

    let table = ok(&["evaluate", "--model", s(&model), "--data", s(&test), "--format", "text"]);
    let row = table.lines().find(|l| l.starts_with("Macro-Average")).expect(&table);
    assert_eq!(row.split_whitespace().count(), 4, "{table}");
    assert!(table.contains("n = 60"), "{table}");
    for name in ["bug", "enhancement", "question"] {
        assert!(
            table.lines().any(|l| l.split_whitespace().next() == Some(name)),
            "{table}"
        );
    }

    let report: Value = serde_json::from_str(&ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&test),
        "--format",
        "json",
    ]))
    .unwrap();
    assert_eq!(report["n"], 60);
    assert!(report["macro"]["f1"].as_f64().unwrap() > 0.8);

    let text = ok(&[
        "predict",
        "--model",
        s(&model),
        "--title",
        "app crashes with a stack trace",
        "--body",
        "panic",
    ]);
    assert!(text.lines().any(|l| l.starts_with("label bug ")), "{text}");
    let json: Value = serde_json::from_str(&ok(&[
        "predict",
        "--model",
        s(&model),
        "--title",
        "app crashes",
        "--body",
        "...",
        "--format",
        "json",
    ]))
    .unwrap();
    assert!(json["labels"].is_array());
    assert_eq!(json["cold_start"], false);

    let none = ok(&["predict", "--model", s(&model), "--title", "x", "--threshold", "1"]);
    assert!(
        none.starts_with("labels: (none)") || none.starts_with("label "),
        "{none}"
    );
}

#[test]
fn assignment_models() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, "d.jsonl", "3");
    let labels = dir.path().join("labels.momb");
    let assign = dir.path().join("assign.momb");
    train_linear(&data, &labels, None);
    let out = ok(&[
        "train",
        "--task",
        "assign",
        "--backend",
        "linear",
        "--data",
        s(&data),
        "--lr",
        "0.1",
        "--seed",
        "1",
        "--dim",
        "16",
        "--buckets",
        "4096",
        "--min-assigned",
        "20",
        "--out",
        s(&assign),
    ]);
    let roster = out.lines().next().unwrap().strip_prefix("roster: ").expect(&out);
    let mut names: Vec<&str> = roster.split(", ").collect();
    names.sort_unstable();
    assert_eq!(names, ["dev0", "dev1", "dev2"]);

    let json: Value = serde_json::from_str(&ok(&[
        "predict",
        "--model",
        s(&labels),
        "--assign-model",
        s(&assign),
        "--title",
        "crash",
        "--format",
        "json",
    ]))
    .unwrap();
    let who = json["assignee"]["name"].as_str().unwrap();
    assert!(["dev0", "dev1", "dev2"].contains(&who), "{json}");

    // assignment model where a labelling model belongs
    let r = triage(&[
        "predict",
        "--model",
        s(&assign),
        "--title",
        "app crashes",
        "--body",
        "...",
    ]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("mismatch"), "{}", r.err);
    assert!(r.out.is_empty());

    // nobody reaches the history threshold
    let r = triage(&[
        "train",
        "--task",
        "assign",
        "--backend",
        "linear",
        "--data",
        s(&data),
        "--out",
        s(&assign),
        "--min-assigned",
        "1000",
    ]);
    assert_eq!(r.code, 2, "{}", r.err);
}

#[test]
fn usage_and_runtime_exit_codes() {
    let r = triage(&["train", "--bogus"]);
    assert_eq!(r.code, 1);
    assert!(r.err.contains("Usage"), "{}", r.err);
    assert_eq!(triage(&[]).code, 1);
    assert_eq!(
        triage(&["evaluate", "--model", "m", "--data", "d", "--format", "xml"]).code,
        1
    );
    let help = triage(&["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.out.contains("train"));
    assert_eq!(triage(&["--version"]).code, 0);

    let r = triage(&[
        "evaluate",
        "--model",
        "/nonexistent/m.momb",
        "--data",
        "/nonexistent/d.jsonl",
    ]);
    assert_eq!(r.code, 2);
    assert!(r.err.starts_with("error:"), "{}", r.err);

    // flags are checked before the data file is touched
    let r = triage(&[
        "train",
        "--task",
        "labels",
        "--backend",
        "linear",
        "--data",
        "/nonexistent",
        "--out",
        "/nonexistent/m",
        "--split",
        "1.5",
    ]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("--split"), "{}", r.err);
    let r = triage(&[
        "train",
        "--task",
        "labels",
        "--backend",
        "transformer",
        "--data",
        "/nonexistent",
        "--out",
        "/nonexistent/m",
        "--hidden-dim",
        "10",
        "--heads",
        "4",
    ]);
    assert_eq!(r.code, 2);
    assert!(!r.err.contains("/nonexistent"), "{}", r.err);
}

#[test]
fn identical_command_lines_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = synth(&dir, "a.jsonl", "0");
    let b = synth(&dir, "b.jsonl", "0");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (ma, mb) = (dir.path().join("a.momb"), dir.path().join("b.momb"));
    let (ta, tb) = (dir.path().join("ta.jsonl"), dir.path().join("tb.jsonl"));
    let la = train_linear(&a, &ma, Some(&ta));
    let lb = train_linear(&a, &mb, Some(&tb));
    assert_eq!(la.replace(s(&ma), ""), lb.replace(s(&mb), ""));
    assert_eq!(std::fs::read(&ma).unwrap(), std::fs::read(&mb).unwrap());
    assert_eq!(std::fs::read(&ta).unwrap(), std::fs::read(&tb).unwrap());
    let ra = ok(&["evaluate", "--model", s(&ma), "--data", s(&ta), "--format", "json"]);
    let rb = ok(&["evaluate", "--model", s(&mb), "--data", s(&tb), "--format", "json"]);
    assert_eq!(ra, rb);
}

fn issue(id: u64, title: &str, label: &str) -> Value {
    json!({
        "id": id, "number": id, "title": title, "body": "text",
        "labels": [{"name": label}], "assignee": null, "assignees": [],
        "created_at": "2024-03-01T00:00:00Z",
    })
}

#[test]
fn ingest_from_mock_tracker() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = Router::new()
        .route(
            "/search/repositories",
            get(|| async {
                Json(json!({"items": [
                    {"full_name": "acme/one", "stargazers_count": 5, "language": "Python"},
                    {"full_name": "acme/two", "stargazers_count": 2, "language": "Python"},
                ]}))
            }),
        )
        .route(
            "/repos/{owner}/{name}/issues",
            get(|UrlPath((_, name)): UrlPath<(String, String)>| async move {
                let off = if name == "one" { 0 } else { 10 };
                Json(json!([
                    issue(off + 1, "crash", "bug"),
                    issue(off + 2, "idea", "enhancement"),
                    issue(off + 3, "how to", "question"),
                ]))
            }),
        );
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });

    let dir = TempDir::new().unwrap();
    let out = dir.path().join("corpus.jsonl");
    let msg = ok(&[
        "ingest",
        "--languages",
        "python",
        "--repos-per-language",
        "2",
        "--api-base",
        &base,
        "--out",
        s(&out),
    ]);
    assert!(msg.contains("6 issues from 2 repositories"), "{msg}");
    let records = read_dataset(&out).unwrap();
    assert_eq!(records.len(), 6);

    let sampled = dir.path().join("sample.jsonl");
    let args = [
        "ingest",
        "--languages",
        "python",
        "--repos-per-language",
        "2",
        "--api-base",
        &base,
        "--sample",
        "4",
        "--seed",
        "3",
        "--out",
        s(&sampled),
    ];
    ok(&args);
    let first = std::fs::read(&sampled).unwrap();
    ok(&args);
    assert_eq!(read_dataset(&sampled).unwrap().len(), 4);
    assert_eq!(first, std::fs::read(&sampled).unwrap());
}
