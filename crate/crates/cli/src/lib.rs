// SPDX-License-Identifier: Apache-2.0

//! `triage` command line: ingest, synth, train, evaluate, predict, serve.
//!
//! [`run`] returns the process exit code: 0 on success, 1 on a usage error,
//! 2 when the command itself fails.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use triage_core::classifier::{
    init_model, load_model, save_model, train, Architecture, Backend, EncoderConfig, LinearConfig, ModelBundle,
    TaskConfig, TaskKind, TrainConfig,
};
use triage_core::corpus::{
    filter_candidates, ingest, read_dataset, sample_dataset, split_dataset, write_dataset, IssueRecord, TimeWindow,
};
use triage_core::evaluation::{evaluate_model, percent_triple, render_report, ReportFormat};
use triage_core::pipeline::{examples_for, labelled, vocabulary_for};
use triage_core::synth::{generate, SynthConfig};
use triage_core::triage::{triage_issue, Assigner, TriagePolicy};
use triage_service::config::{DEFAULT_API_BASE, ENV_API_BASE, ENV_TOKEN};
use triage_service::github::GithubClient;
use triage_service::{Models, Service, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "triage", version, about = "Issue labelling and assignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Download issues of the most-starred repositories per language
    Ingest(IngestArgs),
    /// Write a seeded synthetic issue dataset
    Synth(SynthArgs),
    /// Train a labelling or assignment model
    Train(TrainArgs),
    /// Score a model on a dataset
    Evaluate(EvaluateArgs),
    /// Triage one issue
    Predict(PredictArgs),
    /// Run the webhook service
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Labels,
    Assign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Linear,
    Transformer,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Linear => Backend::Linear,
            BackendArg::Transformer => Backend::Transformer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Comma-separated languages, e.g. python,rust
    #[arg(long, value_delimiter = ',', required = true)]
    languages: Vec<String>,
    #[arg(long, default_value_t = 200)]
    repos_per_language: usize,
    #[arg(long)]
    out: PathBuf,
    /// Repositories fetched at once
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Keep a random sample of this many issues
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tracker API base URL [default: $TRIAGE_API_BASE or https://api.github.com]
    #[arg(long)]
    api_base: Option<String>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 600)]
    documents: usize,
    /// Number of developers to assign; 0 leaves issues unassigned
    #[arg(long, default_value_t = 0)]
    developers: usize,
    #[arg(long, default_value_t = 0.15)]
    multi_label_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, value_enum)]
    backend: BackendArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Learning rate [default: 4e-5 transformer, 0.1 linear]
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 128)]
    max_seq_len: usize,
    /// Fraction used for training; the rest is held out and scored. 1 trains on everything
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the held-out records here
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_frequency: u32,
    #[arg(long, default_value_t = 30_000)]
    max_vocab: usize,
    /// Assignment: minimum issues per developer in the trailing year
    #[arg(long, default_value_t = 50)]
    min_assigned: usize,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[command(flatten)]
    linear: LinearArgs,
}

#[derive(Debug, Args)]
struct EncoderArgs {
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    ff_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
}

#[derive(Debug, Args)]
struct LinearArgs {
    /// Linear backend embedding size
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Linear backend n-gram hash buckets
    #[arg(long, default_value_t = 1 << 15)]
    buckets: u32,
}

#[derive(Debug, Args)]
struct PolicyArgs {
    /// JSON policy file
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Overrides the policy's label threshold
    #[arg(long)]
    threshold: Option<f64>,
    /// Overrides the policy's minimum assignment confidence
    #[arg(long)]
    min_confidence: Option<f64>,
}

impl PolicyArgs {
    fn load(&self) -> Result<TriagePolicy> {
        let mut p = match &self.policy {
            Some(path) => TriagePolicy::load(path).with_context(|| format!("reading policy {}", path.display()))?,
            None => TriagePolicy::default(),
        };
        if let Some(t) = self.threshold {
            p.label_threshold = t;
        }
        if let Some(c) = self.min_confidence {
            p.assign_min_confidence = c;
        }
        Ok(p)
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Labelling model
    #[arg(long)]
    model: PathBuf,
    /// Assignment model; enables assignment
    #[arg(long)]
    assign_model: Option<PathBuf>,
    #[arg(long)]
    title: String,
    #[arg(long, default_value = "")]
    body: String,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Labelling model
    #[arg(long)]
    model: PathBuf,
    /// Assignment model; enables assignment
    #[arg(long)]
    assign_model: Option<PathBuf>,
    /// Assignment is wanted but no model exists yet: label only, flag decisions
    #[arg(long, conflicts_with = "assign_model")]
    cold_start: bool,
    #[arg(long)]
    dedup_capacity: Option<usize>,
    #[command(flatten)]
    policy: PolicyArgs,
}

/// Parses `argv` (program name first) and runs the command, writing to the
/// process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            2
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Ingest(a) => cmd_ingest(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Serve(a) => cmd_serve(a, out),
    }
}

fn runtime(multi_thread: bool) -> Result<tokio::runtime::Runtime> {
    let mut b = if multi_thread {
        tokio::runtime::Builder::new_multi_thread()
    } else {
        tokio::runtime::Builder::new_current_thread()
    };
    b.enable_all().build().context("starting async runtime")
}

fn cmd_ingest(a: IngestArgs, out: &mut dyn Write) -> Result<()> {
    if a.repos_per_language == 0 {
        bail!("--repos-per-language must be at least 1");
    }
    if a.sample == Some(0) {
        bail!("--sample must be at least 1");
    }
    let base = a
        .api_base
        .or_else(|| std::env::var(ENV_API_BASE).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| DEFAULT_API_BASE.to_string());
    let token = std::env::var(ENV_TOKEN).ok().filter(|s| !s.is_empty());
    let api = GithubClient::new(&base, token)?;
    let report = runtime(false)?.block_on(ingest(&api, &a.languages, a.repos_per_language, a.concurrency))?;
    let mut records = report.records;
    if let Some(n) = a.sample {
        records = sample_dataset(&records, n, a.seed)?;
    }
    write_dataset(&a.out, &records).with_context(|| format!("writing {}", a.out.display()))?;
    writeln!(
        out,
        "wrote {} issues from {} repositories to {} ({} pull requests skipped, {} malformed items, {} missing repositories)",
        records.len(),
        report.repositories,
        a.out.display(),
        report.pull_requests,
        report.malformed,
        report.missing_repositories,
    )?;
    Ok(())
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    if !(0.0..=1.0).contains(&a.multi_label_fraction) {
        bail!("--multi-label-fraction must be in [0, 1]");
    }
    let records = generate(&SynthConfig {
        documents: a.documents,
        multi_label_fraction: a.multi_label_fraction,
        developers: a.developers,
        seed: a.seed,
        ..SynthConfig::default()
    });
    write_dataset(&a.out, &records)?;
    writeln!(out, "wrote {} synthetic issues to {}", records.len(), a.out.display())?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<IssueRecord>> {
    read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

fn load(path: &Path) -> Result<ModelBundle> {
    load_model(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let backend = Backend::from(a.backend);
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr.unwrap_or(TrainConfig::defaults_for(backend).learning_rate),
        batch_size: a.batch,
        max_seq_len: a.max_seq_len,
        seed: a.seed,
    };
    cfg.validate()?;
    let arch = match backend {
        Backend::Transformer => {
            let e = EncoderConfig {
                layers: a.encoder.layers,
                hidden_dim: a.encoder.hidden_dim,
                heads: a.encoder.heads,
                ff_dim: a.encoder.ff_dim,
                dropout: a.encoder.dropout,
                max_seq_len: a.max_seq_len,
            };
            e.validate()?;
            Architecture::Transformer(e)
        }
        Backend::Linear => {
            let l = LinearConfig {
                dim: a.linear.dim,
                buckets: a.linear.buckets,
                ..LinearConfig::default()
            };
            l.validate()?;
            Architecture::Linear(l)
        }
    };
    if !(a.split > 0.0 && a.split <= 1.0) {
        bail!("--split must be in (0, 1]");
    }
    if a.min_frequency == 0 || a.max_vocab == 0 {
        bail!("--min-frequency and --max-vocab must be at least 1");
    }

    let records = read(&a.data)?;
    let (records, task) = match a.task {
        TaskArg::Labels => (
            labelled(&records).into_iter().cloned().collect::<Vec<_>>(),
            TaskConfig::labelling(),
        ),
        TaskArg::Assign => {
            let window = TimeWindow::trailing_year(&records).context("dataset is empty")?;
            let (kept, roster) = filter_candidates(&records, a.min_assigned, window)?;
            if roster.len() < 2 {
                bail!(
                    "only {} developer(s) with at least {} assignments; need 2 for an assignment model",
                    roster.len(),
                    a.min_assigned
                );
            }
            writeln!(out, "roster: {}", roster.join(", "))?;
            (kept, TaskConfig::assignment(roster))
        }
    };
    let (train_set, test_set) = if a.split < 1.0 {
        let s = split_dataset(&records, a.split, a.seed)?;
        (s.train, s.test)
    } else {
        (records, Vec::new())
    };
    let vocab = vocabulary_for(&train_set, a.min_frequency, a.max_vocab)?;
    let model = init_model(task, arch, vocab, a.seed)?;
    let examples = examples_for(&model, &train_set)?;
    writeln!(
        out,
        "training {backend} model on {} examples ({} held out), {} parameters",
        examples.len(),
        test_set.len(),
        model.params().len()
    )?;
    let result = train(model, &examples, &cfg)?;
    for (i, l) in result.epoch_losses.iter().enumerate() {
        writeln!(out, "epoch {} loss {l:.6}", i + 1)?;
    }
    save_model(&result.model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    writeln!(out, "saved {} ({})", a.out.display(), result.model.fingerprint())?;
    if let Some(p) = &a.test_out {
        write_dataset(p, &test_set)?;
    }
    if !test_set.is_empty() {
        let report = evaluate_model(&result.model, &test_set, &TriagePolicy::default())?;
        writeln!(out, "held-out macro P/R/F1: {}", percent_triple(&report.macro_avg))?;
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let policy = a.policy.load()?;
    let model = load(&a.model)?;
    let records = read(&a.data)?;
    let report = evaluate_model(&model, &records, &policy)?;
    let text = render_report(&report, a.format.into());
    write!(out, "{text}")?;
    if !text.ends_with('\n') {
        writeln!(out)?;
    }
    Ok(())
}

/// Policy for `model` plus an optional assignment model whose roster the
/// policy takes over when it has none of its own.
fn policy_for(args: &PolicyArgs, assign: Option<&ModelBundle>) -> Result<TriagePolicy> {
    let mut policy = args.load()?;
    if let Some(m) = assign {
        if m.task().task != TaskKind::Multiclass {
            bail!("assignment model task mismatch: expected multiclassK, found multilabel3");
        }
        policy.assign_enabled = true;
        if policy.roster.is_empty() {
            policy.roster = m.task().label_names.clone();
        }
    }
    Ok(policy)
}

fn check_label_model(m: &ModelBundle) -> Result<()> {
    if m.task().task != TaskKind::Multilabel {
        bail!("model task mismatch: --model must be a labelling model (multilabel3), found an assignment model (multiclassK)");
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let model = load(&a.model)?;
    check_label_model(&model)?;
    let assign = a.assign_model.as_deref().map(load).transpose()?;
    let policy = policy_for(&a.policy, assign.as_ref())?;
    let assigner = assign.as_ref().map_or(Assigner::None, Assigner::Model);
    let d = triage_issue(&a.title, &a.body, &model, assigner, &policy)?;
    match a.format {
        FormatArg::Json => writeln!(out, "{}", serde_json::to_string_pretty(&d)?)?,
        FormatArg::Text => {
            if d.labels.is_empty() {
                writeln!(out, "labels: (none)")?;
            }
            for l in &d.labels {
                writeln!(out, "label {} {:.4}", l.name, l.confidence)?;
            }
            match &d.assignee {
                Some(s) => writeln!(out, "assignee {} {:.4}", s.name, s.confidence)?,
                None if policy.assign_enabled => writeln!(out, "assignee: (abstain)")?,
                None => {}
            }
        }
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = ServiceConfig::from_env()?;
    if let Some(c) = a.dedup_capacity {
        config.dedup_capacity = c;
    }
    let labels = load(&a.model)?;
    check_label_model(&labels)?;
    let assign = a.assign_model.as_deref().map(load).transpose()?;
    let mut policy = policy_for(&a.policy, assign.as_ref())?;
    if a.cold_start {
        policy.assign_enabled = true;
        if policy.roster.is_empty() {
            bail!("--cold-start needs a policy with a roster");
        }
    }
    let api = GithubClient::new(&config.api_base_url, config.auth_token.clone())?;
    let dry_run = config.dry_run;
    let models = Models {
        labels,
        assignee: assign,
        cold_start: a.cold_start,
    };
    let service = Arc::new(Service::new(models, policy, config, Arc::new(api))?);
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let rt = runtime(true)?;
    rt.block_on(async {
        let listener = triage_service::http::bind(a.addr).await?;
        writeln!(
            out,
            "listening on {}{}",
            listener.local_addr()?,
            if dry_run { " (dry run)" } else { "" }
        )?;
        out.flush()?;
        triage_service::http::serve(listener, service).await?;
        Ok(())
    })
}
