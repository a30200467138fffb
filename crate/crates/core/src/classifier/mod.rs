// SPDX-License-Identifier: Apache-2.0

//! Issue-text classifiers.
//!
//! Two backends share one [`ModelBundle`] type:
//!
//! - **linear**: mean of word and hashed character n-gram embeddings, then an
//!   affine layer (fastText-style bag of subwords);
//! - **transformer**: a small post-norm transformer encoder over word ids with
//!   sinusoidal positions, mean-pooled over real tokens, then an affine layer.
//!
//! The head is three independent sigmoids for category labelling or a softmax
//! over the developer roster for assignment. Training and inference run in
//! `f64`; weights are kept representable in `f32`, which is how they are
//! stored on disk, so a saved and reloaded model predicts bit-identically.

mod adam;
mod format;
pub mod gradcheck;
mod linear;
pub mod ops;
mod params;
mod train;
mod transformer;

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CATEGORIES;
use crate::textproc::{concat_title_body, encode_sequence, word_ngrams, words, TokenSequence, Vocabulary, SEP_TOKEN};

pub use adam::Adam;
pub use format::{FormatError, FORMAT_VERSION, MAGIC};
pub use params::{ParamStore, TensorSpec};
pub use train::{train, TrainOutcome};

use linear::LinearLayout;
use transformer::TransformerLayout;

/// Probabilities are kept strictly inside (0, 1).
const PROB_FLOOR: f64 = 1e-15;
/// Clamp used inside the log of the loss.
const LOSS_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input does not match model: {0}")]
    InputMismatch(String),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("model file: {0}")]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Linear,
    Transformer,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Linear => "linear",
            Backend::Transformer => "transformer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    /// Three independent category decisions.
    #[serde(rename = "multilabel3")]
    Multilabel,
    /// One developer out of K.
    #[serde(rename = "multiclassK")]
    Multiclass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub task: TaskKind,
    pub label_names: Vec<String>,
}

impl TaskConfig {
    /// bug / enhancement / question.
    pub fn labelling() -> Self {
        Self {
            task: TaskKind::Multilabel,
            label_names: CATEGORIES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn assignment(roster: Vec<String>) -> Self {
        Self {
            task: TaskKind::Multiclass,
            label_names: roster,
        }
    }

    pub fn num_outputs(&self) -> usize {
        self.label_names.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self.task {
            TaskKind::Multilabel if self.label_names.len() != 3 => {
                Err(ModelError::Config("multi-label task needs exactly 3 outputs".into()))
            }
            TaskKind::Multiclass if self.label_names.len() < 2 => {
                Err(ModelError::Config("multi-class task needs at least 2 classes".into()))
            }
            _ => {
                let mut names = self.label_names.clone();
                names.sort();
                names.dedup();
                if names.len() != self.label_names.len() {
                    return Err(ModelError::Config("duplicate label names".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// 5 epochs, batch 8, sequences of 128; lr 4e-5 (transformer) or 0.1 (linear).
    pub fn defaults_for(backend: Backend) -> Self {
        Self {
            epochs: 5,
            learning_rate: match backend {
                Backend::Transformer => 4e-5,
                Backend::Linear => 0.1,
            },
            batch_size: 8,
            max_seq_len: 128,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 || self.max_seq_len == 0 {
            return Err(ModelError::Config(
                "epochs, batch size and max sequence length must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Input length; sequences are truncated or padded to it.
    pub max_seq_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden_dim: 64,
            heads: 4,
            ff_dim: 256,
            dropout: 0.1,
            max_seq_len: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 || self.hidden_dim == 0 || self.heads == 0 || self.ff_dim == 0 {
            return Err(ModelError::Config("encoder sizes must be positive".into()));
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "hidden_dim {} is not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must be in [0, 1)".into()));
        }
        if self.max_seq_len == 0 {
            return Err(ModelError::Config("max_seq_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    pub dim: usize,
    pub buckets: u32,
    pub min_n: usize,
    pub max_n: usize,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            buckets: 1 << 15,
            min_n: 2,
            max_n: 4,
        }
    }
}

impl LinearConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 || self.buckets == 0 {
            return Err(ModelError::Config("linear dim and buckets must be positive".into()));
        }
        if self.min_n == 0 || self.min_n > self.max_n {
            return Err(ModelError::Config(
                "n-gram range must satisfy 1 <= min_n <= max_n".into(),
            ));
        }
        Ok(())
    }
}

/// Backend plus its size settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum Architecture {
    Linear(LinearConfig),
    Transformer(EncoderConfig),
}

impl Architecture {
    pub fn backend(&self) -> Backend {
        match self {
            Architecture::Linear(_) => Backend::Linear,
            Architecture::Transformer(_) => Backend::Transformer,
        }
    }

    pub fn default_for(backend: Backend) -> Self {
        match backend {
            Backend::Linear => Architecture::Linear(LinearConfig::default()),
            Backend::Transformer => Architecture::Transformer(EncoderConfig::default()),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        match self {
            Architecture::Linear(c) => c.validate(),
            Architecture::Transformer(c) => c.validate(),
        }
    }
}

/// Encoded model input. Token sequences feed the transformer; sorted feature
/// rows (word ids, then offset n-gram buckets) feed the linear backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelInput {
    Tokens(TokenSequence),
    Features(Vec<u32>),
}

/// Class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
}

impl Prediction {
    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Training target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    MultiHot(Vec<bool>),
    Class(usize),
}

#[derive(Debug, Clone)]
pub struct Example {
    pub input: ModelInput,
    pub target: Target,
}

#[derive(Debug, Clone)]
enum Layout {
    Linear(LinearLayout),
    Transformer(TransformerLayout),
}

/// A classifier with its vocabulary and configuration.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    task: TaskConfig,
    arch: Architecture,
    vocab: Vocabulary,
    train_config: Option<TrainConfig>,
    layout: Layout,
    params: ParamStore,
    fingerprint: OnceLock<String>,
}

impl PartialEq for ModelBundle {
    fn eq(&self, other: &Self) -> bool {
        self.task == other.task
            && self.arch == other.arch
            && self.vocab == other.vocab
            && self.train_config == other.train_config
            && self.params == other.params
    }
}

/// Builds a freshly initialised model. Embeddings are uniform(-0.05, 0.05),
/// weight matrices Glorot-uniform, biases zero, layer-norm gains one.
pub fn init_model(
    task: TaskConfig,
    arch: Architecture,
    vocab: Vocabulary,
    seed: u64,
) -> Result<ModelBundle, ModelError> {
    let mut bundle = ModelBundle::empty(task, arch, vocab, None)?;
    bundle.params.initialize(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(bundle)
}

impl ModelBundle {
    /// Zero-filled model with the layout implied by the configuration.
    fn empty(
        task: TaskConfig,
        arch: Architecture,
        vocab: Vocabulary,
        train_config: Option<TrainConfig>,
    ) -> Result<Self, ModelError> {
        task.validate()?;
        arch.validate()?;
        let mut params = ParamStore::new();
        let outputs = task.num_outputs();
        let layout = match &arch {
            Architecture::Linear(c) => Layout::Linear(LinearLayout::register(c, vocab.len(), outputs, &mut params)),
            Architecture::Transformer(c) => {
                Layout::Transformer(TransformerLayout::register(c, vocab.len(), outputs, &mut params))
            }
        };
        Ok(Self {
            task,
            arch,
            vocab,
            train_config,
            layout,
            params,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn backend(&self) -> Backend {
        self.arch.backend()
    }

    pub fn task(&self) -> &TaskConfig {
        &self.task
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn train_config(&self) -> Option<&TrainConfig> {
        self.train_config.as_ref()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable access to the flat weight vector.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        self.fingerprint = OnceLock::new();
        self.params.data_mut()
    }

    /// Content hash of the serialised model, as 16 hex digits.
    pub fn fingerprint(&self) -> &str {
        self.fingerprint
            .get_or_init(|| format!("{:016x}", format::checksum_of(&self.to_bytes())))
    }

    /// Encodes free text for this model's backend.
    pub fn encode_text(&self, text: &str) -> ModelInput {
        match &self.layout {
            Layout::Transformer(l) => ModelInput::Tokens(encode_sequence(text, &self.vocab, l.cfg.max_seq_len)),
            Layout::Linear(l) => ModelInput::Features(self.linear_features(l, text)),
        }
    }

    /// Title and body joined with the separator, then [`Self::encode_text`].
    pub fn encode_issue(&self, title: &str, body: &str) -> ModelInput {
        self.encode_text(&concat_title_body(title, body))
    }

    fn linear_features(&self, l: &LinearLayout, text: &str) -> Vec<u32> {
        let mut feats = Vec::new();
        let mut grams = Vec::new();
        let base = self.vocab.len() as u32;
        for w in words(text) {
            feats.push(self.vocab.id(&w));
            if w != SEP_TOKEN {
                grams.clear();
                word_ngrams(&w, (l.cfg.min_n, l.cfg.max_n), u64::from(l.cfg.buckets), &mut grams);
                feats.extend(grams.iter().map(|&b| base + b as u32));
            }
        }
        feats.sort_unstable();
        feats
    }

    fn check_input(&self, input: &ModelInput) -> Result<(), ModelError> {
        match (&self.layout, input) {
            (Layout::Transformer(l), ModelInput::Tokens(seq)) => {
                if seq.ids.len() != l.cfg.max_seq_len || seq.attention_mask.len() != seq.ids.len() {
                    return Err(ModelError::InputMismatch(format!(
                        "expected a sequence of length {}, got {}",
                        l.cfg.max_seq_len,
                        seq.ids.len()
                    )));
                }
                if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= l.vocab_size) {
                    return Err(ModelError::InputMismatch(format!(
                        "token id {id} outside vocabulary of {}",
                        l.vocab_size
                    )));
                }
                Ok(())
            }
            (Layout::Linear(l), ModelInput::Features(f)) => {
                if let Some(&row) = f.iter().find(|&&r| r as usize >= l.rows()) {
                    return Err(ModelError::InputMismatch(format!(
                        "feature {row} outside embedding table of {}",
                        l.rows()
                    )));
                }
                if !f.windows(2).all(|w| w[0] <= w[1]) {
                    return Err(ModelError::InputMismatch("features must be sorted".into()));
                }
                Ok(())
            }
            _ => Err(ModelError::InputMismatch(format!(
                "{} model cannot take this input kind",
                self.backend()
            ))),
        }
    }

    fn pooled(&self, p: &[f64], input: &ModelInput) -> Vec<f64> {
        match (&self.layout, input) {
            (Layout::Transformer(l), ModelInput::Tokens(seq)) => {
                let (ids, mask) = compact(seq);
                l.forward(p, &ids, &mask, None).pooled
            }
            (Layout::Linear(l), ModelInput::Features(f)) => l.hidden(p, f),
            _ => unreachable!("checked by check_input"),
        }
    }

    fn head_offsets(&self) -> (usize, usize, usize) {
        match &self.layout {
            Layout::Linear(l) => (l.head_w, l.head_b, l.cfg.dim),
            Layout::Transformer(l) => (l.head_w, l.head_b, l.cfg.hidden_dim),
        }
    }

    fn logits(&self, p: &[f64], hidden: &[f64]) -> Vec<f64> {
        let (w, b, d) = self.head_offsets();
        let k = self.task.num_outputs();
        ops::affine(hidden, &p[w..w + d * k], &p[b..b + k], 1, d, k)
    }

    fn probs(&self, logits: &[f64]) -> Vec<f64> {
        match self.task.task {
            TaskKind::Multilabel => logits
                .iter()
                .map(|&z| ops::sigmoid(z).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
                .collect(),
            TaskKind::Multiclass => ops::softmax(logits),
        }
    }

    fn forward_with(&self, p: &[f64], input: &ModelInput) -> Result<Prediction, ModelError> {
        self.check_input(input)?;
        let hidden = self.pooled(p, input);
        Ok(Prediction {
            probs: self.probs(&self.logits(p, &hidden)),
        })
    }

    /// Per-layer, per-head attention weights `[layer][head][query][key]` over
    /// the full padded sequence. Transformer only.
    pub fn attention_maps(&self, seq: &TokenSequence) -> Result<Vec<Vec<Vec<Vec<f64>>>>, ModelError> {
        let input = ModelInput::Tokens(seq.clone());
        self.check_input(&input)?;
        match &self.layout {
            Layout::Transformer(l) => Ok(l.attention_maps(self.params.data(), &seq.ids, &seq.attention_mask)),
            Layout::Linear(_) => Err(ModelError::InputMismatch("linear model has no attention".into())),
        }
    }

    /// Pooled encoder output computed over the full padded sequence with
    /// key masking, rather than over the compacted real tokens.
    pub fn pooled_full_mask(&self, seq: &TokenSequence) -> Result<Vec<f64>, ModelError> {
        match &self.layout {
            Layout::Transformer(l) => Ok(l
                .forward(self.params.data(), &seq.ids, &seq.attention_mask, None)
                .pooled),
            Layout::Linear(_) => Err(ModelError::InputMismatch("linear model has no encoder".into())),
        }
    }

    /// Loss of one example and its gradient accumulated into `grad`.
    pub(crate) fn example_gradient(
        &self,
        p: &[f64],
        ex: &Example,
        dropout: Option<&mut ChaCha8Rng>,
        grad: &mut [f64],
    ) -> Result<f64, ModelError> {
        self.check_input(&ex.input)?;
        let k = self.task.num_outputs();
        enum Cache {
            Linear,
            Transformer(transformer::ForwardCache),
        }
        let (hidden, cache) = match (&self.layout, &ex.input) {
            (Layout::Transformer(l), ModelInput::Tokens(seq)) => {
                let (ids, mask) = compact(seq);
                let c = l.forward(p, &ids, &mask, dropout);
                (c.pooled.clone(), Cache::Transformer(c))
            }
            (Layout::Linear(l), ModelInput::Features(f)) => (l.hidden(p, f), Cache::Linear),
            _ => unreachable!("checked by check_input"),
        };
        let logits = self.logits(p, &hidden);
        let pred = Prediction {
            probs: self.probs(&logits),
        };
        let loss = compute_loss(&pred, &ex.target, self.task.task)?;
        let dlogits: Vec<f64> = match &ex.target {
            Target::MultiHot(y) => pred
                .probs
                .iter()
                .zip(y)
                .map(|(p, &y)| (p - if y { 1.0 } else { 0.0 }) / k as f64)
                .collect(),
            Target::Class(c) => pred
                .probs
                .iter()
                .enumerate()
                .map(|(i, p)| p - if i == *c { 1.0 } else { 0.0 })
                .collect(),
        };
        let (w, b, d) = self.head_offsets();
        let mut dw = grad[w..w + d * k].to_vec();
        let mut db = grad[b..b + k].to_vec();
        let dhidden = ops::affine_backward(&hidden, &p[w..w + d * k], &dlogits, &mut dw, &mut db, 1, d, k);
        grad[w..w + d * k].copy_from_slice(&dw);
        grad[b..b + k].copy_from_slice(&db);
        match (&self.layout, &ex.input, cache) {
            (Layout::Transformer(l), _, Cache::Transformer(c)) => l.backward(p, &c, &dhidden, grad),
            (Layout::Linear(l), ModelInput::Features(f), Cache::Linear) => l.backward_hidden(f, &dhidden, grad),
            _ => unreachable!(),
        }
        Ok(loss)
    }
}

/// Real tokens of a sequence; positions stay `0..n` because the mask is a
/// prefix.
fn compact(seq: &TokenSequence) -> (Vec<u32>, Vec<bool>) {
    let ids: Vec<u32> = seq
        .ids
        .iter()
        .zip(&seq.attention_mask)
        .filter(|(_, &m)| m)
        .map(|(&id, _)| id)
        .collect();
    let mask = vec![true; ids.len()];
    (ids, mask)
}

pub fn forward(model: &ModelBundle, input: &ModelInput) -> Result<Prediction, ModelError> {
    model.forward_with(model.params.data(), input)
}

pub fn predict_probs(model: &ModelBundle, batch: &[ModelInput]) -> Result<Vec<Prediction>, ModelError> {
    batch.iter().map(|x| forward(model, x)).collect()
}

/// Mean binary cross-entropy over the outputs (multi-label) or negative log
/// probability of the true class (multi-class). Probabilities are clamped at
/// 1e-12 inside the logarithm.
pub fn compute_loss(pred: &Prediction, truth: &Target, task: TaskKind) -> Result<f64, ModelError> {
    let clamp = |p: f64| p.clamp(LOSS_CLAMP, 1.0);
    match (task, truth) {
        (TaskKind::Multilabel, Target::MultiHot(y)) => {
            if y.len() != pred.probs.len() {
                return Err(ModelError::InputMismatch(format!(
                    "{} targets for {} outputs",
                    y.len(),
                    pred.probs.len()
                )));
            }
            let total: f64 = pred
                .probs
                .iter()
                .zip(y)
                .map(|(&p, &y)| if y { -clamp(p).ln() } else { -clamp(1.0 - p).ln() })
                .sum();
            Ok(total / y.len() as f64)
        }
        (TaskKind::Multiclass, Target::Class(c)) => {
            let p = pred.probs.get(*c).ok_or(ModelError::ClassOutOfRange {
                index: *c,
                classes: pred.probs.len(),
            })?;
            Ok(-clamp(*p).ln())
        }
        _ => Err(ModelError::InputMismatch("target kind does not match task".into())),
    }
}

/// Mean loss over `examples` and its gradient with respect to every weight,
/// without dropout.
pub fn loss_and_gradient(model: &ModelBundle, examples: &[Example]) -> Result<(f64, Vec<f64>), ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let p = model.params.data();
    let mut grad = vec![0.0; p.len()];
    let mut total = 0.0;
    for ex in examples {
        total += model.example_gradient(p, ex, None, &mut grad)?;
    }
    let n = examples.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// Mean loss over `examples` by plain forward evaluation.
pub fn mean_loss(model: &ModelBundle, examples: &[Example]) -> Result<f64, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut total = 0.0;
    for ex in examples {
        total += compute_loss(&forward(model, &ex.input)?, &ex.target, model.task.task)?;
    }
    Ok(total / examples.len() as f64)
}

pub fn save_model(model: &ModelBundle, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelBundle, ModelError> {
    let bytes = std::fs::read(path)?;
    Ok(ModelBundle::from_bytes(&bytes)?)
}

#[cfg(test)]
mod tests;
