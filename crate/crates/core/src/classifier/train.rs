// SPDX-License-Identifier: Apache-2.0

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adam, Architecture, Example, ModelBundle, ModelError, Target, TaskKind, TrainConfig};

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelBundle,
    /// Mean example loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

// Separates the dropout stream from the shuffling stream.
const DROPOUT_STREAM: u64 = 0x5eed_d20f;

/// Mini-batch Adam on a single thread. Examples are reshuffled each epoch
/// from a generator seeded with `cfg.seed`, so identical inputs give
/// identical weights and loss history.
pub fn train(model: ModelBundle, data: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if let Architecture::Transformer(enc) = &model.arch {
        if enc.max_seq_len != cfg.max_seq_len {
            return Err(ModelError::Config(format!(
                "train max_seq_len {} differs from the encoder's {}",
                cfg.max_seq_len, enc.max_seq_len
            )));
        }
    }
    let k = model.task.num_outputs();
    for ex in data {
        match (&ex.target, model.task.task) {
            (Target::Class(c), TaskKind::Multiclass) if *c >= k => {
                return Err(ModelError::ClassOutOfRange { index: *c, classes: k })
            }
            (Target::MultiHot(y), TaskKind::Multilabel) if y.len() != k => {
                return Err(ModelError::InputMismatch(format!(
                    "{} targets for {k} outputs",
                    y.len()
                )))
            }
            (Target::Class(_), TaskKind::Multiclass) | (Target::MultiHot(_), TaskKind::Multilabel) => {}
            _ => return Err(ModelError::InputMismatch("target kind does not match task".into())),
        }
        model.check_input(&ex.input)?;
    }

    let mut model = model;
    let mut weights = model.params.data().to_vec();
    let mut grad = vec![0.0; weights.len()];
    let mut adam = Adam::new(cfg.learning_rate, weights.len());
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM);
    let use_dropout = matches!(&model.arch, Architecture::Transformer(e) if e.dropout > 0.0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let rng = use_dropout.then_some(&mut dropout_rng);
                batch_loss += model.example_gradient(&weights, &data[i], rng, &mut grad)?;
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::Divergence {
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            adam.step(&mut weights, &grad);
            epoch_loss += batch_loss;
        }
        history.push(epoch_loss / data.len() as f64);
    }

    model.params.data_mut().copy_from_slice(&weights);
    model.params.round_to_f32();
    if model.params.data().iter().any(|w| !w.is_finite()) {
        return Err(ModelError::Divergence {
            epoch: cfg.epochs,
            batch: data.len().div_ceil(cfg.batch_size),
        });
    }
    model.train_config = Some(cfg.clone());
    model.fingerprint = OnceLock::new();
    Ok(TrainOutcome {
        model,
        epoch_losses: history,
    })
}
