// SPDX-License-Identifier: Apache-2.0

//! Central finite-difference check of the analytic gradient.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_and_gradient, mean_loss, Example, ModelBundle, ModelError, ModelInput};

/// Below this magnitude both gradients are treated as zero: central
/// differences of a loss of order one carry roundoff of about `1e-12 / h`.
pub const GRAD_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub worst_relative_error: f64,
    /// Parameter index and tensor name of the worst entry.
    pub worst_index: usize,
    pub worst_tensor: String,
}

/// `|fd - g| / max(|fd|, |g|, GRAD_FLOOR)`
pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(GRAD_FLOOR)
}

/// Parameters that can influence the loss on `examples`: every dense tensor
/// plus the embedding rows the examples actually look up.
pub fn active_parameters(model: &ModelBundle, examples: &[Example]) -> Vec<usize> {
    let mut rows: Vec<usize> = examples
        .iter()
        .flat_map(|ex| match &ex.input {
            ModelInput::Tokens(seq) => seq
                .ids
                .iter()
                .zip(&seq.attention_mask)
                .filter(|(_, &m)| m)
                .map(|(&id, _)| id as usize)
                .collect::<Vec<_>>(),
            ModelInput::Features(f) => f.iter().map(|&id| id as usize).collect(),
        })
        .collect();
    rows.sort_unstable();
    rows.dedup();
    let mut out = Vec::new();
    for spec in model.params().specs() {
        if spec.name == "tok_emb" || spec.name == "emb" {
            let d = spec.dims[1];
            for &r in &rows {
                out.extend(spec.offset + r * d..spec.offset + (r + 1) * d);
            }
        } else {
            out.extend(spec.offset..spec.offset + spec.len());
        }
    }
    out
}

/// Compares analytic and central-difference gradients of the mean loss on
/// `samples` distinct parameters drawn from [`active_parameters`].
pub fn check_gradients(
    model: &ModelBundle,
    examples: &[Example],
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheck, ModelError> {
    let (_, grad) = loss_and_gradient(model, examples)?;
    let mut pool = active_parameters(model, examples);
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pool.truncate(samples);
    let mut m = model.clone();
    let mut report = GradCheck {
        checked: 0,
        worst_relative_error: 0.0,
        worst_index: 0,
        worst_tensor: String::new(),
    };
    for &i in &pool {
        let orig = m.params().data()[i];
        m.weights_mut()[i] = orig + h;
        let up = mean_loss(&m, examples)?;
        m.weights_mut()[i] = orig - h;
        let down = mean_loss(&m, examples)?;
        m.weights_mut()[i] = orig;
        let rel = relative_error((up - down) / (2.0 * h), grad[i]);
        if rel > report.worst_relative_error || report.checked == 0 {
            report.worst_relative_error = rel;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    report.worst_tensor = m
        .params()
        .specs()
        .iter()
        .rev()
        .find(|s| s.offset <= report.worst_index)
        .map(|s| s.name.clone())
        .unwrap_or_default();
    Ok(report)
}
