// SPDX-License-Identifier: Apache-2.0

//! Flat parameter storage. Every tensor of a model lives in one contiguous
//! `Vec<f64>` so optimisers and gradient checks can treat the model as a
//! single vector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    /// uniform(-0.05, 0.05)
    Embedding,
    /// uniform(-l, l) with l = sqrt(6 / (fan_in + fan_out)), dims = [fan_in, fan_out]
    Glorot,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    specs: Vec<TensorSpec>,
    inits: Vec<Init>,
    data: Vec<f64>,
}

impl ParamStore {
    pub(crate) fn new() -> Self {
        Self {
            specs: Vec::new(),
            inits: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Appends a zero-filled tensor and returns its offset.
    pub(crate) fn register(&mut self, name: impl Into<String>, dims: &[usize], init: Init) -> usize {
        let offset = self.data.len();
        let spec = TensorSpec {
            name: name.into(),
            dims: dims.to_vec(),
            offset,
        };
        self.data.resize(offset + spec.len(), 0.0);
        self.specs.push(spec);
        self.inits.push(init);
        offset
    }

    /// Fills every tensor from `rng` in registration order, then rounds to
    /// single precision so stored and in-memory weights agree exactly.
    pub(crate) fn initialize(&mut self, rng: &mut ChaCha8Rng) {
        for (spec, init) in self.specs.iter().zip(&self.inits) {
            let slot = &mut self.data[spec.offset..spec.offset + spec.len()];
            match init {
                Init::Zeros => slot.fill(0.0),
                Init::Ones => slot.fill(1.0),
                Init::Embedding => slot.iter_mut().for_each(|w| *w = rng.random_range(-0.05..0.05)),
                Init::Glorot => {
                    let limit = (6.0 / (spec.dims[0] + spec.dims[1]) as f64).sqrt();
                    slot.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
                }
            }
        }
        self.round_to_f32();
    }

    pub(crate) fn round_to_f32(&mut self) {
        for w in &mut self.data {
            *w = f64::from(*w as f32);
        }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.data[s.offset..s.offset + s.len()])
    }
}
