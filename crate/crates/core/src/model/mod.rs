//! Tiny transformer encoder trained with a masked-language-model objective.
//!
//! Forward and backward passes are written out by hand over `ndarray`
//! matrices. The model is generic over the parameter precision: training
//! runs in `f32`, gradient checks run the same code in `f64`. Log-softmax
//! and loss reductions are always carried out in `f64`.

mod adam;
mod checkpoint;
mod encoder;
mod gradcheck;
mod masking;
mod ops;
mod params;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use encoder::{Mode, MlmOutput};
pub use gradcheck::{finite_difference_check, randomize_params};
pub use masking::{mask_batch, mask_rows, mask_sentence, MaskedBatch, MaskedRow, MASK_PROB};
pub use params::{LayerParams, Params};

/// Floating-point type the model can be instantiated with.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const DTYPE: &'static str;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 128,
            heads: 2,
            ffn: 512,
            vocab_size: 16_384 + 5,
            max_len: 128,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::config("vocabulary is empty"));
        }
        if self.max_len == 0 || self.ffn == 0 {
            return Err(Error::config("max_len and ffn must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Closed-form number of scalar parameters (output head tied to the
    /// token embeddings).
    pub fn parameter_count(&self) -> usize {
        let (h, f, v, l) = (self.hidden, self.ffn, self.vocab_size, self.max_len);
        let embeddings = v * h + l * h + 2 * h;
        let attention = 4 * (h * h + h);
        let feed_forward = h * f + f + f * h + h;
        let per_layer = attention + feed_forward + 4 * h;
        let head = h * h + h + 2 * h + v;
        embeddings + self.layers * per_layer + head
    }
}

/// Parameters, optimizer state and update counter of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<F: Real = f32> {
    pub config: ModelConfig,
    pub params: Params<F>,
    pub adam: Adam<F>,
    pub step_count: u64,
}

impl<F: Real> ModelState<F> {
    /// Seeded initialization: weights ~ N(0, 0.02²), biases 0, layer-norm
    /// gains 1.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config);
        let adam = Adam::new(AdamConfig::default(), &params);
        Ok(Self {
            config,
            params,
            adam,
            step_count: 0,
        })
    }

    /// All weights and biases zero, layer-norm gains one: every output
    /// distribution is uniform over the vocabulary.
    pub fn uniform(config: ModelConfig) -> Result<Self> {
        let mut s = Self::init(config)?;
        for (name, data) in s.params.tensors_mut() {
            let fill = if name.ends_with("_gain") { F::one() } else { F::zero() };
            data.iter_mut().for_each(|x| *x = fill);
        }
        Ok(s)
    }

    /// Adam update with the given learning rate; fails on the first
    /// non-finite gradient entry, naming the parameter.
    pub fn optimizer_step(&mut self, grads: &Params<F>, lr: f64) -> Result<()> {
        self.adam.step(&mut self.params, grads, lr)?;
        self.step_count += 1;
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.adam.reset();
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, _, data) in self.params.tensors() {
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }
}
