//! Layers, parameter containers and optimization primitives.
//!
//! Layers own their [`Param`]s and bind them to a [`Tape`] on every forward
//! pass. Training-mode state (dropout masks, batch-norm moments) flows
//! through a [`ForwardCtx`], so forward passes only need `&self`.

mod check;
mod layers;
mod lstm;
mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewadapt_tensor::{BatchMoments, Param, Scalar, Tape, Tensor};

use crate::error::{Error, Result};

pub use check::{check_param_grads, copy_params, ParamCheck};
pub use layers::{BatchNormLayer, Conv2dLayer, DropoutLayer, FcLayer, MaxPoolLayer};
pub use lstm::{lstm_cell, LstmLayer, LstmState};
pub use optim::{clip_gradients, global_grad_norm, AdamConfig, AdamState};

/// Anything that owns trainable parameters and persistent buffers.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    /// Non-trainable state saved with the parameters (running statistics).
    fn buffers(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Batch-norm layers whose running statistics absorb training moments.
    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNormLayer<T>> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    /// Adds the gradients recorded on `tape` into every bound parameter.
    fn collect_grads(&mut self, tape: &Tape<T>) -> Result<()> {
        for p in self.params_mut() {
            tape.accumulate_param_grad(p)?;
        }
        Ok(())
    }

    /// Folds the batch moments recorded in a training pass into the running
    /// statistics of the matching batch-norm layers.
    fn absorb_moments(&mut self, moments: &[(String, BatchMoments<T>)]) -> Result<()> {
        let mut layers = self.batch_norms_mut();
        for (name, m) in moments {
            let layer = layers
                .iter_mut()
                .find(|l| &l.name == name)
                .ok_or_else(|| Error::State(format!("no batch-norm layer named `{name}`")))?;
            layer.absorb(m);
        }
        Ok(())
    }
}

/// Per-pass mode and training-time side channels.
#[derive(Debug, Clone)]
pub struct ForwardCtx<T> {
    pub train: bool,
    rng: ChaCha8Rng,
    moments: Vec<(String, BatchMoments<T>)>,
}

impl<T: Scalar> ForwardCtx<T> {
    /// Evaluation mode: dropout off, batch norm on running statistics.
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            moments: Vec::new(),
        }
    }

    /// Training mode with a seeded dropout stream.
    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            moments: Vec::new(),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn record_moments(&mut self, name: &str, m: BatchMoments<T>) {
        self.moments.push((name.to_string(), m));
    }

    pub fn moments(&self) -> &[(String, BatchMoments<T>)] {
        &self.moments
    }

    pub fn take_moments(&mut self) -> Vec<(String, BatchMoments<T>)> {
        std::mem::take(&mut self.moments)
    }
}

/// Uniform samples in `[-bound, bound]`.
pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if bound > 0.0 {
                T::of(rng.random_range(-bound..=bound))
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data length")
}

/// The default weight bound `1/√fan_in`.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_respects_bound_and_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let x: Tensor<f32> = uniform(&[4, 5], 0.5, &mut a);
        let y: Tensor<f32> = uniform(&[4, 5], 0.5, &mut b);
        assert_eq!(x, y);
        assert!(x.data().iter().all(|v| v.abs() <= 0.5));
    }
}
