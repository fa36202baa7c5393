use serde::{Deserialize, Serialize};
use viewadapt_tensor::{Param, Scalar, Tensor};

use crate::error::{Error, Result};

/// Global L2 norm over all parameter gradients.
pub fn global_grad_norm<T: Scalar>(params: &[&mut Param<T>]) -> f64 {
    params
        .iter()
        .map(|p| {
            p.grad
                .data()
                .iter()
                .map(|g| g.as_f64() * g.as_f64())
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the scale that was applied (1 when the norm was within bounds).
pub fn clip_gradients<T: Scalar>(params: &mut [&mut Param<T>], max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for p in params.iter_mut() {
        p.grad.scale_in_place(T::of(scale));
    }
    scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam moments for an ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[&Param<T>]) -> Self {
        Self {
            config,
            step: 0,
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    /// One update from the gradients currently stored in `params`.
    pub fn update(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.value.shape() != m.shape() {
                return Err(Error::State(format!(
                    "parameter `{}` changed shape",
                    p.name
                )));
            }
            let pv = p.value.data_mut();
            for (((w, &g), mi), vi) in pv
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + ob1 * g;
                *vi = b2 * *vi + ob2 * g * g;
                let mhat = mi.as_f64() / bc1;
                let vhat = vi.as_f64() / bc2;
                *w -= T::of(c.lr * mhat / (vhat.sqrt() + c.eps));
            }
        }
        Ok(())
    }
}
