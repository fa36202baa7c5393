use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Statistics source for [`Var::batch_norm`].
#[derive(Debug, Clone)]
pub enum NormStats<T> {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with fixed (running) per-channel mean and variance.
    Fixed { mean: Tensor<T>, var: Tensor<T> },
}

/// Per-channel biased mean and variance computed in a training-mode pass.
#[derive(Debug, Clone)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel that contributed.
    pub count: usize,
}

/// `(channels, elements per channel per sample)` for `[N, C, ...]`.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(TensorError::invalid(format!(
            "batch_norm expects [N, C, ...], got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Per-channel normalization over axis 1, followed by `gamma · x̂ + beta`.
    ///
    /// Returns the batch moments when `stats` is [`NormStats::Batch`].
    pub fn batch_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        stats: NormStats<T>,
        eps: T,
    ) -> Result<(Var<'t, T>, Option<BatchMoments<T>>)> {
        let shape = self.shape();
        let (n, c, inner) = layout(&shape)?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::shape("batch_norm", &shape, &gamma.shape()));
        }
        let count = n * inner;
        if count == 0 {
            return Err(TensorError::invalid("batch_norm over empty batch"));
        }
        let tape = self.tape();
        let (mean, var, moments) = match stats {
            NormStats::Fixed { mean, var } => {
                if mean.numel() != c || var.numel() != c {
                    return Err(TensorError::shape("batch_norm stats", &shape, mean.shape()));
                }
                (mean.data().to_vec(), var.data().to_vec(), None)
            }
            NormStats::Batch => {
                let x = tape.value_of(self.id());
                let d = x.data();
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let s = &d[(i * c + ch) * inner..(i * c + ch + 1) * inner];
                        mean[ch] += s.iter().copied().sum::<T>();
                    }
                }
                let inv = T::one() / T::of(count as f64);
                mean.iter_mut().for_each(|m| *m *= inv);
                for i in 0..n {
                    for ch in 0..c {
                        let s = &d[(i * c + ch) * inner..(i * c + ch + 1) * inner];
                        var[ch] += s
                            .iter()
                            .map(|&v| (v - mean[ch]) * (v - mean[ch]))
                            .sum::<T>();
                    }
                }
                var.iter_mut().for_each(|v| *v *= inv);
                let m = BatchMoments {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, Some(m))
            }
        };
        let train = moments.is_some();
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let value = {
            let x = tape.value_of(self.id());
            let gv = tape.value_of(gamma.id());
            let bv = tape.value_of(beta.id());
            let mut out = x.data().to_vec();
            for i in 0..n {
                for ch in 0..c {
                    let (m, s, g, b) = (mean[ch], inv_std[ch], gv.data()[ch], bv.data()[ch]);
                    for v in &mut out[(i * c + ch) * inner..(i * c + ch + 1) * inner] {
                        *v = (*v - m) * s * g + b;
                    }
                }
            }
            Tensor::new(&shape, out)?
        };
        let y = tape.custom_op(&[self, gamma, beta], value, move |ctx| {
            let (x, gam, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            let (xd, gd) = (x.data(), g.data());
            let mut dx = vec![T::zero(); x.numel()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut sum_dxhat = vec![T::zero(); c];
            let mut sum_dxhat_xhat = vec![T::zero(); c];
            for i in 0..n {
                for ch in 0..c {
                    let r = (i * c + ch) * inner..(i * c + ch + 1) * inner;
                    for (&xv, &gv) in xd[r.clone()].iter().zip(&gd[r]) {
                        let xhat = (xv - mean[ch]) * inv_std[ch];
                        dgamma[ch] += gv * xhat;
                        dbeta[ch] += gv;
                        let dxhat = gv * gam.data()[ch];
                        sum_dxhat[ch] += dxhat;
                        sum_dxhat_xhat[ch] += dxhat * xhat;
                    }
                }
            }
            let m = T::of(count as f64);
            for i in 0..n {
                for ch in 0..c {
                    let r = (i * c + ch) * inner..(i * c + ch + 1) * inner;
                    let gam_c = gam.data()[ch];
                    for ((d, &xv), &gv) in dx[r.clone()].iter_mut().zip(&xd[r.clone()]).zip(&gd[r])
                    {
                        let dxhat = gv * gam_c;
                        *d = if train {
                            let xhat = (xv - mean[ch]) * inv_std[ch];
                            inv_std[ch] / m
                                * (m * dxhat - sum_dxhat[ch] - xhat * sum_dxhat_xhat[ch])
                        } else {
                            dxhat * inv_std[ch]
                        };
                    }
                }
            }
            vec![
                Some(Tensor::new(x.shape(), dx).expect("shape")),
                Some(Tensor::vector(dgamma)),
                Some(Tensor::vector(dbeta)),
            ]
        });
        Ok((y, moments))
    }
}
