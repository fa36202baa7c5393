use rand::Rng;
use viewadapt_tensor::{conv_out_len, BatchMoments, NormStats, Param, Scalar, Tape, Tensor, Var};

use super::{fan_in_bound, uniform, ForwardCtx, Module};
use crate::error::{Error, Result};

/// Affine layer `y = x Wᵀ + b` over rows of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> FcLayer<T> {
    pub fn new(name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = fan_in_bound(input);
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                uniform(&[output, input], bound, rng),
            ),
            bias: Param::new(format!("{name}.bias"), uniform(&[output], bound, rng)),
        }
    }

    /// All weights and biases zero, so the output is zero for any input.
    pub fn zeros(name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), Tensor::zeros(&[output, input])),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.linear(tape.param(&self.weight), Some(tape.param(&self.bias)))?)
    }
}

impl<T: Scalar> Module<T> for FcLayer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// 2-D convolution over `[N, C, H, W]` with square kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer<T> {
    pub weight: Param<T>,
    /// Absent when a batch norm follows and would cancel it.
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        kernels: usize,
        kernel_size: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = fan_in_bound(in_channels * kernel_size * kernel_size);
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                uniform(
                    &[kernels, in_channels, kernel_size, kernel_size],
                    bound,
                    rng,
                ),
            ),
            bias: Some(Param::new(
                format!("{name}.bias"),
                uniform(&[kernels], bound, rng),
            )),
            stride,
            pad,
        }
    }

    /// Same initialization as [`Conv2dLayer::new`] without the bias term.
    #[allow(clippy::too_many_arguments)]
    pub fn without_bias(
        name: &str,
        in_channels: usize,
        kernels: usize,
        kernel_size: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = fan_in_bound(in_channels * kernel_size * kernel_size);
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                uniform(
                    &[kernels, in_channels, kernel_size, kernel_size],
                    bound,
                    rng,
                ),
            ),
            bias: None,
            stride,
            pad,
        }
    }

    pub fn kernels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.value.shape()[2]
    }

    /// Spatial output size for an `h × w` input, if the kernel fits.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel_size();
        Some((
            conv_out_len(h, k, self.stride, self.pad)?,
            conv_out_len(w, k, self.stride, self.pad)?,
        ))
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.conv2d(
            tape.param(&self.weight),
            self.bias.as_ref().map(|b| tape.param(b)),
            self.stride,
            self.pad,
        )?)
    }
}

impl<T: Scalar> Module<T> for Conv2dLayer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        std::iter::once(&self.weight).chain(&self.bias).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        std::iter::once(&mut self.weight)
            .chain(&mut self.bias)
            .collect()
    }
}

/// Per-channel normalization with learned scale and shift.
///
/// Training passes normalize with batch statistics and record them in the
/// [`ForwardCtx`]; evaluation uses the running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T> {
    pub name: String,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Param::new(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Param::new(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: Param::new(format!("{name}.running_var"), Tensor::ones(&[channels])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<Var<'t, T>> {
        let stats = if ctx.train {
            NormStats::Batch
        } else {
            NormStats::Fixed {
                mean: self.running_mean.value.clone(),
                var: self.running_var.value.clone(),
            }
        };
        let (y, moments) = x.batch_norm(
            tape.param(&self.gamma),
            tape.param(&self.beta),
            stats,
            T::of(self.eps),
        )?;
        if let Some(m) = moments {
            ctx.record_moments(&self.name, m);
        }
        Ok(y)
    }

    /// Exponential update of the running statistics; the variance is stored
    /// unbiased.
    pub fn absorb(&mut self, m: &BatchMoments<T>) {
        let mo = T::of(self.momentum);
        let keep = T::one() - mo;
        let correction = if m.count > 1 {
            T::of(m.count as f64 / (m.count - 1) as f64)
        } else {
            T::one()
        };
        for (r, &b) in self.running_mean.value.data_mut().iter_mut().zip(&m.mean) {
            *r = keep * *r + mo * b;
        }
        for (r, &b) in self.running_var.value.data_mut().iter_mut().zip(&m.var) {
            *r = keep * *r + mo * b * correction;
        }
    }
}

impl<T: Scalar> Module<T> for BatchNormLayer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<&Param<T>> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNormLayer<T>> {
        vec![self]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPoolLayer {
    pub window: usize,
    pub stride: usize,
}

impl MaxPoolLayer {
    pub fn new(window: usize, stride: usize) -> Self {
        Self { window, stride }
    }

    pub fn forward<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.max_pool2d(self.window, self.stride)?)
    }
}

/// Inverted dropout: kept units are scaled by `1/(1 − p)` during training,
/// evaluation is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutLayer {
    pub p: f64,
}

impl DropoutLayer {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        Ok(Self { p })
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        x: Var<'t, T>,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<Var<'t, T>> {
        if !ctx.train || self.p == 0.0 {
            return Ok(x);
        }
        let shape = x.shape();
        let keep = 1.0 - self.p;
        let scale = T::of(1.0 / keep);
        let n: usize = shape.iter().product();
        let rng = ctx.rng();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let mask = x.tape().constant(Tensor::new(&shape, mask)?);
        Ok(x.mul(mask)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_fc_outputs_zero() {
        let fc = FcLayer::<f64>::zeros("fc", 4, 3);
        let tape = Tape::new();
        let x = tape.constant(
            Tensor::from_f64(&[2, 4], &[1.0, -2.0, 3.0, 0.5, 9.0, 1.0, 1.0, 1.0]).unwrap(),
        );
        let y = fc.forward(&tape, x).unwrap().value();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_conv_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2dLayer::<f64>::new("c", 1, 1, 1, 1, 0, &mut rng);
        conv.weight.value.fill(1.0);
        conv.bias.as_mut().unwrap().value.fill(0.0);
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[1, 1, 1, 1], &[0.7]).unwrap());
        assert_eq!(conv.forward(&tape, x).unwrap().value().data(), &[0.7]);
    }

    #[test]
    fn pool_of_constant_is_constant() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 2, 4, 4], 3.25));
        let y = MaxPoolLayer::new(2, 2).forward(x).unwrap().value();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[3, 3], 2.0));
        let mut ctx = ForwardCtx::eval();
        let y = DropoutLayer::new(0.5)
            .unwrap()
            .forward(x, &mut ctx)
            .unwrap();
        assert_eq!(y.id(), x.id());
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        assert!(DropoutLayer::new(1.0).is_err());
        assert!(DropoutLayer::new(-0.1).is_err());
    }

    #[test]
    fn batch_norm_running_stats_absorb() {
        let mut bn = BatchNormLayer::<f64>::new("bn", 1);
        let m = BatchMoments {
            mean: vec![2.0],
            var: vec![1.0],
            count: 5,
        };
        bn.absorb(&m);
        assert!((bn.running_mean.value.data()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var.value.data()[0] - (0.9 + 0.1 * 1.25)).abs() < 1e-15);
    }
}
