use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::{numel, Tensor};

impl<'t, T: Scalar> Var<'t, T> {
    /// Sum of all elements (scalar result).
    pub fn sum(self) -> Result<Var<'t, T>> {
        self.unary(
            |x| Ok(Tensor::scalar(x.sum())),
            |g, x, _| Tensor::full(x.shape(), g.data()[0]),
        )
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = self.shape().iter().product::<usize>();
        if n == 0 {
            return Err(TensorError::invalid("mean of empty tensor"));
        }
        let inv = T::one() / T::of(n as f64);
        self.unary(
            move |x| Ok(Tensor::scalar(x.sum() * inv)),
            move |g, x, _| Tensor::full(x.shape(), g.data()[0] * inv),
        )
    }

    /// Maximum element. The gradient goes to the first maximal entry.
    pub fn max(self) -> Result<Var<'t, T>> {
        let (idx, _) = {
            let v = self.tape().value_of(self.id());
            if v.numel() == 0 {
                return Err(TensorError::invalid("max of empty tensor"));
            }
            v.data()
                .iter()
                .enumerate()
                .fold((0usize, T::neg_infinity()), |(bi, bv), (i, &x)| {
                    if x > bv {
                        (i, x)
                    } else {
                        (bi, bv)
                    }
                })
        };
        self.unary(
            move |x| Ok(Tensor::scalar(x.data()[idx])),
            move |g, x, _| {
                let mut out = Tensor::zeros(x.shape());
                out.data_mut()[idx] = g.data()[0];
                out
            },
        )
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::invalid(format!(
                "axis {axis} for shape {shape:?}"
            )));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        self.unary(
            move |x| {
                let d = x.data();
                let mut out = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
                Tensor::new(&out_shape, out)
            },
            move |g, x, _| {
                let gd = g.data();
                let mut out = Vec::with_capacity(x.numel());
                for o in 0..outer {
                    for _ in 0..len {
                        out.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                Tensor::new(x.shape(), out).expect("shape")
            },
        )
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let len = *shape
            .get(axis)
            .ok_or_else(|| TensorError::invalid(format!("axis {axis} for shape {shape:?}")))?;
        if len == 0 {
            return Err(TensorError::invalid("mean over empty axis"));
        }
        self.sum_axis(axis)?.scale(T::one() / T::of(len as f64))
    }
}
