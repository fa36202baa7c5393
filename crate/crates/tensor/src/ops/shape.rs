use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::{numel, Tensor};

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let shape = shape.to_vec();
        self.unary(
            |x| x.reshape(&shape),
            |g, x, _| g.reshape(x.shape()).expect("same numel"),
        )
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            if a < inverse.len() {
                inverse[a] = i;
            }
        }
        let axes = axes.to_vec();
        self.unary(
            |x| x.permute(&axes),
            move |g, _, _| g.permute(&inverse).expect("valid inverse permutation"),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let n = self.shape().len();
        if n < 2 {
            return Err(TensorError::invalid("transpose needs at least 2 dims"));
        }
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 1, n - 2);
        self.permute(&axes)
    }

    /// `self[.., start..end, ..]` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(TensorError::invalid(format!(
                "slice {start}..{end} on axis {axis} of shape {shape:?}"
            )));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let len = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = end - start;
        let out_shape2 = out_shape.clone();
        self.unary(
            move |x| {
                let d = x.data();
                let mut out = Vec::with_capacity(numel(&out_shape));
                for o in 0..outer {
                    let base = o * len * inner;
                    out.extend_from_slice(&d[base + start * inner..base + end * inner]);
                }
                Tensor::new(&out_shape, out)
            },
            move |g, x, _| {
                let mut out = Tensor::zeros(x.shape());
                let od = out.data_mut();
                let gd = g.data();
                let w = (end - start) * inner;
                for o in 0..outer {
                    let base = o * len * inner;
                    od[base + start * inner..base + end * inner]
                        .copy_from_slice(&gd[o * w..(o + 1) * w]);
                }
                debug_assert_eq!(g.shape(), &out_shape2[..]);
                out
            },
        )
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat of zero tensors"))?;
        let tape = first.tape();
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape()).collect();
        let base = &shapes[0];
        if axis >= base.len() {
            return Err(TensorError::invalid(format!(
                "concat axis {axis} for shape {base:?}"
            )));
        }
        for (p, s) in parts.iter().zip(&shapes) {
            first.check_same_tape(p)?;
            let same = s.len() == base.len()
                && s.iter()
                    .zip(base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(TensorError::shape("concat", base, s));
            }
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let lens: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let value = {
            let vals: Vec<_> = parts.iter().map(|p| tape.value_of(p.id())).collect();
            let mut out = Vec::with_capacity(numel(&out_shape));
            for o in 0..outer {
                for (v, &l) in vals.iter().zip(&lens) {
                    out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
                }
            }
            Tensor::new(&out_shape, out)?
        };
        Ok(tape.custom_op(parts, value, move |ctx| {
            let gd = ctx.grad.data();
            let mut grads: Vec<Vec<T>> = ctx
                .inputs
                .iter()
                .map(|x| Vec::with_capacity(x.numel()))
                .collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (gv, &l) in grads.iter_mut().zip(&lens) {
                    gv.extend_from_slice(&gd[pos..pos + l * inner]);
                    pos += l * inner;
                }
            }
            grads
                .into_iter()
                .zip(&ctx.inputs)
                .map(|(g, x)| Some(Tensor::new(x.shape(), g).expect("shape")))
                .collect()
        }))
    }
}
