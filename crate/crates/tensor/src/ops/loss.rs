use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Row-wise softmax of a `[B, C]` tensor, stabilized by subtracting each
/// row's maximum.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 || s[1] == 0 {
        return Err(TensorError::invalid(format!(
            "softmax expects [B, C], got {s:?}"
        )));
    }
    let c = s[1];
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(c) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let e: Vec<T> = row.iter().map(|&x| (x - m).exp()).collect();
        let z: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|x| x / z));
    }
    Tensor::new(s, out)
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Mean cross-entropy of `[B, C]` logits against integer labels.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(TensorError::shape(
                "softmax_cross_entropy",
                &shape,
                &[labels.len()],
            ));
        }
        let (b, c) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::invalid(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let (probs, loss) = {
            let x = self.tape().value_of(self.id());
            let mut loss = T::zero();
            for (row, &l) in x.data().chunks(c).zip(labels) {
                let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
                loss += lse - (row[l] - m);
            }
            (softmax_rows(&x)?, loss)
        };
        let inv_b = T::one() / T::of(b as f64);
        let labels = labels.to_vec();
        let value = Tensor::scalar(loss * inv_b);
        Ok(self.tape().custom_op(&[self], value, move |ctx| {
            let g = ctx.grad.data()[0] * inv_b;
            let mut d = probs.clone();
            for (row, &l) in d.data_mut().chunks_mut(c).zip(&labels) {
                row[l] -= T::one();
                row.iter_mut().for_each(|x| *x *= g);
            }
            vec![Some(d)]
        }))
    }
}
