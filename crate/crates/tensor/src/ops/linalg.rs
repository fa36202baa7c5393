use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;

impl<'t, T: Scalar> Var<'t, T> {
    /// 2-D product `op(self) · op(other)` where `op` optionally transposes.
    pub fn matmul_ex(self, other: Var<'t, T>, trans_a: bool, trans_b: bool) -> Result<Var<'t, T>> {
        self.check_same_tape(&other)?;
        let value = {
            let a = self.tape().value_of(self.id());
            let b = self.tape().value_of(other.id());
            a.matmul_ex(&b, trans_a, trans_b)?
        };
        Ok(self.tape().custom_op(&[self, other], value, move |ctx| {
            let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            // C = A B      : dA = G Bᵀ,   dB = Aᵀ G
            // C = A Bᵀ     : dA = G B,    dB = Gᵀ A
            // C = Aᵀ B     : dA = B Gᵀ,   dB = A G
            // C = Aᵀ Bᵀ    : dA = Bᵀ Gᵀ,  dB = Gᵀ Aᵀ
            let (ga, gb) = match (trans_a, trans_b) {
                (false, false) => (g.matmul_ex(b, false, true), a.matmul_ex(g, true, false)),
                (false, true) => (g.matmul_ex(b, false, false), g.matmul_ex(a, true, false)),
                (true, false) => (b.matmul_ex(g, false, true), a.matmul_ex(g, false, false)),
                (true, true) => (b.matmul_ex(g, true, true), g.matmul_ex(a, true, true)),
            };
            vec![
                Some(ga.expect("matmul backward")),
                Some(gb.expect("matmul backward")),
            ]
        }))
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_ex(other, false, false)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_ex(other, false, true)
    }

    /// Affine map `x · Wᵀ + b` with `W: [out, in]`, `b: [out]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let ws = weight.shape();
        let xs = self.shape();
        if ws.len() != 2 || xs.len() != 2 || xs[1] != ws[1] {
            return Err(TensorError::shape("linear", &xs, &ws));
        }
        let y = self.matmul_t(weight)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}
