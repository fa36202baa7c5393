use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

// fallible, so these cannot be the std operator traits
#[allow(clippy::should_implement_trait)]
impl<'t, T: Scalar> Var<'t, T> {
    fn binary<F, B>(
        self,
        other: Var<'t, T>,
        op: &'static str,
        f: F,
        backward: B,
    ) -> Result<Var<'t, T>>
    where
        F: Fn(T, T) -> T,
        B: Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> + 'static,
    {
        self.check_same_tape(&other)?;
        let value = {
            let a = self.tape().value_of(self.id());
            let b = self.tape().value_of(other.id());
            a.broadcast_zip(&b, op, f)?
        };
        Ok(self.tape().custom_op(&[self, other], value, move |ctx| {
            let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
            let (ga, gb) = backward(ctx.grad, a, b).expect("broadcast shapes validated in forward");
            vec![
                Some(ga.reduce_to(a.shape()).expect("reducible")),
                Some(gb.reduce_to(b.shape()).expect("reducible")),
            ]
        }))
    }

    /// Broadcasting `self + other`.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(
            other,
            "add",
            |a, b| a + b,
            |g, _, _| Ok((g.clone(), g.clone())),
        )
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(
            other,
            "sub",
            |a, b| a - b,
            |g, _, _| Ok((g.clone(), g.map(|x| -x))),
        )
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(
            other,
            "mul",
            |a, b| a * b,
            |g, a, b| {
                Ok((
                    g.broadcast_zip(b, "mul", |g, b| g * b)?,
                    g.broadcast_zip(a, "mul", |g, a| g * a)?,
                ))
            },
        )
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |g, a, b| {
                let ga = g.broadcast_zip(b, "div", |g, b| g / b)?;
                let ab = a.broadcast_zip(b, "div", |a, b| a / (b * b))?;
                let gb = g.broadcast_zip(&ab, "div", |g, q| -g * q)?;
                Ok((ga, gb))
            },
        )
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.unary(|x| Ok(x.map(|v| -v)), |g, _, _| g.map(|v| -v))
    }

    /// Multiplies by a constant.
    pub fn scale(self, c: T) -> Result<Var<'t, T>> {
        self.unary(
            move |x| Ok(x.map(|v| v * c)),
            move |g, _, _| g.map(|v| v * c),
        )
    }

    /// Adds a constant.
    pub fn add_scalar(self, c: T) -> Result<Var<'t, T>> {
        self.unary(move |x| Ok(x.map(|v| v + c)), |g, _, _| g.clone())
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary(
            |x| Ok(x.map(sigmoid)),
            |g, _, y| {
                g.zip_map(y, |g, y| g * y * (T::one() - y))
                    .expect("same shape")
            },
        )
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        self.unary(
            |x| Ok(x.map(|v| v.tanh())),
            |g, _, y| {
                g.zip_map(y, |g, y| g * (T::one() - y * y))
                    .expect("same shape")
            },
        )
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary(
            |x| Ok(x.map(|v| if v > T::zero() { v } else { T::zero() })),
            |g, x, _| {
                g.zip_map(x, |g, x| if x > T::zero() { g } else { T::zero() })
                    .expect("same shape")
            },
        )
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary(
            |x| Ok(x.map(|v| v.exp())),
            |g, _, y| g.zip_map(y, |g, y| g * y).expect("same shape"),
        )
    }

    pub fn log(self) -> Result<Var<'t, T>> {
        self.unary(
            |x| Ok(x.map(|v| v.ln())),
            |g, x, _| g.zip_map(x, |g, x| g / x).expect("same shape"),
        )
    }

    /// Elementwise square.
    pub fn square(self) -> Result<Var<'t, T>> {
        self.unary(
            |x| Ok(x.map(|v| v * v)),
            |g, x, _| g.zip_map(x, |g, x| g * (x + x)).expect("same shape"),
        )
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
