use rand::Rng;
use viewadapt_tensor::{Param, Scalar, Tape, Tensor, Var};

use super::{fan_in_bound, uniform, Module};
use crate::error::{Error, Result};

/// Fused LSTM cell.
///
/// `z` holds the gate pre-activations `[B, 4H]` in the order input, forget,
/// candidate, output. Returns `[B, 2H]` with `h` in the first half and the
/// new cell state `c` in the second:
/// `c = σ(f)⊙c_prev + σ(i)⊙tanh(g)`, `h = σ(o)⊙tanh(c)`.
pub fn lstm_cell<'t, T: Scalar>(z: Var<'t, T>, c_prev: Var<'t, T>) -> Result<Var<'t, T>> {
    let zs = z.shape();
    let cs = c_prev.shape();
    if zs.len() != 2 || cs.len() != 2 || zs[0] != cs[0] || zs[1] != 4 * cs[1] {
        return Err(Error::invalid(format!(
            "lstm_cell expects z [B, 4H] and c [B, H], got {zs:?} and {cs:?}"
        )));
    }
    let (b, h) = (cs[0], cs[1]);
    let value = {
        let zv = z.value();
        let cv = c_prev.value();
        let mut out = vec![T::zero(); b * 2 * h];
        for r in 0..b {
            let zr = &zv.data()[r * 4 * h..(r + 1) * 4 * h];
            let cr = &cv.data()[r * h..(r + 1) * h];
            let (ho, co) = out[r * 2 * h..(r + 1) * 2 * h].split_at_mut(h);
            for k in 0..h {
                let g = gates(zr, h, k);
                let c = g.f * cr[k] + g.i * g.g;
                co[k] = c;
                ho[k] = g.o * c.tanh();
            }
        }
        Tensor::new(&[b, 2 * h], out)?
    };
    Ok(z.tape().custom_op(&[z, c_prev], value, move |ctx| {
        let (zv, cv, out, grad) = (
            ctx.inputs[0].data(),
            ctx.inputs[1].data(),
            ctx.output.data(),
            ctx.grad.data(),
        );
        let mut dz = vec![T::zero(); b * 4 * h];
        let mut dc_prev = vec![T::zero(); b * h];
        for r in 0..b {
            let zr = &zv[r * 4 * h..(r + 1) * 4 * h];
            let dzr = &mut dz[r * 4 * h..(r + 1) * 4 * h];
            for k in 0..h {
                let g = gates(zr, h, k);
                let c = out[r * 2 * h + h + k];
                let tc = c.tanh();
                let gh = grad[r * 2 * h + k];
                let dc = grad[r * 2 * h + h + k] + gh * g.o * (T::one() - tc * tc);
                let cp = cv[r * h + k];
                dzr[k] = dc * g.g * g.i * (T::one() - g.i);
                dzr[h + k] = dc * cp * g.f * (T::one() - g.f);
                dzr[2 * h + k] = dc * g.i * (T::one() - g.g * g.g);
                dzr[3 * h + k] = gh * tc * g.o * (T::one() - g.o);
                dc_prev[r * h + k] = dc * g.f;
            }
        }
        vec![
            Some(Tensor::new(&[b, 4 * h], dz).expect("shape")),
            Some(Tensor::new(&[b, h], dc_prev).expect("shape")),
        ]
    }))
}

struct Gates<T> {
    i: T,
    f: T,
    g: T,
    o: T,
}

fn gates<T: Scalar>(z: &[T], h: usize, k: usize) -> Gates<T> {
    Gates {
        i: sigmoid(z[k]),
        f: sigmoid(z[h + k]),
        g: z[2 * h + k].tanh(),
        o: sigmoid(z[3 * h + k]),
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Hidden and cell state of one LSTM layer, each `[B, H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState<'t, T: Scalar> {
    pub h: Var<'t, T>,
    pub c: Var<'t, T>,
}

impl<'t, T: Scalar> LstmState<'t, T> {
    pub fn zeros(tape: &'t Tape<T>, batch: usize, hidden: usize) -> Self {
        Self {
            h: tape.constant(Tensor::zeros(&[batch, hidden])),
            c: tape.constant(Tensor::zeros(&[batch, hidden])),
        }
    }
}

/// Single LSTM layer with weights `w_ih [4H, in]`, `w_hh [4H, H]` and a
/// shared bias `[4H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<T> {
    pub w_ih: Param<T>,
    pub w_hh: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> LstmLayer<T> {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = fan_in_bound(hidden);
        Self {
            w_ih: Param::new(
                format!("{name}.w_ih"),
                uniform(&[4 * hidden, input], bound, rng),
            ),
            w_hh: Param::new(
                format!("{name}.w_hh"),
                uniform(&[4 * hidden, hidden], bound, rng),
            ),
            bias: Param::new(format!("{name}.bias"), uniform(&[4 * hidden], bound, rng)),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.value.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.value.shape()[1]
    }

    /// One time step on `x [B, in]`.
    pub fn step<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        state: LstmState<'t, T>,
    ) -> Result<LstmState<'t, T>> {
        let zx = x.linear(tape.param(&self.w_ih), Some(tape.param(&self.bias)))?;
        let z = zx.add(state.h.matmul_t(tape.param(&self.w_hh))?)?;
        self.finish_step(z, state.c)
    }

    fn finish_step<'t>(&self, z: Var<'t, T>, c: Var<'t, T>) -> Result<LstmState<'t, T>> {
        let hd = self.hidden_size();
        let hc = lstm_cell(z, c)?;
        Ok(LstmState {
            h: hc.slice(1, 0, hd)?,
            c: hc.slice(1, hd, 2 * hd)?,
        })
    }

    /// Runs `steps` time steps over time-major input `xs [steps·B, in]` from
    /// a zero state and returns the hidden outputs `[steps·B, H]` in the
    /// same layout.
    pub fn forward_sequence<'t>(
        &self,
        tape: &'t Tape<T>,
        xs: Var<'t, T>,
        steps: usize,
    ) -> Result<Var<'t, T>> {
        let shape = xs.shape();
        if shape.len() != 2 || steps == 0 || !shape[0].is_multiple_of(steps) || shape[1] != self.input_size()
        {
            return Err(Error::invalid(format!(
                "lstm expects [steps·B, {}] with {steps} steps, got {shape:?}",
                self.input_size()
            )));
        }
        let b = shape[0] / steps;
        let hd = self.hidden_size();
        let zx = xs.linear(tape.param(&self.w_ih), Some(tape.param(&self.bias)))?;
        let w_hh = tape.param(&self.w_hh);
        let mut outputs = Vec::with_capacity(steps);
        let mut c = tape.constant(Tensor::zeros(&[b, hd]));
        let mut h: Option<Var<'t, T>> = None;
        for t in 0..steps {
            let mut z = zx.slice(0, t * b, (t + 1) * b)?;
            // a zero initial state contributes nothing through w_hh
            if let Some(h) = h {
                z = z.add(h.matmul_t(w_hh)?)?;
            }
            let next = self.finish_step(z, c)?;
            outputs.push(next.h);
            h = Some(next.h);
            c = next.c;
        }
        Ok(Var::concat(&outputs, 0)?)
    }
}

impl<T: Scalar> Module<T> for LstmLayer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w_ih, &self.w_hh, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}
