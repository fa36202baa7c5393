//! Spatial ops on `[N, C, H, W]` tensors.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Output length of a strided window sweep: `⌊(n + 2·pad − k) / stride⌋ + 1`.
pub fn conv_out_len(n: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || n + 2 * pad < kernel {
        return None;
    }
    Some((n + 2 * pad - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source index (within one image) for a column-matrix entry, if inside.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let cols = self.cols();
        for ci in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let src = (ci * self.h + iy as usize) * self.w + ix as usize;
                            f(row * cols + oy * self.ow + ox, src);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        cols.fill(T::zero());
        self.for_each_tap(|dst, src| cols[dst] = img[src]);
    }

    fn col2im<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        self.for_each_tap(|dst, src| img[src] += cols[dst]);
    }
}

fn expect_4d(op: &'static str, s: &[usize]) -> Result<()> {
    if s.len() != 4 {
        return Err(TensorError::invalid(format!(
            "{op} expects [N, C, H, W], got {s:?}"
        )));
    }
    Ok(())
}

impl<'t, T: Scalar> Var<'t, T> {
    /// 2-D cross-correlation with weights `[K, C, kh, kw]` and optional bias
    /// `[K]`, symmetric zero padding.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let ws = weight.shape();
        expect_4d("conv2d", &xs)?;
        if ws.len() != 4 || ws[1] != xs[1] {
            return Err(TensorError::shape("conv2d", &xs, &ws));
        }
        if let Some(b) = &bias {
            if b.shape() != [ws[0]] {
                return Err(TensorError::shape("conv2d bias", &b.shape(), &[ws[0]]));
            }
        }
        let (n, k) = (xs[0], ws[0]);
        let oh = conv_out_len(xs[2], ws[2], stride, pad);
        let ow = conv_out_len(xs[3], ws[3], stride, pad);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(TensorError::invalid(format!(
                "conv2d: input {xs:?} smaller than kernel {ws:?} (stride {stride}, pad {pad})"
            )));
        };
        let g = ConvGeom {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            oh,
            ow,
        };
        let tape = self.tape();
        let value = {
            let x = tape.value_of(self.id());
            let wv = tape.value_of(weight.id());
            let bv = bias.map(|b| tape.value_of(b.id()).clone());
            let img_len = g.c * g.h * g.w;
            let out_len = k * g.cols();
            let mut cols = vec![T::zero(); g.rows() * g.cols()];
            let mut out = vec![T::zero(); n * out_len];
            for i in 0..n {
                g.im2col(&x.data()[i * img_len..(i + 1) * img_len], &mut cols);
                let o = &mut out[i * out_len..(i + 1) * out_len];
                if let Some(b) = &bv {
                    for (kk, chunk) in o.chunks_mut(g.cols()).enumerate() {
                        chunk.fill(b.data()[kk]);
                    }
                }
                let beta = if bv.is_some() { T::one() } else { T::zero() };
                T::gemm(
                    k,
                    g.rows(),
                    g.cols(),
                    T::one(),
                    wv.data(),
                    g.rows() as isize,
                    1,
                    &cols,
                    g.cols() as isize,
                    1,
                    beta,
                    o,
                    g.cols() as isize,
                    1,
                );
            }
            Tensor::new(&[n, k, oh, ow], out)?
        };
        let mut inputs = vec![self, weight];
        let has_bias = bias.is_some();
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(tape.custom_op(&inputs, value, move |ctx| {
            let (x, wv, gr) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            let img_len = g.c * g.h * g.w;
            let out_len = k * g.cols();
            let mut cols = vec![T::zero(); g.rows() * g.cols()];
            let mut dcols = vec![T::zero(); g.rows() * g.cols()];
            let mut dx = vec![T::zero(); x.numel()];
            let mut dw = vec![T::zero(); wv.numel()];
            let mut db = vec![T::zero(); k];
            for i in 0..n {
                let gi = &gr.data()[i * out_len..(i + 1) * out_len];
                g.im2col(&x.data()[i * img_len..(i + 1) * img_len], &mut cols);
                // dW += G_i · colsᵀ
                T::gemm(
                    k,
                    g.cols(),
                    g.rows(),
                    T::one(),
                    gi,
                    g.cols() as isize,
                    1,
                    &cols,
                    1,
                    g.cols() as isize,
                    T::one(),
                    &mut dw,
                    g.rows() as isize,
                    1,
                );
                // dcols = Wᵀ · G_i
                T::gemm(
                    g.rows(),
                    k,
                    g.cols(),
                    T::one(),
                    wv.data(),
                    1,
                    g.rows() as isize,
                    gi,
                    g.cols() as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    g.cols() as isize,
                    1,
                );
                g.col2im(&dcols, &mut dx[i * img_len..(i + 1) * img_len]);
                if has_bias {
                    for (kk, chunk) in gi.chunks(g.cols()).enumerate() {
                        db[kk] += chunk.iter().copied().sum::<T>();
                    }
                }
            }
            let mut out = vec![
                Some(Tensor::new(x.shape(), dx).expect("shape")),
                Some(Tensor::new(wv.shape(), dw).expect("shape")),
            ];
            if has_bias {
                out.push(Some(Tensor::vector(db)));
            }
            out
        }))
    }

    /// Max pooling with a square window and no padding.
    pub fn max_pool2d(self, window: usize, stride: usize) -> Result<Var<'t, T>> {
        let xs = self.shape();
        expect_4d("max_pool2d", &xs)?;
        let (Some(oh), Some(ow)) = (
            conv_out_len(xs[2], window, stride, 0),
            conv_out_len(xs[3], window, stride, 0),
        ) else {
            return Err(TensorError::invalid(format!(
                "max_pool2d: window {window} larger than input {xs:?}"
            )));
        };
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (value, argmax) = {
            let x = self.tape().value_of(self.id());
            let d = x.data();
            let mut out = Vec::with_capacity(n * c * oh * ow);
            let mut arg = Vec::with_capacity(n * c * oh * ow);
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = base + oy * stride * w + ox * stride;
                        for ky in 0..window {
                            for kx in 0..window {
                                let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                                if d[idx] > d[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(d[best]);
                        arg.push(best);
                    }
                }
            }
            (Tensor::new(&[n, c, oh, ow], out)?, arg)
        };
        self.unary(
            move |_| Ok(value),
            move |g, x, _| {
                let mut dx = Tensor::zeros(x.shape());
                let dd = dx.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    dd[src] += gv;
                }
                dx
            },
        )
    }

    /// Bilinear resampling to `[out_h, out_w]` with half-pixel centers and
    /// edge clamping. Resizing to the same size is the identity.
    pub fn resize_bilinear(self, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        let xs = self.shape();
        expect_4d("resize_bilinear", &xs)?;
        if out_h == 0 || out_w == 0 || xs[2] == 0 || xs[3] == 0 {
            return Err(TensorError::invalid(format!(
                "resize {xs:?} to {out_h}x{out_w}"
            )));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let ys = bilinear_taps(h, out_h);
        let xs_t = bilinear_taps(w, out_w);
        let value = {
            let x = self.tape().value_of(self.id());
            let d = x.data();
            let mut out = Vec::with_capacity(n * c * out_h * out_w);
            for plane in 0..n * c {
                let p = &d[plane * h * w..(plane + 1) * h * w];
                for &(y0, y1, wy) in &ys {
                    for &(x0, x1, wx) in &xs_t {
                        let top = p[y0 * w + x0] * (T::one() - wx) + p[y0 * w + x1] * wx;
                        let bot = p[y1 * w + x0] * (T::one() - wx) + p[y1 * w + x1] * wx;
                        out.push(top * (T::one() - wy) + bot * wy);
                    }
                }
            }
            Tensor::new(&[n, c, out_h, out_w], out)?
        };
        self.unary(
            move |_| Ok(value),
            move |g, x, _| {
                let mut dx = Tensor::zeros(x.shape());
                let dd = dx.data_mut();
                let gd = g.data();
                let mut k = 0;
                for plane in 0..n * c {
                    let base = plane * h * w;
                    for &(y0, y1, wy) in &ys {
                        for &(x0, x1, wx) in &xs_t {
                            let gv = gd[k];
                            k += 1;
                            let (oy, ox) = (T::one() - wy, T::one() - wx);
                            dd[base + y0 * w + x0] += gv * oy * ox;
                            dd[base + y0 * w + x1] += gv * oy * wx;
                            dd[base + y1 * w + x0] += gv * wy * ox;
                            dd[base + y1 * w + x1] += gv * wy * wx;
                        }
                    }
                }
                dx
            },
        )
    }
}

fn bilinear_taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<(usize, usize, T)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, T::of(src - i0 as f64))
        })
        .collect()
}
