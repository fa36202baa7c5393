//! Differentiable view-transform layers.
//!
//! Both ops evaluate the geometry in double precision regardless of the
//! network precision, and both reduce to the exact identity when the view
//! parameters are all zero.

use nalgebra::{Matrix3, Vector3};
use viewadapt_tensor::{Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::geometry::{
    apply_view_transform, backprop_view_transform, compose_rotation, rotation_jacobian, AngleParam,
    ViewParams,
};
use crate::skeleton::SkeletonFrame;

/// Regressed parameters that blew up are a training failure, not bad input.
fn row_params<T: Scalar>(p: &[T]) -> Result<ViewParams> {
    let v = ViewParams::from_slice(&p.iter().map(|v| v.as_f64()).collect::<Vec<_>>())?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite view parameters {:?}",
            v.to_array()
        )));
    }
    Ok(v)
}

fn row_frame<T: Scalar>(x: &[T]) -> Result<SkeletonFrame> {
    SkeletonFrame::from_flat(&x.iter().map(|v| v.as_f64()).collect::<Vec<_>>())
}

/// Applies `v' = R(v − d)` row by row: `x` is `[N, 3J]` (joint-major
/// coordinates), `params` is `[N, 6]` as `(α, β, γ, dx, dy, dz)`.
pub fn view_transform<'t, T: Scalar>(x: Var<'t, T>, params: Var<'t, T>) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let ps = params.shape();
    if xs.len() != 2
        || ps.len() != 2
        || ps[1] != 6
        || xs[0] != ps[0]
        || !xs[1].is_multiple_of(3)
        || xs[1] == 0
    {
        return Err(Error::invalid(format!(
            "view_transform expects x [N, 3J] and params [N, 6], got {xs:?} and {ps:?}"
        )));
    }
    let (n, width) = (xs[0], xs[1]);
    let value = {
        let xv = x.value();
        let pv = params.value();
        let mut out = Vec::with_capacity(n * width);
        for r in 0..n {
            let p = row_params(&pv.data()[r * 6..(r + 1) * 6])?;
            let frame = row_frame(&xv.data()[r * width..(r + 1) * width])?;
            out.extend(
                apply_view_transform(&frame, &p)?
                    .flatten()
                    .into_iter()
                    .map(T::of),
            );
        }
        Tensor::new(&[n, width], out)?
    };
    Ok(x.tape().custom_op(&[x, params], value, move |ctx| {
        let (xv, pv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
        let mut dx = Vec::with_capacity(n * width);
        let mut dp = Vec::with_capacity(n * 6);
        for r in 0..n {
            let p = row_params(&pv[r * 6..(r + 1) * 6]).expect("finite params");
            let frame = row_frame(&xv[r * width..(r + 1) * width]).expect("row width");
            let eps: Vec<Vector3<f64>> = g[r * width..(r + 1) * width]
                .chunks(3)
                .map(|c| Vector3::new(c[0].as_f64(), c[1].as_f64(), c[2].as_f64()))
                .collect();
            let grad = backprop_view_transform(&eps, &frame, &p).expect("matching joints");
            dx.extend(
                grad.joints
                    .iter()
                    .flat_map(|j| j.iter().map(|&c| T::of(c)).collect::<Vec<_>>()),
            );
            dp.extend(grad.params_array().into_iter().map(T::of));
        }
        vec![
            Some(Tensor::new(&[n, width], dx).expect("shape")),
            Some(Tensor::new(&[n, 6], dp).expect("shape")),
        ]
    }))
}

/// Affine map of a view transform in skeleton-map pixel space.
///
/// With `s = 255 / (c_max − c_min)` a pixel `u` maps to
/// `R u + s (R (c_min·1 − d) − c_min·1)`, which equals re-encoding the
/// transformed decoded coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelAffine {
    pub r: Matrix3<f64>,
    /// `s (c_min·1 − d)`, the pre-rotation shift used by the derivatives.
    pub offset: Vector3<f64>,
    pub t: Vector3<f64>,
    pub s: f64,
}

impl PixelAffine {
    pub fn new(p: &ViewParams, c_min: f64, c_max: f64) -> Result<Self> {
        if !(c_max > c_min) {
            return Err(Error::invalid(format!(
                "c_max {c_max} must exceed c_min {c_min}"
            )));
        }
        let s = 255.0 / (c_max - c_min);
        let c = Vector3::repeat(c_min);
        let r = *compose_rotation(p)?.matrix();
        let shift = c - p.translation();
        Ok(Self {
            r,
            offset: s * shift,
            t: s * (r * shift - c),
            s,
        })
    }

    pub fn apply(&self, u: &Vector3<f64>) -> Vector3<f64> {
        self.r * u + self.t
    }
}

/// Transforms continuous skeleton maps `[B, 3, H, W]` (channels x, y, z)
/// with one view per sample from `params [B, 6]`.
pub fn map_transform<'t, T: Scalar>(
    maps: Var<'t, T>,
    params: Var<'t, T>,
    c_min: f64,
    c_max: f64,
) -> Result<Var<'t, T>> {
    let ms = maps.shape();
    let ps = params.shape();
    if ms.len() != 4 || ms[1] != 3 || ps.len() != 2 || ps[1] != 6 || ps[0] != ms[0] {
        return Err(Error::invalid(format!(
            "map_transform expects maps [B, 3, H, W] and params [B, 6], got {ms:?} and {ps:?}"
        )));
    }
    if !(c_max > c_min) {
        return Err(Error::invalid(format!(
            "c_max {c_max} must exceed c_min {c_min}"
        )));
    }
    let (b, plane) = (ms[0], ms[2] * ms[3]);
    let value = {
        let mv = maps.value();
        let pv = params.value();
        let mut out = mv.clone();
        for n in 0..b {
            let aff = PixelAffine::new(&row_params(&pv.data()[n * 6..(n + 1) * 6])?, c_min, c_max)?;
            let src = &mv.data()[n * 3 * plane..(n + 1) * 3 * plane];
            let dst = &mut out.data_mut()[n * 3 * plane..(n + 1) * 3 * plane];
            for i in 0..plane {
                let u = Vector3::new(
                    src[i].as_f64(),
                    src[plane + i].as_f64(),
                    src[2 * plane + i].as_f64(),
                );
                let v = aff.apply(&u);
                for c in 0..3 {
                    dst[c * plane + i] = T::of(v[c]);
                }
            }
        }
        out
    };
    Ok(maps.tape().custom_op(&[maps, params], value, move |ctx| {
        let (mv, pv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
        let mut dm = vec![T::zero(); mv.len()];
        let mut dp = vec![T::zero(); b * 6];
        for n in 0..b {
            let p = row_params(&pv[n * 6..(n + 1) * 6]).expect("finite params");
            let aff = PixelAffine::new(&p, c_min, c_max).expect("valid range");
            let rt = aff.r.transpose();
            let jac = [
                rotation_jacobian(&p, AngleParam::Alpha).expect("finite"),
                rotation_jacobian(&p, AngleParam::Beta).expect("finite"),
                rotation_jacobian(&p, AngleParam::Gamma).expect("finite"),
            ];
            let base = n * 3 * plane;
            let mut angles = [0.0; 3];
            let mut back_sum = Vector3::zeros();
            for i in 0..plane {
                let e = Vector3::new(
                    g[base + i].as_f64(),
                    g[base + plane + i].as_f64(),
                    g[base + 2 * plane + i].as_f64(),
                );
                let u = Vector3::new(
                    mv[base + i].as_f64(),
                    mv[base + plane + i].as_f64(),
                    mv[base + 2 * plane + i].as_f64(),
                );
                let back = rt * e;
                for c in 0..3 {
                    dm[base + c * plane + i] = T::of(back[c]);
                }
                back_sum += back;
                let w = u + aff.offset;
                for (acc, j) in angles.iter_mut().zip(&jac) {
                    *acc += e.dot(&(j * w));
                }
            }
            let dd = -aff.s * back_sum;
            let row = [angles[0], angles[1], angles[2], dd.x, dd.y, dd.z];
            for (k, v) in row.into_iter().enumerate() {
                dp[n * 6 + k] = T::of(v);
            }
        }
        vec![
            Some(Tensor::new(ctx.inputs[0].shape(), dm).expect("shape")),
            Some(Tensor::new(&[b, 6], dp).expect("shape")),
        ]
    }))
}
