//! Skeleton maps: a sequence laid out as a 3-channel image with joints as
//! rows and frames as columns.

use nalgebra::Vector3;
use viewadapt_tensor::{Scalar, Tape, Tensor};

use super::ops::PixelAffine;
use crate::error::{Error, Result};
use crate::geometry::ViewParams;
use crate::skeleton::{Joint3, SkeletonFrame, SkeletonSequence};

/// Channel-major pixels `[3][J][T]` plus the normalization bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonMap {
    pub joints: usize,
    pub frames: usize,
    pub pixels: Vec<f64>,
    pub c_min: f64,
    pub c_max: f64,
    /// True when pixels were floored and clamped to integers in `[0, 255]`.
    pub quantized: bool,
}

fn check_range(c_min: f64, c_max: f64) -> Result<()> {
    if !(c_min.is_finite() && c_max.is_finite() && c_max > c_min) {
        return Err(Error::invalid(format!(
            "need finite c_max > c_min, got [{c_min}, {c_max}]"
        )));
    }
    Ok(())
}

/// `u = 255 (v − c_min) / (c_max − c_min)` per coordinate; with `quantize`
/// the result is floored and clamped to `[0, 255]`.
pub fn encode_skeleton_map(
    seq: &SkeletonSequence,
    c_min: f64,
    c_max: f64,
    quantize: bool,
) -> Result<SkeletonMap> {
    check_range(c_min, c_max)?;
    seq.validate()?;
    let (j, t) = (seq.num_joints(), seq.num_frames());
    let range = c_max - c_min;
    let mut pixels = vec![0.0; 3 * j * t];
    for (ti, frame) in seq.frames.iter().enumerate() {
        for (ji, v) in frame.joints.iter().enumerate() {
            for c in 0..3 {
                let u = (v[c] - c_min) / range * 255.0;
                pixels[(c * j + ji) * t + ti] = if quantize {
                    u.floor().clamp(0.0, 255.0)
                } else {
                    u
                };
            }
        }
    }
    Ok(SkeletonMap {
        joints: j,
        frames: t,
        pixels,
        c_min,
        c_max,
        quantized: quantize,
    })
}

impl SkeletonMap {
    pub fn pixel(&self, channel: usize, joint: usize, frame: usize) -> f64 {
        self.pixels[(channel * self.joints + joint) * self.frames + frame]
    }

    /// Joint coordinates recovered by inverting the encoding.
    pub fn decode(&self) -> Vec<SkeletonFrame> {
        let scale = (self.c_max - self.c_min) / 255.0;
        (0..self.frames)
            .map(|t| {
                SkeletonFrame::new(
                    (0..self.joints)
                        .map(|j| {
                            Joint3::new(
                                self.pixel(0, j, t) * scale + self.c_min,
                                self.pixel(1, j, t) * scale + self.c_min,
                                self.pixel(2, j, t) * scale + self.c_min,
                            )
                        })
                        .collect(),
                )
            })
            .collect()
    }

    /// Continuous map of the same sequence seen from view `p`.
    pub fn transform(&self, p: &ViewParams) -> Result<SkeletonMap> {
        check_range(self.c_min, self.c_max)?;
        let aff = PixelAffine::new(p, self.c_min, self.c_max)?;
        let plane = self.joints * self.frames;
        let mut pixels = vec![0.0; self.pixels.len()];
        for i in 0..plane {
            let u = Vector3::new(
                self.pixels[i],
                self.pixels[plane + i],
                self.pixels[2 * plane + i],
            );
            let v = aff.apply(&u);
            for c in 0..3 {
                pixels[c * plane + i] = v[c];
            }
        }
        Ok(SkeletonMap {
            pixels,
            quantized: false,
            ..self.clone()
        })
    }

    /// Export form: floor and clamp every pixel to `[0, 255]`.
    pub fn quantize(&self) -> SkeletonMap {
        SkeletonMap {
            pixels: self
                .pixels
                .iter()
                .map(|u| u.floor().clamp(0.0, 255.0))
                .collect(),
            quantized: true,
            ..self.clone()
        }
    }

    /// Pixels as a `[3, J, T]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64(&[3, self.joints, self.frames], &self.pixels)
            .expect("pixel count matches shape")
    }

    /// Bilinear resize to `[3, h, w]`.
    pub fn resized<T: Scalar>(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let x = tape.constant(
            self.to_tensor::<T>()
                .reshape(&[1, 3, self.joints, self.frames])?,
        );
        Ok(x.resize_bilinear(h, w)?.value().reshape(&[3, h, w])?)
    }
}
