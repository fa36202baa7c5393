//! How consistently a model re-expresses one pose seen from several cameras.

use serde::{Deserialize, Serialize};
use viewadapt_tensor::Scalar;

use super::{VaCnn, VaRnn};
use crate::error::{Error, Result};
use crate::skeleton::{Joint3, SkeletonFrame, SkeletonSequence};

/// Mean over joints of the trace of the joint-position covariance across
/// the renderings (population covariance).
pub fn dispersion(renderings: &[&SkeletonFrame]) -> Result<f64> {
    let k = renderings.len();
    if k < 2 {
        return Err(Error::invalid(format!(
            "dispersion needs at least 2 renderings, got {k}"
        )));
    }
    let j = renderings[0].num_joints();
    if j == 0 || renderings.iter().any(|f| f.num_joints() != j) {
        return Err(Error::Schema(
            "renderings have different joint counts".into(),
        ));
    }
    let mut total = 0.0;
    for joint in 0..j {
        // offsets from the first rendering keep identical copies exactly at 0
        let origin = renderings[0].joints[joint];
        let offsets: Vec<Joint3> = renderings
            .iter()
            .map(|f| f.joints[joint] - origin)
            .collect();
        let mean = offsets.iter().fold(Joint3::zeros(), |acc, o| acc + o) / k as f64;
        total += offsets
            .iter()
            .map(|o| (o - mean).norm_squared())
            .sum::<f64>()
            / k as f64;
    }
    Ok(total / j as f64)
}

/// [`dispersion`] averaged over frames of equally long sequences.
pub fn sequence_dispersion(bundle: &[SkeletonSequence]) -> Result<f64> {
    let first = bundle
        .first()
        .ok_or_else(|| Error::invalid("empty pose bundle"))?;
    let t = first.num_frames();
    if bundle.iter().any(|s| s.num_frames() != t) {
        return Err(Error::Schema(
            "bundle sequences have different lengths".into(),
        ));
    }
    let mut sum = 0.0;
    for f in 0..t {
        let frames: Vec<&SkeletonFrame> = bundle.iter().map(|s| &s.frames[f]).collect();
        sum += dispersion(&frames)?;
    }
    Ok(sum / t as f64)
}

/// Anything that moves a sequence into a learned observation viewpoint.
pub trait ViewAdapter {
    fn adapt(&self, seq: &SkeletonSequence) -> Result<SkeletonSequence>;
}

impl<T: Scalar> ViewAdapter for VaRnn<T> {
    fn adapt(&self, seq: &SkeletonSequence) -> Result<SkeletonSequence> {
        self.transform_sequence(seq)
    }
}

impl<T: Scalar> ViewAdapter for VaCnn<T> {
    fn adapt(&self, seq: &SkeletonSequence) -> Result<SkeletonSequence> {
        self.transform_sequence(seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub before: f64,
    pub after: f64,
}

impl ConsistencyReport {
    pub fn improved(&self) -> bool {
        self.after < self.before
    }
}

/// Dispersion of a bundle of renderings of one pose, on the raw inputs and
/// after the model's view transform.
pub fn view_consistency_metric(
    model: &impl ViewAdapter,
    bundle: &[SkeletonSequence],
) -> Result<ConsistencyReport> {
    if bundle.len() < 2 {
        return Err(Error::invalid(format!(
            "a pose bundle needs at least 2 renderings, got {}",
            bundle.len()
        )));
    }
    let j = bundle[0].num_joints();
    if bundle.iter().any(|s| s.num_joints() != j) {
        return Err(Error::Schema(
            "bundle renderings have different joint counts".into(),
        ));
    }
    let before = sequence_dispersion(bundle)?;
    let adapted = bundle
        .iter()
        .map(|s| model.adapt(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyReport {
        before,
        after: sequence_dispersion(&adapted)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(coords: &[f64]) -> SkeletonFrame {
        SkeletonFrame::from_flat(coords).unwrap()
    }

    #[test]
    fn identical_copies_have_zero_dispersion() {
        let f = frame(&[0.1, 0.2, 0.3, -1.0, 0.5, 2.0]);
        assert_eq!(dispersion(&[&f, &f, &f]).unwrap(), 0.0);
    }

    #[test]
    fn two_point_spread() {
        // one joint at +-1 on x, the other fixed: trace 1 then 0, mean 0.5
        let a = frame(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = frame(&[-1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((dispersion(&[&a, &b]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_bundles() {
        let a = frame(&[0.0; 6]);
        let b = frame(&[0.0; 9]);
        assert!(dispersion(&[&a]).is_err());
        assert!(dispersion(&[&a, &b]).is_err());
    }
}
