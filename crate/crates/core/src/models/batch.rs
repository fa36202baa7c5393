use serde::{Deserialize, Serialize};
use viewadapt_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};
use crate::skeleton::{FrameOfReference, SkeletonSequence};

/// How per-frame logits become one score vector per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over the valid frames.
    #[default]
    Mean,
    /// Logits of the last valid frame.
    Last,
}

/// Padded, time-major batch of sequences.
///
/// Row `t·B + b` of `x` holds frame `t` of sample `b` flattened joint-major;
/// rows past a sample's length are zero and carry zero weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch<T> {
    pub steps: usize,
    pub batch: usize,
    pub joints: usize,
    pub x: Tensor<T>,
    /// `[steps·B, 1]` aggregation weights; each sample's weights sum to 1.
    pub weights: Tensor<T>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> SequenceBatch<T> {
    /// Pads `seqs` to the longest length. Inputs must be in the re-centered
    /// global frame.
    pub fn new(seqs: &[&SkeletonSequence], aggregation: Aggregation) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let joints = first.num_joints();
        for s in seqs {
            s.validate()?;
            if s.frame_of_reference != FrameOfReference::GlobalO {
                return Err(Error::State(format!(
                    "network input must be in the global_O frame, got {}",
                    s.frame_of_reference
                )));
            }
            if s.num_joints() != joints {
                return Err(Error::Schema(format!(
                    "batch mixes {joints}-joint and {}-joint sequences",
                    s.num_joints()
                )));
            }
        }
        let batch = seqs.len();
        let steps = seqs.iter().map(|s| s.num_frames()).max().unwrap_or(0);
        let width = 3 * joints;
        let mut x = vec![T::zero(); steps * batch * width];
        let mut w = vec![T::zero(); steps * batch];
        for (b, s) in seqs.iter().enumerate() {
            let len = s.num_frames();
            for (t, frame) in s.frames.iter().enumerate() {
                let row = (t * batch + b) * width;
                for (k, v) in frame.flatten().into_iter().enumerate() {
                    x[row + k] = T::of(v);
                }
            }
            match aggregation {
                Aggregation::Mean => {
                    let inv = T::one() / T::of(len as f64);
                    for t in 0..len {
                        w[t * batch + b] = inv;
                    }
                }
                Aggregation::Last => w[(len - 1) * batch + b] = T::one(),
            }
        }
        Ok(Self {
            steps,
            batch,
            joints,
            x: Tensor::new(&[steps * batch, width], x)?,
            weights: Tensor::new(&[steps * batch, 1], w)?,
            lengths: seqs.iter().map(|s| s.num_frames()).collect(),
            labels: seqs.iter().map(|s| s.label).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{Joint3, SkeletonFrame};

    fn seq(t: usize) -> SkeletonSequence {
        let frames = (0..t)
            .map(|i| {
                SkeletonFrame::new(vec![
                    Joint3::new(i as f64, 1.0, 2.0),
                    Joint3::new(0.0, -1.0, 0.5),
                ])
            })
            .collect();
        SkeletonSequence::new(
            frames,
            1,
            vec!["a".into(), "b".into()],
            FrameOfReference::GlobalO,
        )
        .unwrap()
    }

    #[test]
    fn padding_and_weights() {
        let (a, b) = (seq(3), seq(1));
        let batch = SequenceBatch::<f64>::new(&[&a, &b], Aggregation::Mean).unwrap();
        assert_eq!((batch.steps, batch.batch), (3, 2));
        assert_eq!(batch.x.get(&[2 * 2, 0]).unwrap(), 2.0);
        assert_eq!(batch.x.get(&[2 * 2 + 1, 0]).unwrap(), 0.0);
        let w = batch.weights.data();
        assert!((w[0] + w[2] + w[4] - 1.0).abs() < 1e-15);
        assert_eq!([w[1], w[3], w[5]], [1.0, 0.0, 0.0]);
        let last = SequenceBatch::<f64>::new(&[&a, &b], Aggregation::Last).unwrap();
        assert_eq!(last.weights.data(), &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_raw_frame() {
        let mut s = seq(2);
        s.frame_of_reference = FrameOfReference::Raw;
        assert!(matches!(
            SequenceBatch::<f32>::new(&[&s], Aggregation::Mean),
            Err(Error::State(_))
        ));
    }
}
