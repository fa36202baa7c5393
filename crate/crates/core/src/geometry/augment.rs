use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{apply_view_transform, ViewParams};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;

/// Per-angle sampling interval in degrees, `[alpha, beta, gamma]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRange {
    pub degrees: [[f64; 2]; 3],
}

impl AugmentRange {
    /// `[-deg, deg]` on all three angles.
    pub fn symmetric(deg: f64) -> Self {
        Self {
            degrees: [[-deg, deg]; 3],
        }
    }

    pub fn none() -> Self {
        Self::symmetric(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for [lo, hi] in self.degrees {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!(
                    "bad augmentation interval [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.degrees.iter().all(|&[lo, hi]| lo == 0.0 && hi == 0.0)
    }

    fn sample(&self, rng: &mut impl Rng) -> ViewParams {
        let draw = |rng: &mut _, [lo, hi]: [f64; 2]| -> f64 {
            let deg = if lo == hi {
                lo
            } else {
                Rng::random_range(rng, lo..=hi)
            };
            deg.to_radians()
        };
        let a = draw(rng, self.degrees[0]);
        let b = draw(rng, self.degrees[1]);
        let c = draw(rng, self.degrees[2]);
        ViewParams::rotation_only(a, b, c)
    }
}

/// Rotates the whole sequence by one random view (no translation).
pub fn random_rotation_augment_with_rng(
    seq: &SkeletonSequence,
    range: &AugmentRange,
    rng: &mut impl Rng,
) -> Result<SkeletonSequence> {
    range.validate()?;
    let p = range.sample(rng);
    let frames = seq
        .frames
        .iter()
        .map(|f| apply_view_transform(f, &p))
        .collect::<Result<_>>()?;
    Ok(seq.with_frames(frames, seq.frame_of_reference))
}

/// Seeded form of [`random_rotation_augment_with_rng`].
pub fn random_rotation_augment(
    seq: &SkeletonSequence,
    range: &AugmentRange,
    seed: u64,
) -> Result<SkeletonSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rotation_augment_with_rng(seq, range, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{FrameOfReference, Joint3, SkeletonFrame};

    fn sample_seq() -> SkeletonSequence {
        let frames = (0..4)
            .map(|t| {
                SkeletonFrame::new(
                    (0..5)
                        .map(|j| {
                            Joint3::new(j as f64 * 0.1, t as f64 * 0.05 + j as f64, -0.3 * j as f64)
                        })
                        .collect(),
                )
            })
            .collect();
        let names = (0..5).map(|j| format!("j{j}")).collect();
        SkeletonSequence::new(frames, 3, names, FrameOfReference::GlobalO).unwrap()
    }

    #[test]
    fn zero_range_is_identity() {
        let s = sample_seq();
        assert_eq!(
            random_rotation_augment(&s, &AugmentRange::none(), 5).unwrap(),
            s
        );
    }

    #[test]
    fn same_seed_same_output() {
        let s = sample_seq();
        let r = AugmentRange::symmetric(90.0);
        let a = random_rotation_augment(&s, &r, 42).unwrap();
        let b = random_rotation_augment(&s, &r, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label, 3);
    }

    #[test]
    fn invalid_range_rejected() {
        let r = AugmentRange {
            degrees: [[1.0, -1.0], [0.0, 0.0], [0.0, 0.0]],
        };
        assert!(random_rotation_augment(&sample_seq(), &r, 0).is_err());
    }
}
