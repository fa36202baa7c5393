//! Skeleton sequences and their coordinate-frame bookkeeping.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One joint position in meters.
pub type Joint3 = Vector3<f64>;

pub const LEFT_SHOULDER: &str = "left_shoulder";
pub const RIGHT_SHOULDER: &str = "right_shoulder";
pub const SPINE_BASE: &str = "spine_base";
pub const SPINE: &str = "spine";

/// Which coordinate system a sequence's joints are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameOfReference {
    /// Sensor coordinates as captured.
    #[serde(rename = "raw")]
    Raw,
    /// Re-centered global system (origin at a body center).
    #[serde(rename = "global_O")]
    GlobalO,
    /// Observation system chosen by a view transform.
    #[serde(rename = "observation")]
    Observation,
}

impl std::fmt::Display for FrameOfReference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FrameOfReference::Raw => "raw",
            FrameOfReference::GlobalO => "global_O",
            FrameOfReference::Observation => "observation",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    pub joints: Vec<Joint3>,
}

impl SkeletonFrame {
    pub fn new(joints: Vec<Joint3>) -> Self {
        Self { joints }
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|j| j.iter().all(|c| c.is_finite()))
    }

    /// Arithmetic mean of all joints.
    pub fn centroid(&self) -> Joint3 {
        let n = self.joints.len().max(1) as f64;
        self.joints.iter().fold(Joint3::zeros(), |acc, j| acc + j) / n
    }

    /// Coordinates flattened joint-major as `[x0, y0, z0, x1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|j| [j.x, j.y, j.z]).collect()
    }

    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "flat frame length {} is not a multiple of 3",
                coords.len()
            )));
        }
        Ok(Self {
            joints: coords
                .chunks(3)
                .map(|c| Joint3::new(c[0], c[1], c[2]))
                .collect(),
        })
    }
}

/// A labeled sequence of skeleton frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<SkeletonFrame>,
    pub label: usize,
    /// Joint names in storage order.
    pub joint_names: Vec<String>,
    pub frame_of_reference: FrameOfReference,
    pub subject: u32,
    /// Capture viewpoint tag, e.g. `az+45`.
    pub view: String,
}

impl SkeletonSequence {
    /// Builds a sequence and validates its shape invariants.
    pub fn new(
        frames: Vec<SkeletonFrame>,
        label: usize,
        joint_names: Vec<String>,
        frame_of_reference: FrameOfReference,
    ) -> Result<Self> {
        let seq = Self {
            frames,
            label,
            joint_names,
            frame_of_reference,
            subject: 0,
            view: String::new(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Schema("sequence has no frames".into()));
        }
        let j = self.joint_names.len();
        if j < 2 {
            return Err(Error::Schema(format!("need at least 2 joints, got {j}")));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.num_joints() != j {
                return Err(Error::Schema(format!(
                    "frame {t} has {} joints, schema names {j}",
                    f.num_joints()
                )));
            }
            if !f.is_finite() {
                return Err(Error::Schema(format!(
                    "frame {t} has non-finite coordinates"
                )));
            }
        }
        Ok(())
    }

    pub fn joint_index(&self, name: &str) -> Result<usize> {
        self.joint_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("joint `{name}` not in schema")))
    }

    /// Same metadata, new frames.
    pub fn with_frames(
        &self,
        frames: Vec<SkeletonFrame>,
        frame_of_reference: FrameOfReference,
    ) -> Self {
        Self {
            frames,
            label: self.label,
            joint_names: self.joint_names.clone(),
            frame_of_reference,
            subject: self.subject,
            view: self.view.clone(),
        }
    }

    /// Smallest and largest coordinate over all joints and frames.
    pub fn coord_range(&self) -> (f64, f64) {
        self.frames
            .iter()
            .flat_map(|f| f.joints.iter().flat_map(|j| j.iter().copied()))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                (lo.min(c), hi.max(c))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("j{i}")).collect()
    }

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(SkeletonSequence::new(vec![], 0, names(2), FrameOfReference::Raw).is_err());
        let f2 = SkeletonFrame::new(vec![Joint3::zeros(); 2]);
        let f3 = SkeletonFrame::new(vec![Joint3::zeros(); 3]);
        assert!(
            SkeletonSequence::new(vec![f2.clone(), f3], 0, names(2), FrameOfReference::Raw)
                .is_err()
        );
        assert!(SkeletonSequence::new(vec![f2], 0, names(2), FrameOfReference::Raw).is_ok());
    }

    #[test]
    fn flatten_round_trip() {
        let f = SkeletonFrame::new(vec![
            Joint3::new(1.0, 2.0, 3.0),
            Joint3::new(-1.0, 0.5, 9.0),
        ]);
        assert_eq!(SkeletonFrame::from_flat(&f.flatten()).unwrap(), f);
    }
}
