//! Fixed, rule-based view normalization (translation to a body center and
//! alignment of the shoulder and spine axes).

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{
    FrameOfReference, Joint3, SkeletonFrame, SkeletonSequence, LEFT_SHOULDER, RIGHT_SHOULDER,
    SPINE, SPINE_BASE,
};

/// Granularity of a normalization step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    #[default]
    None,
    /// Parameters from the first frame, applied to every frame.
    Sequence,
    /// Parameters recomputed for each frame.
    Frame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotateVariant {
    /// X along the shoulders, Y along the spine, Z = X × Y.
    #[default]
    FullXyz,
    /// Only turn the shoulder vector onto X.
    ShoulderOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyCenter {
    /// Mean of all joints.
    #[default]
    Mean,
    /// A named root joint.
    Joint(String),
}

/// What to do when the alignment axes cannot be formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// Leave that frame (or sequence) unrotated and log a warning.
    #[default]
    Skip,
    Error,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSpec {
    pub translate: Level,
    pub rotate: Level,
    pub rotate_variant: RotateVariant,
    pub body_center: BodyCenter,
    pub degenerate: DegeneratePolicy,
}

impl PreprocessSpec {
    /// Sequence-level translation only: the network input convention.
    pub fn s_trans() -> Self {
        Self {
            translate: Level::Sequence,
            ..Self::default()
        }
    }

    pub fn new(translate: Level, rotate: Level, rotate_variant: RotateVariant) -> Self {
        Self {
            translate,
            rotate,
            rotate_variant,
            ..Self::default()
        }
    }
}

const DEGENERATE_EPS: f64 = 1e-9;

pub fn body_center(
    frame: &SkeletonFrame,
    center: &BodyCenter,
    joint_names: &[String],
) -> Result<Joint3> {
    match center {
        BodyCenter::Mean => Ok(frame.centroid()),
        BodyCenter::Joint(name) => {
            let idx = joint_names.iter().position(|n| n == name).ok_or_else(|| {
                Error::Schema(format!("body-center joint `{name}` not in schema"))
            })?;
            Ok(frame.joints[idx])
        }
    }
}

struct AlignJoints {
    left_shoulder: usize,
    right_shoulder: usize,
    spine_base: usize,
    spine: usize,
}

/// Rotation taking the body axes of `frame` onto the coordinate axes, or
/// `None` when they are degenerate.
fn alignment(
    frame: &SkeletonFrame,
    idx: &AlignJoints,
    variant: RotateVariant,
) -> Option<Matrix3<f64>> {
    let shoulders = frame.joints[idx.right_shoulder] - frame.joints[idx.left_shoulder];
    if shoulders.norm() < DEGENERATE_EPS {
        return None;
    }
    let x = shoulders.normalize();
    match variant {
        RotateVariant::ShoulderOnly => {
            let target = Vector3::x();
            match Rotation3::rotation_between(&x, &target) {
                Some(r) => Some(*r.matrix()),
                // antiparallel: half turn about any axis orthogonal to X
                None => Some(
                    *Rotation3::from_axis_angle(
                        &Unit::new_normalize(Vector3::y()),
                        std::f64::consts::PI,
                    )
                    .matrix(),
                ),
            }
        }
        RotateVariant::FullXyz => {
            let spine = frame.joints[idx.spine] - frame.joints[idx.spine_base];
            let y_raw = spine - x * x.dot(&spine);
            if y_raw.norm() < DEGENERATE_EPS {
                return None;
            }
            let y = y_raw.normalize();
            let z = x.cross(&y);
            // rows are the new axes expressed in old coordinates
            Some(Matrix3::from_rows(&[
                x.transpose(),
                y.transpose(),
                z.transpose(),
            ]))
        }
    }
}

/// Applies a rule-based normalization and tags the result `global_O`.
///
/// Translation happens first; rotation then turns about the (possibly new)
/// origin.
pub fn preprocess(seq: &SkeletonSequence, spec: &PreprocessSpec) -> Result<SkeletonSequence> {
    if seq.frame_of_reference == FrameOfReference::Observation {
        return Err(Error::State(
            "preprocess expects raw or global_O input, got observation".into(),
        ));
    }
    seq.validate()?;
    let names = &seq.joint_names;
    let mut frames: Vec<SkeletonFrame> = match spec.translate {
        Level::None => seq.frames.clone(),
        Level::Sequence => {
            let c = body_center(&seq.frames[0], &spec.body_center, names)?;
            seq.frames.iter().map(|f| translate(f, &c)).collect()
        }
        Level::Frame => seq
            .frames
            .iter()
            .map(|f| Ok(translate(f, &body_center(f, &spec.body_center, names)?)))
            .collect::<Result<_>>()?,
    };
    if spec.rotate != Level::None {
        let idx = AlignJoints {
            left_shoulder: seq.joint_index(LEFT_SHOULDER)?,
            right_shoulder: seq.joint_index(RIGHT_SHOULDER)?,
            spine_base: seq.joint_index(SPINE_BASE)?,
            spine: seq.joint_index(SPINE)?,
        };
        let resolve = |f: &SkeletonFrame, t: usize| -> Result<Option<Matrix3<f64>>> {
            match alignment(f, &idx, spec.rotate_variant) {
                Some(m) => Ok(Some(m)),
                None => match spec.degenerate {
                    DegeneratePolicy::Error => Err(Error::DegeneratePose(format!(
                        "frame {t}: shoulder or spine vector degenerate"
                    ))),
                    DegeneratePolicy::Skip => {
                        log::warn!("frame {t}: degenerate alignment axes, rotation skipped");
                        Ok(None)
                    }
                },
            }
        };
        match spec.rotate {
            Level::Sequence => {
                if let Some(m) = resolve(&frames[0], 0)? {
                    frames = frames.iter().map(|f| rotate(f, &m)).collect();
                }
            }
            Level::Frame => {
                for (t, f) in frames.iter_mut().enumerate() {
                    if let Some(m) = resolve(f, t)? {
                        *f = rotate(f, &m);
                    }
                }
            }
            Level::None => {}
        }
    }
    Ok(seq.with_frames(frames, FrameOfReference::GlobalO))
}

fn translate(f: &SkeletonFrame, c: &Joint3) -> SkeletonFrame {
    SkeletonFrame::new(f.joints.iter().map(|v| v - c).collect())
}

fn rotate(f: &SkeletonFrame, m: &Matrix3<f64>) -> SkeletonFrame {
    SkeletonFrame::new(f.joints.iter().map(|v| m * v).collect())
}
