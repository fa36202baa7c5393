//! Canonical one-file-per-sequence text format.
//!
//! ```toml
//! format_version = 1
//! num_frames = 2
//! num_joints = 2
//! class_label = 0
//! subject_id = 3
//! view_tag = "az+45"
//! frame_of_reference = "raw"
//! joint_names = ["a", "b"]
//! frames = [
//!     [[0.0, 1.0, 2.0], [0.5, 1.5, 2.5]],
//!     [[0.1, 1.1, 2.1], [0.6, 1.6, 2.6]],
//! ]
//! ```
//!
//! Coordinates are written in shortest round-trip form, so save then load
//! is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{FrameOfReference, Joint3, SkeletonFrame, SkeletonSequence};

pub const SEQUENCE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceFile {
    format_version: u32,
    num_frames: usize,
    num_joints: usize,
    class_label: usize,
    subject_id: u32,
    view_tag: String,
    frame_of_reference: FrameOfReference,
    joint_names: Vec<String>,
    frames: Vec<Vec<[f64; 3]>>,
}

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn sequence_to_string(seq: &SkeletonSequence) -> Result<String> {
    seq.validate()?;
    let file = SequenceFile {
        format_version: SEQUENCE_FORMAT_VERSION,
        num_frames: seq.num_frames(),
        num_joints: seq.num_joints(),
        class_label: seq.label,
        subject_id: seq.subject,
        view_tag: seq.view.clone(),
        frame_of_reference: seq.frame_of_reference,
        joint_names: seq.joint_names.clone(),
        frames: seq
            .frames
            .iter()
            .map(|f| f.joints.iter().map(|j| [j.x, j.y, j.z]).collect())
            .collect(),
    };
    toml::to_string(&file).map_err(|e| Error::invalid(format!("cannot serialize sequence: {e}")))
}

/// Parses a sequence document; `path` only labels error messages.
pub fn sequence_from_str(text: &str, path: &Path) -> Result<SkeletonSequence> {
    let file: SequenceFile = toml::from_str(text).map_err(|e| parse_error(path, e.to_string()))?;
    if file.format_version != SEQUENCE_FORMAT_VERSION {
        return Err(parse_error(
            path,
            format!("unsupported format_version {}", file.format_version),
        ));
    }
    if file.num_frames == 0 || file.frames.is_empty() {
        return Err(parse_error(
            path,
            "field `frames`: a sequence needs at least one frame",
        ));
    }
    if file.frames.len() != file.num_frames {
        return Err(parse_error(
            path,
            format!(
                "field `num_frames` says {}, found {} frames",
                file.num_frames,
                file.frames.len()
            ),
        ));
    }
    if file.joint_names.len() != file.num_joints {
        return Err(parse_error(
            path,
            format!(
                "field `num_joints` says {}, `joint_names` has {}",
                file.num_joints,
                file.joint_names.len()
            ),
        ));
    }
    if let Some(t) = file.frames.iter().position(|f| f.len() != file.num_joints) {
        return Err(parse_error(
            path,
            format!(
                "field `frames[{t}]` has {} joints, expected {}",
                file.frames[t].len(),
                file.num_joints
            ),
        ));
    }
    let frames = file
        .frames
        .into_iter()
        .map(|f| {
            SkeletonFrame::new(
                f.into_iter()
                    .map(|[x, y, z]| Joint3::new(x, y, z))
                    .collect(),
            )
        })
        .collect();
    let seq = SkeletonSequence {
        frames,
        label: file.class_label,
        joint_names: file.joint_names,
        frame_of_reference: file.frame_of_reference,
        subject: file.subject_id,
        view: file.view_tag,
    };
    seq.validate()?;
    Ok(seq)
}

pub fn save_sequence(seq: &SkeletonSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, sequence_to_string(seq)?).map_err(|e| Error::io(path, e))
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<SkeletonSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    sequence_from_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_FRAMES: &str = r#"
format_version = 1
num_frames = 2
num_joints = 2
class_label = 1
subject_id = 3
view_tag = "az+45"
frame_of_reference = "raw"
joint_names = ["a", "b"]
frames = [
    [[0.0, 1.0, 2.0], [0.5, 1.5, 2.5]],
    [[0.1, 1.1, 2.1], [0.6, 1.6, 2.6]],
]
"#;

    #[test]
    fn parses_documented_example() {
        let seq = sequence_from_str(TWO_FRAMES, Path::new("x")).unwrap();
        assert_eq!(
            (seq.num_frames(), seq.num_joints(), seq.label, seq.subject),
            (2, 2, 1, 3)
        );
        assert_eq!(seq.frames[1].joints[1], Joint3::new(0.6, 1.6, 2.6));
    }

    #[test]
    fn string_round_trip_is_exact() {
        let mut seq = sequence_from_str(TWO_FRAMES, Path::new("x")).unwrap();
        seq.frames[0].joints[0] = Joint3::new(0.1 + 0.2, -1e-300, std::f64::consts::PI);
        let back = sequence_from_str(&sequence_to_string(&seq).unwrap(), Path::new("x")).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = TWO_FRAMES.replace("num_frames = 2", "num_frames = 3");
        let e = sequence_from_str(&bad, Path::new("x"))
            .unwrap_err()
            .to_string();
        assert!(e.contains("num_frames"), "{e}");
        let bad = TWO_FRAMES.replace("[0.5, 1.5, 2.5]],\n    [[0.1", "[0.5, 1.5]],\n    [[0.1");
        assert!(matches!(
            sequence_from_str(&bad, Path::new("x")),
            Err(Error::Parse { .. })
        ));
    }
}
