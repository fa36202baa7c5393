//! Seeded multi-view stick-figure actions.
//!
//! Each class is an analytic motion program: sinusoidal joint-angle
//! trajectories on a fixed 16-joint kinematic tree, evaluated in a canonical
//! body frame (y up, facing +z, subject's left at +x). A sequence is that
//! motion seen by a camera at a sampled azimuth and elevation, i.e. moved by
//! a rigid rotation and translation, plus optional Gaussian coordinate noise.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::save_sequence;
use super::manifest::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::skeleton::{FrameOfReference, Joint3, SkeletonFrame, SkeletonSequence};

/// Joint names of the stick figure in storage order.
pub const STICK_FIGURE_JOINTS: [&str; 16] = [
    "spine_base",
    "spine",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
];

const PARENT: [Option<usize>; 16] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(2),
    Some(4),
    Some(5),
    Some(2),
    Some(7),
    Some(8),
    Some(0),
    Some(10),
    Some(11),
    Some(0),
    Some(13),
    Some(14),
];

/// `(parent, child)` joint index pairs of the stick figure.
pub fn stick_figure_bones() -> Vec<(usize, usize)> {
    PARENT
        .iter()
        .enumerate()
        .filter_map(|(child, p)| p.map(|parent| (parent, child)))
        .collect()
}

const REST: [[f64; 3]; 16] = [
    [0.0, 1.0, 0.0],
    [0.0, 1.25, 0.0],
    [0.0, 1.5, 0.0],
    [0.0, 1.7, 0.02],
    [0.19, 1.47, 0.0],
    [0.19, 1.18, 0.0],
    [0.19, 0.93, 0.0],
    [-0.19, 1.47, 0.0],
    [-0.19, 1.18, 0.0],
    [-0.19, 0.93, 0.0],
    [0.1, 0.95, 0.0],
    [0.1, 0.52, 0.01],
    [0.1, 0.08, 0.0],
    [-0.1, 0.95, 0.0],
    [-0.1, 0.52, 0.01],
    [-0.1, 0.08, 0.0],
];

/// Cycles per frame of every program before style scaling.
const BASE_FREQUENCY: f64 = 1.0 / 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionProgram {
    Wave,
    Squat,
    WalkInPlace,
    Lean,
    Reach,
}

impl MotionProgram {
    pub const ALL: [MotionProgram; 5] = [
        MotionProgram::Wave,
        MotionProgram::Squat,
        MotionProgram::WalkInPlace,
        MotionProgram::Lean,
        MotionProgram::Reach,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionProgram::Wave => "wave",
            MotionProgram::Squat => "squat",
            MotionProgram::WalkInPlace => "walk_in_place",
            MotionProgram::Lean => "lean",
            MotionProgram::Reach => "reach",
        }
    }

    /// Local joint rotations and root offset at phase `phi`, amplitude `a`.
    fn pose(self, phi: f64, a: f64) -> ([Matrix3<f64>; 16], Vector3<f64>) {
        let rx = |t: f64| *Rotation3::from_axis_angle(&Vector3::x_axis(), t).matrix();
        let rz = |t: f64| *Rotation3::from_axis_angle(&Vector3::z_axis(), t).matrix();
        let mut local = [Matrix3::identity(); 16];
        let mut root = Vector3::zeros();
        match self {
            MotionProgram::Wave => {
                local[7] = rz(-1.9 * a);
                local[8] = rz(-(0.5 + 0.5 * phi.sin()) * a);
            }
            MotionProgram::Squat => {
                let th = 0.5 * a * (1.0 - phi.cos());
                local[10] = rx(-th);
                local[13] = rx(-th);
                local[11] = rx(2.0 * th);
                local[14] = rx(2.0 * th);
                local[1] = rx(0.3 * th);
                local[4] = rx(-1.2 * th);
                local[7] = rx(-1.2 * th);
                root.y = -0.87 * (1.0 - th.cos());
            }
            MotionProgram::WalkInPlace => {
                let s = phi.sin();
                local[10] = rx(-0.5 * a * s);
                local[13] = rx(0.5 * a * s);
                local[11] = rx(0.6 * a * s.max(0.0));
                local[14] = rx(0.6 * a * (-s).max(0.0));
                local[4] = rx(0.4 * a * s);
                local[7] = rx(-0.4 * a * s);
            }
            MotionProgram::Lean => {
                local[1] = rz(0.45 * a * phi.sin());
                local[4] = rz(0.2);
                local[7] = rz(-0.2);
            }
            MotionProgram::Reach => {
                let u = 0.5 * (1.0 - phi.cos());
                local[7] = rx(-1.5 * a * u);
                local[8] = rx(-0.9 * a * (1.0 - u));
                local[1] = rx(0.2 * a * u);
            }
        }
        (local, root)
    }
}

/// Forward kinematics of the stick figure.
fn skeleton(local: &[Matrix3<f64>; 16], root: Vector3<f64>) -> SkeletonFrame {
    let rest: Vec<Vector3<f64>> = REST
        .iter()
        .map(|r| Vector3::new(r[0], r[1], r[2]))
        .collect();
    let mut global = [Matrix3::identity(); 16];
    let mut pos = vec![Joint3::zeros(); 16];
    for j in 0..16 {
        match PARENT[j] {
            None => {
                global[j] = local[j];
                pos[j] = rest[j] + root;
            }
            Some(p) => {
                global[j] = global[p] * local[j];
                pos[j] = pos[p] + global[p] * (rest[j] - rest[p]);
            }
        }
    }
    SkeletonFrame::new(pos)
}

/// Per-sequence performance style.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionStyle {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl MotionStyle {
    pub fn canonical() -> Self {
        Self {
            amplitude: 1.0,
            frequency: 1.0,
            phase: 0.0,
        }
    }

    fn sample(jitter: f64, rng: &mut impl Rng) -> Self {
        Self {
            amplitude: 1.0 + jitter * rng.random_range(-0.3..=0.3),
            frequency: 1.0 + jitter * rng.random_range(-0.2..=0.2),
            phase: jitter * rng.random_range(-0.5 * PI..=0.5 * PI),
        }
    }
}

/// Where the camera sits relative to the body, in degrees and meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
    pub lateral: f64,
}

impl Camera {
    pub fn at_azimuth(azimuth_deg: f64) -> Self {
        Self {
            azimuth_deg,
            elevation_deg: 0.0,
            distance: 3.0,
            lateral: 0.0,
        }
    }

    /// Camera coordinates of a body-frame point.
    fn observe(&self, v: &Joint3) -> Joint3 {
        let az = Rotation3::from_axis_angle(&Vector3::y_axis(), self.azimuth_deg.to_radians());
        let el = Rotation3::from_axis_angle(&Vector3::x_axis(), self.elevation_deg.to_radians());
        el * (az * v) + Vector3::new(self.lateral, -1.0, self.distance)
    }
}

/// Class `program` performed with `style` for `frames` frames, in body
/// coordinates.
pub fn motion_frames(
    program: MotionProgram,
    style: &MotionStyle,
    frames: usize,
    speed: f64,
) -> Vec<SkeletonFrame> {
    (0..frames)
        .map(|t| {
            let phi = 2.0 * PI * BASE_FREQUENCY * speed * style.frequency * t as f64 + style.phase;
            let (local, root) = program.pose(phi, style.amplitude);
            skeleton(&local, root)
        })
        .collect()
}

/// Tag of a nominal camera azimuth, e.g. `az+45`.
pub fn view_tag(azimuth_deg: f64) -> String {
    format!("az{:+}", azimuth_deg.round() as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub sequences_per_class: usize,
    /// Inclusive frame-count range.
    pub frames: [usize; 2],
    /// Program of each class; empty cycles through every program, speeding
    /// up repeats so classes stay distinct.
    pub programs: Vec<MotionProgram>,
    /// Nominal camera azimuths, assigned round-robin within each class.
    pub azimuths_deg: Vec<f64>,
    /// Uniform jitter added to the nominal azimuth.
    pub azimuth_jitter_deg: f64,
    pub elevation_deg: [f64; 2],
    pub distance: [f64; 2],
    /// Standard deviation of the coordinate noise, in meters.
    pub noise: f64,
    /// Scale of the per-sequence amplitude, speed and phase variation.
    pub style_jitter: f64,
    pub num_subjects: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 5,
            sequences_per_class: 40,
            frames: [20, 28],
            programs: Vec::new(),
            azimuths_deg: vec![-90.0, -45.0, 0.0, 45.0, 90.0],
            azimuth_jitter_deg: 0.0,
            elevation_deg: [0.0, 0.0],
            distance: [3.0, 3.0],
            noise: 0.0,
            style_jitter: 0.0,
            num_subjects: 8,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::invalid(format!(
            "{name} range {r:?} is not ordered and finite"
        )));
    }
    Ok(())
}

fn sample(r: [f64; 2], rng: &mut impl Rng) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

impl SynthSpec {
    /// Five classes, 40 sequences each, seen from azimuths
    /// {0, ±45, ±90} degrees with style variation and sensor noise.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            azimuth_jitter_deg: 10.0,
            elevation_deg: [-10.0, 10.0],
            distance: [2.5, 3.5],
            noise: 0.02,
            style_jitter: 1.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.sequences_per_class == 0 || self.num_subjects == 0 {
            return Err(Error::invalid(
                "num_classes, sequences_per_class and num_subjects must be positive",
            ));
        }
        if self.frames[0] == 0 || self.frames[0] > self.frames[1] {
            return Err(Error::invalid(format!(
                "frame range {:?} is invalid",
                self.frames
            )));
        }
        if !self.programs.is_empty() && self.programs.len() != self.num_classes {
            return Err(Error::invalid(
                "programs must be empty or list one program per class",
            ));
        }
        if self.azimuths_deg.is_empty() || self.azimuths_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid(
                "azimuths_deg must list at least one finite angle",
            ));
        }
        check_range("elevation_deg", self.elevation_deg)?;
        check_range("distance", self.distance)?;
        let nonneg = [
            ("azimuth_jitter_deg", self.azimuth_jitter_deg),
            ("noise", self.noise),
            ("style_jitter", self.style_jitter),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!(
                "{name} must be finite and nonnegative, got {v}"
            )));
        }
        if self.distance[0] <= 0.0 {
            return Err(Error::invalid("camera distance must be positive"));
        }
        Ok(())
    }

    /// Program and speed multiplier of class `c`.
    pub fn class_program(&self, c: usize) -> (MotionProgram, f64) {
        if self.programs.is_empty() {
            let all = MotionProgram::ALL;
            (all[c % all.len()], 1.0 + 0.5 * (c / all.len()) as f64)
        } else {
            (self.programs[c], 1.0)
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes)
            .map(|c| {
                let (p, _) = self.class_program(c);
                let repeat = if self.programs.is_empty() {
                    c / MotionProgram::ALL.len()
                } else {
                    0
                };
                if repeat == 0 {
                    p.name().to_owned()
                } else {
                    format!("{}_{}", p.name(), repeat + 1)
                }
            })
            .collect()
    }
}

fn joint_names() -> Vec<String> {
    STICK_FIGURE_JOINTS.iter().map(|s| s.to_string()).collect()
}

/// Frames of class `c` in `style` seen by `camera`, noise free.
pub fn render(
    spec: &SynthSpec,
    class: usize,
    style: &MotionStyle,
    frames: usize,
    camera: &Camera,
) -> Result<SkeletonSequence> {
    if class >= spec.num_classes {
        return Err(Error::invalid(format!(
            "class {class} outside {} classes",
            spec.num_classes
        )));
    }
    let (program, speed) = spec.class_program(class);
    let observed = motion_frames(program, style, frames, speed)
        .iter()
        .map(|f| SkeletonFrame::new(f.joints.iter().map(|j| camera.observe(j)).collect()))
        .collect();
    let mut seq = SkeletonSequence::new(observed, class, joint_names(), FrameOfReference::Raw)?;
    seq.view = view_tag(camera.azimuth_deg);
    Ok(seq)
}

/// Generated sequences with their manifest (paths `seq_NNNN.toml`).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub sequences: Vec<SkeletonSequence>,
}

impl SynthDataset {
    /// Writes every sequence and `manifest.toml` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (entry, seq) in self.manifest.entries.iter().zip(&self.sequences) {
            save_sequence(seq, dir.join(&entry.path))?;
        }
        self.manifest.save(dir.join("manifest.toml"))
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut sequences = Vec::with_capacity(spec.num_classes * spec.sequences_per_class);
    let mut entries = Vec::with_capacity(sequences.capacity());
    for c in 0..spec.num_classes {
        for k in 0..spec.sequences_per_class {
            let index = c * spec.sequences_per_class + k;
            // every sequence draws from its own stream of the seed
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(index as u64);
            let frames = rng.random_range(spec.frames[0]..=spec.frames[1]);
            let style = MotionStyle::sample(spec.style_jitter, &mut rng);
            let nominal = spec.azimuths_deg[k % spec.azimuths_deg.len()];
            let jitter = spec.azimuth_jitter_deg;
            let camera = Camera {
                azimuth_deg: nominal
                    + if jitter > 0.0 {
                        rng.random_range(-jitter..=jitter)
                    } else {
                        0.0
                    },
                elevation_deg: sample(spec.elevation_deg, &mut rng),
                distance: sample(spec.distance, &mut rng),
                lateral: rng.random_range(-0.3..=0.3),
            };
            let mut seq = render(spec, c, &style, frames, &camera)?;
            if spec.noise > 0.0 {
                let normal =
                    Normal::new(0.0, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
                for f in &mut seq.frames {
                    for j in &mut f.joints {
                        *j += Vector3::new(
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                        );
                    }
                }
            }
            seq.view = view_tag(nominal);
            seq.subject = (k as u32) % spec.num_subjects;
            entries.push(ManifestEntry {
                path: format!("seq_{index:04}.toml").into(),
                label: c,
                subject: seq.subject,
                view: seq.view.clone(),
                split: None,
            });
            sequences.push(seq);
        }
    }
    Ok(SynthDataset {
        manifest: DatasetManifest::new(spec.class_names(), joint_names(), entries),
        sequences,
    })
}

/// One performance of `class` rendered from every azimuth in `azimuths_deg`
/// (noise free, level camera). Style and length come from `seed`.
pub fn pose_bundle(
    spec: &SynthSpec,
    class: usize,
    azimuths_deg: &[f64],
    seed: u64,
) -> Result<Vec<SkeletonSequence>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.random_range(spec.frames[0]..=spec.frames[1]);
    let style = MotionStyle::sample(spec.style_jitter, &mut rng);
    azimuths_deg
        .iter()
        .map(|&az| render(spec, class, &style, frames, &Camera::at_azimuth(az)))
        .collect()
}
