//! View-adaptive recurrent network.
//!
//! Two LSTM branches read each raw frame and regress a per-frame view
//! (rotation angles and translation). The frame is moved into that view
//! and fed to a stack of LSTM layers whose per-frame class scores are
//! aggregated over time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use viewadapt_tensor::{Param, Scalar, Tape, Tensor, Var};

use super::batch::{Aggregation, SequenceBatch};
use super::ops::view_transform;
use super::Classifier;
use crate::error::{Error, Result};
use crate::geometry::{apply_view_transform, ViewParams};
use crate::nn::{AdamConfig, DropoutLayer, FcLayer, ForwardCtx, LstmLayer, LstmState, Module};
use crate::skeleton::{FrameOfReference, SkeletonSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarnnConfig {
    pub num_classes: usize,
    pub num_joints: usize,
    pub main_layers: usize,
    pub hidden: usize,
    pub va_hidden: usize,
    pub enable_rotation_branch: bool,
    pub enable_translation_branch: bool,
    pub dropout: f64,
    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub aggregation: Aggregation,
}

impl Default for VarnnConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            num_joints: 16,
            main_layers: 3,
            hidden: 100,
            va_hidden: 100,
            enable_rotation_branch: true,
            enable_translation_branch: true,
            dropout: 0.5,
            lr: 0.005,
            clip_norm: 1.0,
            batch_size: 32,
            aggregation: Aggregation::Mean,
        }
    }
}

impl VarnnConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_classes", self.num_classes),
            ("num_joints", self.num_joints),
            ("main_layers", self.main_layers),
            ("hidden", self.hidden),
            ("va_hidden", self.va_hidden),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        if self.num_joints < 2 {
            return Err(Error::invalid("num_joints must be at least 2"));
        }
        if !(self.lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::invalid("lr and clip_norm must be positive"));
        }
        DropoutLayer::new(self.dropout)?;
        Ok(())
    }

    /// Both view branches off: the plain recurrent baseline.
    pub fn without_view_adaptation(&self) -> Self {
        Self {
            enable_rotation_branch: false,
            enable_translation_branch: false,
            ..self.clone()
        }
    }

    pub fn view_adaptive(&self) -> bool {
        self.enable_rotation_branch || self.enable_translation_branch
    }
}

/// LSTM followed by a zero-initialized FC regressing three values.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBranch<T> {
    pub lstm: LstmLayer<T>,
    pub fc: FcLayer<T>,
}

impl<T: Scalar> ViewBranch<T> {
    fn new(name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            lstm: LstmLayer::new(&format!("{name}.lstm"), input, hidden, rng),
            fc: FcLayer::zeros(&format!("{name}.fc"), hidden, 3),
        }
    }

    fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, steps: usize) -> Result<Var<'t, T>> {
        let h = self.lstm.forward_sequence(tape, x, steps)?;
        self.fc.forward(tape, h)
    }
}

/// Recurrent state of both view branches.
#[derive(Debug, Clone, Copy)]
pub struct ViewState<'t, T: Scalar> {
    pub rotation: LstmState<'t, T>,
    pub translation: LstmState<'t, T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaRnn<T> {
    pub config: VarnnConfig,
    pub rotation: ViewBranch<T>,
    pub translation: ViewBranch<T>,
    pub main: Vec<LstmLayer<T>>,
    pub classifier: FcLayer<T>,
}

/// Output of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct RnnForward<'t, T: Scalar> {
    /// `[B, C]` aggregated class scores.
    pub logits: Var<'t, T>,
    /// `[steps·B, 6]` per-frame view parameters when a branch is enabled.
    pub view: Option<Var<'t, T>>,
}

impl<T: Scalar> VaRnn<T> {
    /// The main network and the view branches draw from separate streams of
    /// `seed`, so a baseline and a view-adaptive model built with the same
    /// seed share their main-network weights.
    pub fn new(config: VarnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut main_rng = ChaCha8Rng::seed_from_u64(seed);
        main_rng.set_stream(1);
        let mut va_rng = ChaCha8Rng::seed_from_u64(seed);
        va_rng.set_stream(2);
        let input = 3 * config.num_joints;
        let main = (0..config.main_layers)
            .map(|l| {
                let inp = if l == 0 { input } else { config.hidden };
                LstmLayer::new(&format!("main.lstm{l}"), inp, config.hidden, &mut main_rng)
            })
            .collect();
        let classifier = FcLayer::new("main.fc", config.hidden, config.num_classes, &mut main_rng);
        Ok(Self {
            rotation: ViewBranch::new("va.rotation", input, config.va_hidden, &mut va_rng),
            translation: ViewBranch::new("va.translation", input, config.va_hidden, &mut va_rng),
            main,
            classifier,
            config,
        })
    }

    /// `[steps·B, 6]` view parameters for the batch, or `None` when both
    /// branches are disabled.
    pub fn view_params<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        steps: usize,
    ) -> Result<Option<Var<'t, T>>> {
        if !self.config.view_adaptive() {
            return Ok(None);
        }
        let rows = x.shape()[0];
        let zeros = || tape.constant(Tensor::zeros(&[rows, 3]));
        let angles = if self.config.enable_rotation_branch {
            self.rotation.forward(tape, x, steps)?
        } else {
            zeros()
        };
        let shift = if self.config.enable_translation_branch {
            self.translation.forward(tape, x, steps)?
        } else {
            zeros()
        };
        Ok(Some(Var::concat(&[angles, shift], 1)?))
    }

    /// Zero initial state for the view branches.
    pub fn view_state<'t>(&self, tape: &'t Tape<T>, batch: usize) -> ViewState<'t, T> {
        ViewState {
            rotation: LstmState::zeros(tape, batch, self.config.va_hidden),
            translation: LstmState::zeros(tape, batch, self.config.va_hidden),
        }
    }

    /// One step of the view branches on frames `[B, 3J]`; returns the
    /// `[B, 6]` parameters and the advanced state. Disabled branches yield
    /// zeros.
    pub fn view_step<'t>(
        &self,
        tape: &'t Tape<T>,
        frame: Var<'t, T>,
        state: ViewState<'t, T>,
    ) -> Result<(Var<'t, T>, ViewState<'t, T>)> {
        let b = frame.shape()[0];
        let rotation = self.rotation.lstm.step(tape, frame, state.rotation)?;
        let translation = self.translation.lstm.step(tape, frame, state.translation)?;
        let zeros = tape.constant(Tensor::zeros(&[b, 3]));
        let angles = if self.config.enable_rotation_branch {
            self.rotation.fc.forward(tape, rotation.h)?
        } else {
            zeros
        };
        let shift = if self.config.enable_translation_branch {
            self.translation.fc.forward(tape, translation.h)?
        } else {
            zeros
        };
        Ok((
            Var::concat(&[angles, shift], 1)?,
            ViewState {
                rotation,
                translation,
            },
        ))
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        batch: &SequenceBatch<T>,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<RnnForward<'t, T>> {
        if batch.joints != self.config.num_joints {
            return Err(Error::Schema(format!(
                "model expects {} joints, batch has {}",
                self.config.num_joints, batch.joints
            )));
        }
        let x = tape.constant(batch.x.clone());
        let view = self.view_params(tape, x, batch.steps)?;
        let mut h = match view {
            Some(p) => view_transform(x, p)?,
            None => x,
        };
        let dropout = DropoutLayer::new(self.config.dropout)?;
        for (l, layer) in self.main.iter().enumerate() {
            h = layer.forward_sequence(tape, h, batch.steps)?;
            if l + 1 < self.main.len() {
                h = dropout.forward(h, ctx)?;
            }
        }
        let per_frame = self.classifier.forward(tape, h)?;
        let weighted = per_frame.mul(tape.constant(batch.weights.clone()))?;
        let logits = weighted
            .reshape(&[batch.steps, batch.batch, self.config.num_classes])?
            .sum_axis(0)?;
        Ok(RnnForward { logits, view })
    }

    /// Per-frame view parameters the model assigns to `seq` (identity when
    /// both branches are off).
    pub fn infer_views(&self, seq: &SkeletonSequence) -> Result<Vec<ViewParams>> {
        let batch = SequenceBatch::<T>::new(&[seq], self.config.aggregation)?;
        let tape = Tape::new();
        let x = tape.constant(batch.x.clone());
        match self.view_params(&tape, x, batch.steps)? {
            None => Ok(vec![ViewParams::identity(); seq.num_frames()]),
            Some(p) => p
                .value()
                .to_f64_vec()
                .chunks(6)
                .map(ViewParams::from_slice)
                .collect(),
        }
    }

    /// `seq` re-expressed in the learned per-frame observation viewpoints.
    pub fn transform_sequence(&self, seq: &SkeletonSequence) -> Result<SkeletonSequence> {
        let views = self.infer_views(seq)?;
        let frames = seq
            .frames
            .iter()
            .zip(&views)
            .map(|(f, p)| apply_view_transform(f, p))
            .collect::<Result<_>>()?;
        Ok(seq.with_frames(frames, FrameOfReference::Observation))
    }
}

impl<T: Scalar> Module<T> for VaRnn<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p: Vec<&Param<T>> = self.main.iter().flat_map(|l| l.params()).collect();
        p.extend(self.classifier.params());
        for b in [&self.rotation, &self.translation] {
            p.extend(b.lstm.params());
            p.extend(b.fc.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p: Vec<&mut Param<T>> = self.main.iter_mut().flat_map(|l| l.params_mut()).collect();
        p.extend(self.classifier.params_mut());
        for b in [&mut self.rotation, &mut self.translation] {
            p.extend(b.lstm.params_mut());
            p.extend(b.fc.params_mut());
        }
        p
    }
}

impl<T: Scalar> Classifier<T> for VaRnn<T> {
    type Batch = SequenceBatch<T>;

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size
    }

    fn optimizer(&self) -> AdamConfig {
        AdamConfig::with_lr(self.config.lr)
    }

    fn clip_norm(&self) -> Option<f64> {
        Some(self.config.clip_norm)
    }

    fn prepare(&self, seqs: &[&SkeletonSequence]) -> Result<SequenceBatch<T>> {
        SequenceBatch::new(seqs, self.config.aggregation)
    }

    fn labels<'b>(&self, batch: &'b SequenceBatch<T>) -> &'b [usize] {
        &batch.labels
    }

    fn logits<'t>(
        &self,
        tape: &'t Tape<T>,
        batch: &SequenceBatch<T>,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward(tape, batch, ctx)?.logits)
    }
}
