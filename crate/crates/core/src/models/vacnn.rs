//! View-adaptive convolutional network over skeleton maps.
//!
//! A small convolutional subnetwork regresses one view per sequence from
//! the skeleton map; the map is re-encoded under that view and classified
//! by a six-layer convolutional backbone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use viewadapt_tensor::{Param, Scalar, Tape, Tensor, Var};

use super::map::encode_skeleton_map;
use super::ops::map_transform;
use super::Classifier;
use crate::error::{Error, Result};
use crate::geometry::{apply_view_transform, ViewParams};
use crate::nn::{
    AdamConfig, BatchNormLayer, Conv2dLayer, FcLayer, ForwardCtx, MaxPoolLayer, Module,
};
use crate::skeleton::{FrameOfReference, SkeletonSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VacnnConfig {
    pub num_classes: usize,
    /// `[height, width]` every map is resized to.
    pub map_size: [usize; 2],
    /// Output channels of the five backbone convolutions.
    pub backbone_channels: [usize; 5],
    pub va_kernels: usize,
    pub va_kernel_size: usize,
    pub va_stride: usize,
    pub enable_rotation_branch: bool,
    pub enable_translation_branch: bool,
    pub lr: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
}

impl Default for VacnnConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            map_size: [224, 224],
            backbone_channels: [32, 64, 128, 128, 256],
            va_kernels: 128,
            va_kernel_size: 5,
            va_stride: 2,
            enable_rotation_branch: true,
            enable_translation_branch: true,
            lr: 0.0001,
            clip_norm: None,
            batch_size: 32,
        }
    }
}

/// Backbone stages that are followed by 2×2 max pooling.
const POOLED_STAGES: usize = 4;

impl VacnnConfig {
    /// Spatial size of the view subnetwork's pooled output.
    fn va_output_hw(&self) -> Option<(usize, usize)> {
        let k = self.va_kernel_size;
        let s = self.va_stride;
        let step = |n: usize| -> Option<usize> {
            let a = viewadapt_tensor::conv_out_len(n, k, s, 0)?;
            let b = viewadapt_tensor::conv_out_len(a, k, s, 0)?;
            viewadapt_tensor::conv_out_len(b, 2, 2, 0)
        };
        Some((step(self.map_size[0])?, step(self.map_size[1])?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.batch_size == 0 || self.va_kernels == 0 {
            return Err(Error::invalid(
                "num_classes, batch_size and va_kernels must be positive",
            ));
        }
        if self.backbone_channels.contains(&0) {
            return Err(Error::invalid("backbone channels must be positive"));
        }
        if self.va_kernel_size == 0 || self.va_stride == 0 {
            return Err(Error::invalid(
                "view subnetwork kernel size and stride must be positive",
            ));
        }
        if self.va_output_hw().is_none() {
            return Err(Error::invalid(format!(
                "map size {:?} is smaller than the view subnetwork's receptive field",
                self.map_size
            )));
        }
        let min = 1 << POOLED_STAGES;
        if self.map_size[0] < min || self.map_size[1] < min {
            return Err(Error::invalid(format!(
                "map size must be at least {min}x{min} for the backbone"
            )));
        }
        if !(self.lr > 0.0) || self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::invalid("lr and clip_norm must be positive"));
        }
        Ok(())
    }

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

/// Batch of resized continuous skeleton maps `[B, 3, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapBatch<T> {
    pub maps: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Bias-free convolution, batch norm and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv2dLayer<T>,
    pub bn: BatchNormLayer<T>,
}

impl<T: Scalar> ConvBlock<T> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        // the batch norm's shift makes a convolution bias redundant
        Self {
            conv: Conv2dLayer::without_bias(
                &format!("{name}.conv"),
                cin,
                cout,
                k,
                stride,
                pad,
                rng,
            ),
            bn: BatchNormLayer::new(&format!("{name}.bn"), cout),
        }
    }

    fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<Var<'t, T>> {
        let y = self.conv.forward(tape, x)?;
        Ok(self.bn.forward(tape, y, ctx)?.relu()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaCnn<T> {
    pub config: VacnnConfig,
    /// Normalization bounds of the training set.
    pub c_min: f64,
    pub c_max: f64,
    pub va_blocks: Vec<ConvBlock<T>>,
    pub va_fc: FcLayer<T>,
    pub backbone: Vec<ConvBlock<T>>,
    pub classifier: FcLayer<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct CnnForward<'t, T: Scalar> {
    pub logits: Var<'t, T>,
    /// `[B, 6]` per-sequence view parameters when a branch is enabled.
    pub view: Option<Var<'t, T>>,
}

/// Pixel values in `[0, 255]` mapped to roughly `[-1, 1]`.
fn normalize<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(x.scale(T::of(1.0 / 127.5))?.add_scalar(T::of(-1.0))?)
}

impl<T: Scalar> VaCnn<T> {
    /// Backbone and view subnetwork draw from separate streams of `seed`.
    pub fn new(config: VacnnConfig, c_min: f64, c_max: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(c_min.is_finite() && c_max.is_finite() && c_max > c_min) {
            return Err(Error::invalid(format!(
                "need c_max > c_min, got [{c_min}, {c_max}]"
            )));
        }
        let mut main_rng = ChaCha8Rng::seed_from_u64(seed);
        main_rng.set_stream(1);
        let mut va_rng = ChaCha8Rng::seed_from_u64(seed);
        va_rng.set_stream(2);
        let mut cin = 3;
        let backbone = config
            .backbone_channels
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let b = ConvBlock::new(&format!("backbone.{i}"), cin, cout, 3, 1, 1, &mut main_rng);
                cin = cout;
                b
            })
            .collect();
        let classifier = FcLayer::new("backbone.fc", cin, config.num_classes, &mut main_rng);
        let (k, s, nk) = (config.va_kernel_size, config.va_stride, config.va_kernels);
        let va_blocks = vec![
            ConvBlock::new("va.0", 3, nk, k, s, 0, &mut va_rng),
            ConvBlock::new("va.1", nk, nk, k, s, 0, &mut va_rng),
        ];
        let (ph, pw) = config.va_output_hw().expect("validated");
        Ok(Self {
            va_fc: FcLayer::zeros("va.fc", nk * ph * pw, 6),
            va_blocks,
            backbone,
            classifier,
            c_min,
            c_max,
            config,
        })
    }

    /// Continuous map of `seq` resized to the model's input size.
    pub fn map_tensor(&self, seq: &SkeletonSequence) -> Result<Tensor<T>> {
        if seq.frame_of_reference != FrameOfReference::GlobalO {
            return Err(Error::State(format!(
                "network input must be in the global_O frame, got {}",
                seq.frame_of_reference
            )));
        }
        let map = encode_skeleton_map(seq, self.c_min, self.c_max, false)?;
        map.resized(self.config.map_size[0], self.config.map_size[1])
    }

    pub fn make_batch(&self, seqs: &[&SkeletonSequence]) -> Result<MapBatch<T>> {
        if seqs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let [h, w] = self.config.map_size;
        let mut data = Vec::with_capacity(seqs.len() * 3 * h * w);
        for s in seqs {
            data.extend_from_slice(self.map_tensor(s)?.data());
        }
        Ok(MapBatch {
            maps: Tensor::new(&[seqs.len(), 3, h, w], data)?,
            labels: seqs.iter().map(|s| s.label).collect(),
        })
    }

    /// `[B, 6]` view parameters regressed from the maps.
    pub fn regress_view<'t>(
        &self,
        tape: &'t Tape<T>,
        maps: Var<'t, T>,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<Var<'t, T>> {
        let b = maps.shape()[0];
        let mut h = normalize(maps)?;
        for block in &self.va_blocks {
            h = block.forward(tape, h, ctx)?;
        }
        h = MaxPoolLayer::new(2, 2).forward(h)?;
        let flat = h.shape()[1..].iter().product();
        let raw = self.va_fc.forward(tape, h.reshape(&[b, flat])?)?;
        let (rot, trans) = (
            self.config.enable_rotation_branch,
            self.config.enable_translation_branch,
        );
        if rot && trans {
            return Ok(raw);
        }
        // the switches zero the disabled half of the output
        let mut keep = vec![T::zero(); 6];
        for (i, k) in keep.iter_mut().enumerate() {
            if (i < 3 && rot) || (i >= 3 && trans) {
                *k = T::one();
            }
        }
        Ok(raw.mul(tape.constant(Tensor::new(&[1, 6], keep)?))?)
    }

    pub fn backbone_logits<'t>(
        &self,
        tape: &'t Tape<T>,
        maps: Var<'t, T>,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<Var<'t, T>> {
        let b = maps.shape()[0];
        let mut h = normalize(maps)?;
        for (i, block) in self.backbone.iter().enumerate() {
            h = block.forward(tape, h, ctx)?;
            if i < POOLED_STAGES {
                h = MaxPoolLayer::new(2, 2).forward(h)?;
            }
        }
        let s = h.shape();
        let pooled = h.reshape(&[b, s[1], s[2] * s[3]])?.mean_axis(2)?;
        self.classifier.forward(tape, pooled)
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        batch: &MapBatch<T>,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<CnnForward<'t, T>> {
        let [h, w] = self.config.map_size;
        let s = batch.maps.shape();
        if s.len() != 4 || s[1] != 3 || s[2] != h || s[3] != w {
            return Err(Error::invalid(format!(
                "expected maps [B, 3, {h}, {w}], got {s:?}"
            )));
        }
        let maps = tape.constant(batch.maps.clone());
        let (input, view) = if self.config.view_adaptive() {
            let p = self.regress_view(tape, maps, ctx)?;
            (map_transform(maps, p, self.c_min, self.c_max)?, Some(p))
        } else {
            (maps, None)
        };
        Ok(CnnForward {
            logits: self.backbone_logits(tape, input, ctx)?,
            view,
        })
    }

    /// Sequence-level view the model assigns to `seq`.
    pub fn infer_view(&self, seq: &SkeletonSequence) -> Result<ViewParams> {
        if !self.config.view_adaptive() {
            return Ok(ViewParams::identity());
        }
        let batch = self.make_batch(&[seq])?;
        let tape = Tape::new();
        let p = self.regress_view(&tape, tape.constant(batch.maps), &mut ForwardCtx::eval())?;
        ViewParams::from_slice(&p.value().to_f64_vec())
    }

    /// `seq` re-expressed in the single viewpoint the model infers for it.
    /// Transforming the skeleton and transforming its map agree, so this is
    /// what the backbone sees up to encoding.
    pub fn transform_sequence(&self, seq: &SkeletonSequence) -> Result<SkeletonSequence> {
        let view = self.infer_view(seq)?;
        let frames = seq
            .frames
            .iter()
            .map(|f| apply_view_transform(f, &view))
            .collect::<Result<_>>()?;
        Ok(seq.with_frames(frames, FrameOfReference::Observation))
    }
}

impl<T: Scalar> Module<T> for VaCnn<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p: Vec<&Param<T>> = Vec::new();
        for b in self.backbone.iter().chain(&self.va_blocks) {
            p.extend(b.conv.params());
            p.extend(b.bn.params());
        }
        p.extend(self.classifier.params());
        p.extend(self.va_fc.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p: Vec<&mut Param<T>> = Vec::new();
        for b in self.backbone.iter_mut().chain(self.va_blocks.iter_mut()) {
            p.extend(b.conv.params_mut());
            p.extend(b.bn.params_mut());
        }
        p.extend(self.classifier.params_mut());
        p.extend(self.va_fc.params_mut());
        p
    }

    fn buffers(&self) -> Vec<&Param<T>> {
        self.backbone
            .iter()
            .chain(&self.va_blocks)
            .flat_map(|b| b.bn.buffers())
            .collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        self.backbone
            .iter_mut()
            .chain(self.va_blocks.iter_mut())
            .flat_map(|b| b.bn.buffers_mut())
            .collect()
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNormLayer<T>> {
        self.backbone
            .iter_mut()
            .chain(self.va_blocks.iter_mut())
            .map(|b| &mut b.bn)
            .collect()
    }
}

impl<T: Scalar> Classifier<T> for VaCnn<T> {
    type Batch = MapBatch<T>;

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
        self.config.clip_norm
    }

    fn prepare(&self, seqs: &[&SkeletonSequence]) -> Result<MapBatch<T>> {
        self.make_batch(seqs)
    }

    fn labels<'b>(&self, batch: &'b MapBatch<T>) -> &'b [usize] {
        &batch.labels
    }

    fn logits<'t>(
        &self,
        tape: &'t Tape<T>,
        batch: &MapBatch<T>,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward(tape, batch, ctx)?.logits)
    }
}
