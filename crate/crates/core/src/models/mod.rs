//! View-adaptive recurrent and convolutional classifiers, their transform
//! layers, training, evaluation and persistence.

mod batch;
mod checkpoint;
mod consistency;
mod fusion;
mod map;
mod ops;
mod train;
mod vacnn;
mod varnn;

use viewadapt_tensor::{Scalar, Tape, Var};

use crate::error::Result;
use crate::nn::{AdamConfig, ForwardCtx, Module};
use crate::skeleton::SkeletonSequence;

pub use batch::{Aggregation, SequenceBatch};
pub use checkpoint::{peek_checkpoint, AnyModel, Checkpoint, ModelKind, CHECKPOINT_FORMAT_VERSION};
pub use consistency::{
    dispersion, sequence_dispersion, view_consistency_metric, ConsistencyReport, ViewAdapter,
};
pub use fusion::{fuse_scores, CNN_WEIGHT, RNN_WEIGHT};
pub use map::{encode_skeleton_map, SkeletonMap};
pub use ops::{map_transform, view_transform};
pub use train::{evaluate, predict_proba, train, EpochLog, EvalReport, TrainConfig, Trainer};
pub use vacnn::{CnnForward, ConvBlock, MapBatch, VaCnn, VacnnConfig};
pub use varnn::{RnnForward, VaRnn, VarnnConfig, ViewBranch, ViewState};

/// A trainable sequence classifier.
pub trait Classifier<T: Scalar>: Module<T> {
    type Batch;

    fn num_classes(&self) -> usize;
    fn batch_size(&self) -> usize;
    fn optimizer(&self) -> AdamConfig;
    fn clip_norm(&self) -> Option<f64>;
    fn prepare(&self, seqs: &[&SkeletonSequence]) -> Result<Self::Batch>;
    fn labels<'b>(&self, batch: &'b Self::Batch) -> &'b [usize];
    /// `[B, C]` class scores.
    fn logits<'t>(
        &self,
        tape: &'t Tape<T>,
        batch: &Self::Batch,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<Var<'t, T>>;
}
