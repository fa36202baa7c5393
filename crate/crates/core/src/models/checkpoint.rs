//! Checkpoint container.
//!
//! ```text
//! viewadapt-checkpoint <manifest bytes>\n
//! <TOML manifest>
//! <little-endian tensor blobs>
//! ```
//!
//! The manifest holds the format version, the model and training
//! configuration, and an index of named tensors with their shape, precision
//! and byte range in the blob section. Loading is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use viewadapt_tensor::{Param, Scalar, Tensor};

use super::train::{evaluate, predict_proba, EvalReport, TrainConfig, Trainer};
use super::{VaCnn, VaRnn, VacnnConfig, VarnnConfig};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Module};
use crate::skeleton::SkeletonSequence;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "viewadapt-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    VaRnn,
    VaCnn,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::VaRnn => "va_rnn",
            ModelKind::VaCnn => "va_cnn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum AnyModel<T> {
    Rnn(VaRnn<T>),
    Cnn(VaCnn<T>),
}

impl<T: Scalar> AnyModel<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Rnn(_) => ModelKind::VaRnn,
            AnyModel::Cnn(_) => ModelKind::VaCnn,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            AnyModel::Rnn(m) => m.config.num_classes,
            AnyModel::Cnn(m) => m.config.num_classes,
        }
    }

    fn module(&self) -> &dyn Module<T> {
        match self {
            AnyModel::Rnn(m) => m,
            AnyModel::Cnn(m) => m,
        }
    }

    fn module_mut(&mut self) -> &mut dyn Module<T> {
        match self {
            AnyModel::Rnn(m) => m,
            AnyModel::Cnn(m) => m,
        }
    }

    pub fn evaluate(&self, data: &[SkeletonSequence]) -> Result<EvalReport> {
        match self {
            AnyModel::Rnn(m) => evaluate(m, data),
            AnyModel::Cnn(m) => evaluate(m, data),
        }
    }

    pub fn predict_proba(&self, data: &[SkeletonSequence]) -> Result<Vec<Vec<f64>>> {
        match self {
            AnyModel::Rnn(m) => predict_proba(m, data),
            AnyModel::Cnn(m) => predict_proba(m, data),
        }
    }

    /// `seq` moved into the viewpoint the model picks for it.
    pub fn transform_sequence(&self, seq: &SkeletonSequence) -> Result<SkeletonSequence> {
        match self {
            AnyModel::Rnn(m) => m.transform_sequence(seq),
            AnyModel::Cnn(m) => m.transform_sequence(seq),
        }
    }
}

/// A model with the optimizer and schedule position needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: AnyModel<T>,
    pub optimizer: Option<AdamState<T>>,
    /// Epochs completed.
    pub epoch: usize,
    /// Seed the model was initialized with. Together with `epoch` and the
    /// training seed this fixes every random draw of a resumed run.
    pub seed: u64,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    role: Role,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Normalization {
    c_min: f64,
    c_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    kind: ModelKind,
    dtype: String,
    epoch: usize,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<Normalization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rnn: Option<VarnnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cnn: Option<VacnnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerMeta>,
    #[serde(default)]
    tensor: Vec<TensorEntry>,
}

struct BlobWriter {
    entries: Vec<TensorEntry>,
    blob: Vec<u8>,
}

impl BlobWriter {
    fn push<T: Scalar>(&mut self, name: &str, role: Role, t: &Tensor<T>) {
        let offset = self.blob.len();
        for &v in t.data() {
            v.write_le(&mut self.blob);
        }
        self.entries.push(TensorEntry {
            name: name.to_owned(),
            role,
            shape: t.shape().to_vec(),
            dtype: T::DTYPE.to_string(),
            offset,
            len: self.blob.len() - offset,
        });
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Schema(format!("corrupt checkpoint: {}", msg.into()))
}

fn read_tensor<T: Scalar>(
    entries: &[TensorEntry],
    blob: &[u8],
    name: &str,
    role: Role,
    shape: &[usize],
) -> Result<Tensor<T>> {
    let e = entries
        .iter()
        .find(|e| e.name == name && e.role == role)
        .ok_or_else(|| corrupt(format!("missing {role:?} tensor `{name}`")))?;
    if e.shape != shape {
        return Err(corrupt(format!(
            "tensor `{name}` has shape {:?}, model expects {shape:?}",
            e.shape
        )));
    }
    if e.dtype != T::DTYPE.as_str() {
        return Err(corrupt(format!(
            "tensor `{name}` is {}, expected {}",
            e.dtype,
            T::DTYPE
        )));
    }
    let size = T::DTYPE.size_of();
    let n: usize = shape.iter().product();
    let end = e.offset.checked_add(e.len).filter(|&end| end <= blob.len());
    if e.len != n * size || end.is_none() {
        return Err(corrupt(format!(
            "tensor `{name}` byte range is out of bounds"
        )));
    }
    let data = blob[e.offset..e.offset + e.len]
        .chunks_exact(size)
        .map(T::read_le)
        .collect();
    Ok(Tensor::new(shape, data)?)
}

fn fill<T: Scalar>(
    params: Vec<&mut Param<T>>,
    entries: &[TensorEntry],
    blob: &[u8],
    role: Role,
) -> Result<()> {
    for p in params {
        p.value = read_tensor(entries, blob, &p.name, role, p.value.shape())?;
    }
    Ok(())
}

/// Splits a checkpoint into its manifest text and blob section.
fn split(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing header line"))?;
    let header =
        std::str::from_utf8(&bytes[..newline]).map_err(|_| corrupt("header is not text"))?;
    let len: usize = header
        .strip_prefix(MAGIC)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| corrupt(format!("bad header `{header}`")))?;
    let start = newline + 1;
    let end = start.checked_add(len).filter(|&e| e <= bytes.len());
    let text = end
        .and_then(|e| std::str::from_utf8(&bytes[start..e]).ok())
        .ok_or_else(|| corrupt("truncated manifest"))?;
    Ok((text, &bytes[start + len..]))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(model: AnyModel<T>, seed: u64) -> Self {
        Self {
            model,
            optimizer: None,
            epoch: 0,
            seed,
            train: None,
        }
    }

    /// Snapshot of a model after training with `trainer`.
    pub fn from_training(model: AnyModel<T>, seed: u64, trainer: &Trainer<T>) -> Self {
        Self {
            model,
            optimizer: Some(trainer.optimizer.clone()),
            epoch: trainer.epoch,
            seed,
            train: Some(trainer.config.clone()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let module = self.model.module();
        let mut w = BlobWriter {
            entries: Vec::new(),
            blob: Vec::new(),
        };
        let params = module.params();
        for p in &params {
            w.push(&p.name, Role::Param, &p.value);
        }
        for b in module.buffers() {
            w.push(&b.name, Role::Buffer, &b.value);
        }
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != params.len() {
                return Err(Error::State(
                    "optimizer state does not match the model".into(),
                ));
            }
            for ((p, m), v) in params.iter().zip(&opt.m).zip(&opt.v) {
                w.push(&p.name, Role::AdamM, m);
                w.push(&p.name, Role::AdamV, v);
            }
        }
        let (normalization, rnn, cnn) = match &self.model {
            AnyModel::Rnn(m) => (None, Some(m.config.clone()), None),
            AnyModel::Cnn(m) => (
                Some(Normalization {
                    c_min: m.c_min,
                    c_max: m.c_max,
                }),
                None,
                Some(m.config.clone()),
            ),
        };
        let manifest = Manifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: self.model.kind(),
            dtype: T::DTYPE.to_string(),
            epoch: self.epoch,
            seed: self.seed,
            normalization,
            rnn,
            cnn,
            train: self.train.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerMeta {
                config: o.config,
                step: o.step,
            }),
            tensor: w.entries,
        };
        let text = toml::to_string(&manifest)
            .map_err(|e| Error::invalid(format!("cannot serialize manifest: {e}")))?;
        let mut out = format!("{MAGIC} {}\n", text.len()).into_bytes();
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&w.blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (text, blob) = split(bytes)?;
        let manifest: Manifest =
            toml::from_str(text).map_err(|e| corrupt(format!("manifest: {e}")))?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        if manifest.dtype != T::DTYPE.as_str() {
            return Err(Error::Schema(format!(
                "checkpoint stores {} tensors, requested {}",
                manifest.dtype,
                T::DTYPE
            )));
        }
        let mut model = match (
            manifest.kind,
            &manifest.rnn,
            &manifest.cnn,
            manifest.normalization,
        ) {
            (ModelKind::VaRnn, Some(cfg), None, None) => {
                AnyModel::Rnn(VaRnn::new(cfg.clone(), manifest.seed)?)
            }
            (ModelKind::VaCnn, None, Some(cfg), Some(n)) => {
                AnyModel::Cnn(VaCnn::new(cfg.clone(), n.c_min, n.c_max, manifest.seed)?)
            }
            _ => {
                return Err(corrupt(format!(
                    "configuration does not match model kind {}",
                    manifest.kind
                )))
            }
        };
        let entries = &manifest.tensor;
        let module = model.module_mut();
        fill(module.params_mut(), entries, blob, Role::Param)?;
        fill(module.buffers_mut(), entries, blob, Role::Buffer)?;
        let optimizer = match manifest.optimizer {
            None => None,
            Some(meta) => {
                let params = module.params();
                let mut state = AdamState::new(meta.config, &params);
                state.step = meta.step;
                for (i, p) in params.iter().enumerate() {
                    state.m[i] = read_tensor(entries, blob, &p.name, Role::AdamM, p.value.shape())?;
                    state.v[i] = read_tensor(entries, blob, &p.name, Role::AdamV, p.value.shape())?;
                }
                Some(state)
            }
        };
        Ok(Self {
            model,
            optimizer,
            epoch: manifest.epoch,
            seed: manifest.seed,
            train: manifest.train,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Trainer positioned to continue from this checkpoint.
    pub fn resume_trainer(&self, config: TrainConfig) -> Result<Trainer<T>> {
        let optimizer = self
            .optimizer
            .clone()
            .ok_or_else(|| Error::State("checkpoint has no optimizer state".into()))?;
        Ok(Trainer {
            optimizer,
            epoch: self.epoch,
            config,
        })
    }
}

/// Reads only the model kind and precision from a checkpoint file.
pub fn peek_checkpoint(bytes: &[u8]) -> Result<(ModelKind, String)> {
    #[derive(Deserialize)]
    struct Head {
        kind: ModelKind,
        dtype: String,
    }
    let (text, _) = split(bytes)?;
    let head: Head = toml::from_str(text).map_err(|e| corrupt(format!("manifest: {e}")))?;
    Ok((head.kind, head.dtype))
}
