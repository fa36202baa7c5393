//! Gradient oracles: every hand-written derivative in the crate checked
//! against central finite differences on small fixed problems.
//!
//! Double-precision checks use a tolerance of `1e-5` (`1e-4` for the
//! frame-level view transform, whose loss is evaluated outside the tape).
//! Single-precision checks compare `f32` tape gradients against `f64`
//! differences of the same weights at `1e-3`.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewadapt_tensor::{grad_check_many, relative_error, Scalar, Tape, Tensor, TensorError, Var};

use crate::error::{Error, Result};
use crate::geometry::{apply_view_transform, backprop_view_transform, ViewParams};
use crate::models::{
    map_transform, view_transform, SequenceBatch, VaCnn, VaRnn, VacnnConfig, VarnnConfig,
};
use crate::nn::{
    check_param_grads, uniform, BatchNormLayer, Conv2dLayer, DropoutLayer, FcLayer, ForwardCtx,
    LstmLayer, LstmState, MaxPoolLayer, Module, ParamCheck,
};
use crate::skeleton::{FrameOfReference, Joint3, SkeletonFrame, SkeletonSequence};

pub const DOUBLE_TOLERANCE: f64 = 1e-5;
pub const SINGLE_TOLERANCE: f64 = 1e-3;
pub const VIEW_BACKPROP_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        })
    }
}

/// Result of one oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub name: String,
    pub precision: Precision,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl std::fmt::Display for OracleOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} [{}] max_rel_error={:.3e} tolerance={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.precision,
            self.max_rel_error,
            self.tolerance
        )
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tensor_err(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::InvalidArgument(other.to_string()),
    }
}

fn outcome(name: &str, precision: Precision, max_rel_error: f64) -> OracleOutcome {
    let tolerance = match precision {
        Precision::Double => DOUBLE_TOLERANCE,
        Precision::Single => SINGLE_TOLERANCE,
    };
    OracleOutcome {
        name: name.into(),
        precision,
        max_rel_error,
        tolerance,
    }
}

fn random_frame(r: &mut impl Rng, joints: usize, bound: f64) -> SkeletonFrame {
    let mut coord = || r.random_range(-bound..bound);
    SkeletonFrame::new(
        (0..joints)
            .map(|_| Joint3::new(coord(), coord(), coord()))
            .collect(),
    )
}

fn random_sequence(
    r: &mut impl Rng,
    joints: usize,
    frames: usize,
    label: usize,
) -> SkeletonSequence {
    let frames = (0..frames).map(|_| random_frame(r, joints, 1.0)).collect();
    let names = (0..joints).map(|j| format!("j{j}")).collect();
    SkeletonSequence {
        frames,
        label,
        joint_names: names,
        frame_of_reference: FrameOfReference::GlobalO,
        subject: 0,
        view: String::new(),
    }
}

/// Analytic backprop through `v' = R (v - d)` against differences of the
/// linear loss `Σ_j eps'_j · v'_j`, over `configs` random frames and views.
pub fn view_backprop_oracle(configs: usize, seed: u64) -> Result<OracleOutcome> {
    let mut r = rng(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let joints = r.random_range(2..26);
        let frame = random_frame(&mut r, joints, 1.5);
        let p = ViewParams::new(
            r.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            r.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            r.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            [
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            ],
        );
        let eps: Vec<Vector3<f64>> = random_frame(&mut r, joints, 1.5).joints;
        let loss = |f: &SkeletonFrame, p: &ViewParams| -> Result<f64> {
            Ok(apply_view_transform(f, p)?
                .joints
                .iter()
                .zip(&eps)
                .map(|(v, e)| v.dot(e))
                .sum())
        };
        let g = backprop_view_transform(&eps, &frame, &p)?;
        let base = p.to_array();
        for (k, &a) in g.params_array().iter().enumerate() {
            let (mut up, mut down) = (base, base);
            up[k] += h;
            down[k] -= h;
            let n = (loss(&frame, &ViewParams::from_slice(&up)?)?
                - loss(&frame, &ViewParams::from_slice(&down)?)?)
                / (2.0 * h);
            worst = worst.max(relative_error(a, n));
        }
        for j in 0..joints {
            for c in 0..3 {
                let (mut up, mut down) = (frame.clone(), frame.clone());
                up.joints[j][c] += h;
                down.joints[j][c] -= h;
                let n = (loss(&up, &p)? - loss(&down, &p)?) / (2.0 * h);
                worst = worst.max(relative_error(g.joints[j][c], n));
            }
        }
    }
    Ok(OracleOutcome {
        name: "view_transform.backprop".into(),
        precision: Precision::Double,
        max_rel_error: worst,
        tolerance: VIEW_BACKPROP_TOLERANCE,
    })
}

fn fixed_weights(shape: &[usize]) -> Result<Tensor<f64>> {
    let n = shape.iter().product::<usize>();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    Ok(Tensor::from_f64(shape, &w)?)
}

/// Fixed pseudo-random weighting of an output, so every gradient entry is
/// generic.
fn weighted<'t, T: Scalar>(y: Var<'t, T>) -> Result<Var<'t, T>> {
    let w = fixed_weights(&y.shape())?.cast();
    Ok(y.mul(y.tape().constant(w))?.sum()?)
}

fn input<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    uniform::<f64>(shape, 1.0, &mut rng(seed)).cast()
}

fn view_op_oracle() -> Result<OracleOutcome> {
    let mut r = rng(4);
    let x = Tensor::from_f64(
        &[4, 12],
        &(0..48)
            .map(|_| r.random_range(-1.0..1.0))
            .collect::<Vec<_>>(),
    )?;
    let p = Tensor::from_f64(
        &[4, 6],
        &(0..24)
            .map(|_| r.random_range(-1.5..1.5))
            .collect::<Vec<_>>(),
    )?;
    let report = grad_check_many(
        |v: &[Var<'_, f64>]| {
            view_transform(v[0], v[1])
                .and_then(weighted)
                .map_err(tensor_err)
        },
        &[x, p],
        1e-6,
    )?;
    Ok(outcome(
        "view_transform.tape",
        Precision::Double,
        report.max_rel_error,
    ))
}

fn map_op_oracle() -> Result<OracleOutcome> {
    let mut r = rng(5);
    let n = 2 * 3 * 3 * 4;
    let maps = Tensor::from_f64(
        &[2, 3, 3, 4],
        &(0..n)
            .map(|_| r.random_range(0.0..255.0))
            .collect::<Vec<_>>(),
    )?;
    let p = Tensor::from_f64(
        &[2, 6],
        &(0..12)
            .map(|_| r.random_range(-1.0..1.0))
            .collect::<Vec<_>>(),
    )?;
    let report = grad_check_many(
        |v: &[Var<'_, f64>]| {
            map_transform(v[0], v[1], -1.5, 2.0)
                .and_then(weighted)
                .map_err(tensor_err)
        },
        &[maps, p],
        1e-5,
    )?;
    Ok(outcome(
        "map_transform.tape",
        Precision::Double,
        report.max_rel_error,
    ))
}

/// Parameter gradients of a module in both precisions.
fn module_oracles<M64, M32, F64, F32>(
    name: &str,
    make64: impl Fn() -> M64,
    make32: impl Fn() -> M32,
    loss64: F64,
    loss32: F32,
    step: f64,
) -> Result<[OracleOutcome; 2]>
where
    M64: Module<f64>,
    M32: Module<f32>,
    F64: for<'t> Fn(&M64, &'t Tape<f64>) -> Result<Var<'t, f64>> + Copy,
    F32: for<'t> Fn(&M32, &'t Tape<f32>) -> Result<Var<'t, f32>>,
{
    let (mut m, mut reference) = (make64(), make64());
    let double: ParamCheck = check_param_grads(&mut m, loss64, &mut reference, loss64, step, 1)?;
    let (mut m, mut reference) = (make32(), make64());
    let single = check_param_grads(&mut m, loss32, &mut reference, loss64, step, 1)?;
    Ok([
        outcome(name, Precision::Double, double.max_rel_error),
        outcome(name, Precision::Single, single.max_rel_error),
    ])
}

fn fc_loss<'t, T: Scalar>(m: &FcLayer<T>, tape: &'t Tape<T>) -> Result<Var<'t, T>> {
    weighted(m.forward(tape, tape.constant(input(&[3, 4], 1)))?)
}

fn lstm_loss<'t, T: Scalar>(m: &LstmLayer<T>, tape: &'t Tape<T>) -> Result<Var<'t, T>> {
    // a non-zero initial state exercises the recurrent weights from step one
    let state = LstmState {
        h: tape.constant(input(&[2, 4], 5)),
        c: tape.constant(input(&[2, 4], 6)),
    };
    let mut s = state;
    for t in 0..3 {
        s = m.step(tape, tape.constant(input(&[2, 3], 7 + t)), s)?;
    }
    let seq = m.forward_sequence(tape, tape.constant(input(&[3 * 2, 3], 3)), 3)?;
    weighted(Var::concat(&[s.h, s.c], 1)?)?
        .add(weighted(seq)?)
        .map_err(Error::from)
}

fn conv_loss<'t, T: Scalar>(m: &Conv2dLayer<T>, tape: &'t Tape<T>) -> Result<Var<'t, T>> {
    weighted(m.forward(tape, tape.constant(input(&[2, 2, 7, 6], 10)))?)
}

fn bn_train_loss<'t, T: Scalar>(m: &BatchNormLayer<T>, tape: &'t Tape<T>) -> Result<Var<'t, T>> {
    weighted(m.forward(
        tape,
        tape.constant(input(&[3, 3, 2, 2], 12)),
        &mut ForwardCtx::train(0),
    )?)
}

fn bn_eval_loss<'t, T: Scalar>(m: &BatchNormLayer<T>, tape: &'t Tape<T>) -> Result<Var<'t, T>> {
    weighted(m.forward(
        tape,
        tape.constant(input(&[3, 3, 2, 2], 14)),
        &mut ForwardCtx::eval(),
    )?)
}

fn perturbed_bn<T: Scalar>() -> BatchNormLayer<T> {
    let mut r = rng(50);
    let mut bn = BatchNormLayer::new("bn", 3);
    bn.gamma.value = uniform::<f64>(&[3], 1.0, &mut r).map(|v| v + 1.5).cast();
    bn.beta.value = uniform(&[3], 1.0, &mut r);
    bn.running_mean.value = uniform(&[3], 0.5, &mut r);
    bn.running_var.value = uniform::<f64>(&[3], 0.5, &mut r).map(|v| v + 1.0).cast();
    bn
}

/// Input gradients of the parameter-free and parameterized layers.
fn input_oracle() -> Result<OracleOutcome> {
    let mut r = rng(16);
    let fc = FcLayer::<f64>::new("fc", 4, 3, &mut r);
    let lstm = LstmLayer::<f64>::new("l", 3, 4, &mut r);
    let conv = Conv2dLayer::<f64>::new("c", 2, 2, 3, 1, 1, &mut r);
    let bn = perturbed_bn::<f64>();
    let dropout = DropoutLayer::new(0.3)?;
    let report = grad_check_many(
        |v| {
            let tape = v[0].tape();
            let run = || -> Result<Var<'_, f64>> {
                let mut ctx = ForwardCtx::train(4);
                let terms = [
                    weighted(fc.forward(tape, v[0])?)?,
                    weighted(lstm.forward_sequence(tape, v[1], 3)?)?,
                    weighted(conv.forward(tape, v[2])?)?,
                    weighted(bn.forward(tape, v[3], &mut ctx)?)?,
                    weighted(MaxPoolLayer::new(2, 2).forward(v[4])?)?,
                    weighted(dropout.forward(v[5], &mut ctx)?)?,
                ];
                let mut total = terms[0];
                for t in &terms[1..] {
                    total = total.add(*t)?;
                }
                Ok(total)
            };
            run().map_err(tensor_err)
        },
        &[
            input(&[2, 4], 20),
            input(&[3 * 2, 3], 21),
            input(&[1, 2, 4, 4], 22),
            input(&[2, 3, 2, 2], 23),
            input(&[1, 2, 4, 4], 24),
            input(&[5, 4], 25),
        ],
        1e-5,
    )?;
    Ok(outcome(
        "layers.input",
        Precision::Double,
        report.max_rel_error,
    ))
}

/// Gives zero-initialized view regressors small random weights so the
/// view path carries gradient.
fn perturb_view_fc<T: Scalar>(params: Vec<&mut viewadapt_tensor::Param<T>>, seed: u64) {
    let mut r = rng(seed);
    for p in params {
        if p.name.starts_with("va.") && p.name.contains("fc") {
            for v in p.value.data_mut() {
                *v = T::of(r.random_range(-0.3..0.3));
            }
        }
    }
}

fn tiny_rnn<T: Scalar>() -> VaRnn<T> {
    let config = VarnnConfig {
        num_classes: 3,
        num_joints: 5,
        main_layers: 2,
        hidden: 6,
        va_hidden: 5,
        dropout: 0.3,
        batch_size: 4,
        ..VarnnConfig::default()
    };
    let mut m = VaRnn::new(config, 21).expect("valid tiny config");
    perturb_view_fc(m.params_mut(), 22);
    m
}

fn rnn_loss<'t, T: Scalar>(m: &VaRnn<T>, tape: &'t Tape<T>) -> Result<Var<'t, T>> {
    let mut r = rng(8);
    let data: Vec<SkeletonSequence> = (0..3)
        .map(|k| random_sequence(&mut r, 5, 6 + 2 * k, k))
        .collect();
    let refs: Vec<&SkeletonSequence> = data.iter().collect();
    let batch = SequenceBatch::new(&refs, m.config.aggregation)?;
    weighted(m.forward(tape, &batch, &mut ForwardCtx::train(9))?.logits)
}

fn tiny_cnn<T: Scalar>() -> VaCnn<T> {
    let config = VacnnConfig {
        num_classes: 3,
        map_size: [32, 32],
        backbone_channels: [4; 5],
        va_kernels: 4,
        batch_size: 4,
        ..VacnnConfig::default()
    };
    let mut m = VaCnn::new(config, -1.0, 1.0, 23).expect("valid tiny config");
    perturb_view_fc(m.params_mut(), 24);
    m
}

fn cnn_loss<'t, T: Scalar>(m: &VaCnn<T>, tape: &'t Tape<T>) -> Result<Var<'t, T>> {
    let mut r = rng(10);
    let data: Vec<SkeletonSequence> = (0..2)
        .map(|k| random_sequence(&mut r, 5, 7 + k, k))
        .collect();
    let refs: Vec<&SkeletonSequence> = data.iter().collect();
    let batch = m.make_batch(&refs)?;
    weighted(m.forward(tape, &batch, &mut ForwardCtx::train(11))?.logits)
}

/// Every layer and both end-to-end models, in both precisions.
pub fn layer_and_model_oracles() -> Result<Vec<OracleOutcome>> {
    let mut out = vec![input_oracle()?];
    out.extend(module_oracles(
        "fc",
        || FcLayer::new("fc", 4, 3, &mut rng(50)),
        || FcLayer::new("fc", 4, 3, &mut rng(50)),
        fc_loss::<f64>,
        fc_loss::<f32>,
        1e-5,
    )?);
    out.extend(module_oracles(
        "lstm",
        || LstmLayer::new("lstm", 3, 4, &mut rng(51)),
        || LstmLayer::new("lstm", 3, 4, &mut rng(51)),
        lstm_loss::<f64>,
        lstm_loss::<f32>,
        1e-5,
    )?);
    out.extend(module_oracles(
        "conv2d",
        || Conv2dLayer::new("conv", 2, 3, 3, 2, 1, &mut rng(52)),
        || Conv2dLayer::new("conv", 2, 3, 3, 2, 1, &mut rng(52)),
        conv_loss::<f64>,
        conv_loss::<f32>,
        1e-5,
    )?);
    out.extend(module_oracles(
        "batch_norm.train",
        perturbed_bn,
        perturbed_bn,
        bn_train_loss::<f64>,
        bn_train_loss::<f32>,
        1e-5,
    )?);
    out.extend(module_oracles(
        "batch_norm.eval",
        perturbed_bn,
        perturbed_bn,
        bn_eval_loss::<f64>,
        bn_eval_loss::<f32>,
        1e-5,
    )?);
    out.extend(module_oracles(
        "va_rnn",
        tiny_rnn,
        tiny_rnn,
        rnn_loss::<f64>,
        rnn_loss::<f32>,
        1e-5,
    )?);
    // max pooling and ReLU switch under larger probes on this tiny batch
    out.extend(module_oracles(
        "va_cnn",
        tiny_cnn,
        tiny_cnn,
        cnn_loss::<f64>,
        cnn_loss::<f32>,
        1e-6,
    )?);
    Ok(out)
}

/// The full suite: the frame-level view transform, both transform ops,
/// every layer and both models.
pub fn run_gradient_oracles() -> Result<Vec<OracleOutcome>> {
    let mut out = vec![
        view_backprop_oracle(100, 12)?,
        view_op_oracle()?,
        map_op_oracle()?,
    ];
    out.extend(layer_and_model_oracles()?);
    Ok(out)
}
