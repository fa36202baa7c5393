//! End-to-end checks of the two view-adaptive models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewadapt::geometry::{apply_view_transform, ViewParams};
use viewadapt::models::{
    encode_skeleton_map, evaluate, fuse_scores, map_transform, train, view_transform, AnyModel,
    Checkpoint, Classifier, SequenceBatch, TrainConfig, Trainer, VaCnn, VaRnn, VacnnConfig,
    VarnnConfig, CNN_WEIGHT, RNN_WEIGHT,
};
use viewadapt::nn::{check_param_grads, ForwardCtx, Module};
use viewadapt::skeleton::{FrameOfReference, Joint3, SkeletonFrame, SkeletonSequence};
use viewadapt_tensor::{grad_check_many, Scalar, Tape, Tensor, Var};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_sequence(
    r: &mut impl Rng,
    joints: usize,
    frames: usize,
    label: usize,
) -> SkeletonSequence {
    let frames = (0..frames)
        .map(|_| {
            SkeletonFrame::new(
                (0..joints)
                    .map(|_| {
                        Joint3::new(
                            r.random_range(-1.0..1.0),
                            r.random_range(-1.0..1.0),
                            r.random_range(-1.0..1.0),
                        )
                    })
                    .collect(),
            )
        })
        .collect();
    let names = (0..joints).map(|j| format!("j{j}")).collect();
    SkeletonSequence::new(frames, label, names, FrameOfReference::GlobalO).unwrap()
}

fn rnn_config() -> VarnnConfig {
    VarnnConfig {
        num_classes: 3,
        num_joints: 5,
        main_layers: 2,
        hidden: 6,
        va_hidden: 5,
        batch_size: 4,
        ..VarnnConfig::default()
    }
}

fn cnn_config() -> VacnnConfig {
    VacnnConfig {
        num_classes: 3,
        map_size: [32, 32],
        backbone_channels: [4, 4, 4, 4, 4],
        va_kernels: 4,
        batch_size: 4,
        ..VacnnConfig::default()
    }
}

fn logits<T: Scalar, M: Classifier<T>>(
    model: &M,
    seqs: &[&SkeletonSequence],
    ctx_seed: Option<u64>,
) -> Vec<f64> {
    let batch = model.prepare(seqs).unwrap();
    let tape = Tape::new();
    let mut ctx = match ctx_seed {
        Some(s) => ForwardCtx::train(s),
        None => ForwardCtx::eval(),
    };
    model
        .logits(&tape, &batch, &mut ctx)
        .unwrap()
        .value()
        .to_f64_vec()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn rnn_matches_baseline_at_initialization() {
    let cfg = rnn_config();
    let va = VaRnn::<f64>::new(cfg.clone(), 11).unwrap();
    let base = VaRnn::<f64>::new(cfg.without_view_adaptation(), 11).unwrap();
    let mut r = rng(1);
    for i in 0..10 {
        let seqs: Vec<SkeletonSequence> = (0..3)
            .map(|k| random_sequence(&mut r, 5, 4 + k + i % 3, k))
            .collect();
        let refs: Vec<&SkeletonSequence> = seqs.iter().collect();
        for ctx in [None, Some(i as u64)] {
            let d = max_abs_diff(&logits(&va, &refs, ctx), &logits(&base, &refs, ctx));
            assert!(d <= 1e-12, "difference {d}");
        }
    }
}

#[test]
fn cnn_matches_baseline_at_initialization() {
    let cfg = cnn_config();
    let va = VaCnn::<f64>::new(cfg.clone(), -1.0, 1.0, 5).unwrap();
    let base = VaCnn::<f64>::new(cfg.without_view_adaptation(), -1.0, 1.0, 5).unwrap();
    let mut r = rng(2);
    for i in 0..5 {
        let seqs: Vec<SkeletonSequence> = (0..3)
            .map(|k| random_sequence(&mut r, 5, 6 + k, k))
            .collect();
        let refs: Vec<&SkeletonSequence> = seqs.iter().collect();
        for ctx in [None, Some(i)] {
            let d = max_abs_diff(&logits(&va, &refs, ctx), &logits(&base, &refs, ctx));
            assert!(d <= 1e-12, "difference {d}");
        }
    }
}

#[test]
fn untrained_model_leaves_skeletons_unchanged() {
    let model = VaRnn::<f64>::new(rnn_config(), 3).unwrap();
    let seq = random_sequence(&mut rng(3), 5, 7, 0);
    let out = model.transform_sequence(&seq).unwrap();
    assert_eq!(out.frames, seq.frames);
    assert_eq!(out.frame_of_reference, FrameOfReference::Observation);
    let cnn = VaCnn::<f64>::new(cnn_config(), -1.0, 1.0, 3).unwrap();
    assert_eq!(cnn.transform_sequence(&seq).unwrap().frames, seq.frames);
}

#[test]
fn view_transform_op_gradients() {
    let mut r = rng(4);
    for _ in 0..5 {
        let x: Vec<f64> = (0..4 * 12).map(|_| r.random_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..4 * 6).map(|_| r.random_range(-1.5..1.5)).collect();
        let w: Vec<f64> = (0..4 * 12).map(|_| r.random_range(-1.0..1.0)).collect();
        let w = Tensor::from_f64(&[4, 12], &w).unwrap();
        let report = grad_check_many(
            |v: &[Var<'_, f64>]| {
                let y = view_transform(v[0], v[1])
                    .map_err(|e| viewadapt_tensor::TensorError::InvalidArgument(e.to_string()))?;
                y.mul(y.tape().constant(w.clone()))?.sum()
            },
            &[
                Tensor::from_f64(&[4, 12], &x).unwrap(),
                Tensor::from_f64(&[4, 6], &p).unwrap(),
            ],
            1e-6,
        )
        .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }
}

#[test]
fn map_transform_op_gradients() {
    let mut r = rng(5);
    let (b, h, w) = (2, 3, 4);
    let maps: Vec<f64> = (0..b * 3 * h * w)
        .map(|_| r.random_range(0.0..255.0))
        .collect();
    let p: Vec<f64> = (0..b * 6).map(|_| r.random_range(-1.0..1.0)).collect();
    let weights: Vec<f64> = (0..b * 3 * h * w)
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    let weights = Tensor::from_f64(&[b, 3, h, w], &weights).unwrap();
    let report = grad_check_many(
        |v: &[Var<'_, f64>]| {
            let y = map_transform(v[0], v[1], -1.5, 2.0)
                .map_err(|e| viewadapt_tensor::TensorError::InvalidArgument(e.to_string()))?;
            y.mul(y.tape().constant(weights.clone()))?.sum()
        },
        &[
            Tensor::from_f64(&[b, 3, h, w], &maps).unwrap(),
            Tensor::from_f64(&[b, 6], &p).unwrap(),
        ],
        1e-5,
    )
    .unwrap();
    assert!(report.passes(1e-5), "{report:?}");
}

#[test]
fn map_transform_agrees_with_skeleton_transform() {
    let mut r = rng(6);
    for _ in 0..50 {
        let seq = random_sequence(&mut r, 4, 5, 0);
        let p = ViewParams::new(
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
            [
                r.random_range(-0.5..0.5),
                r.random_range(-0.5..0.5),
                r.random_range(-0.5..0.5),
            ],
        );
        let map = encode_skeleton_map(&seq, -1.2, 1.3, false).unwrap();
        let decoded = map.transform(&p).unwrap().decode();
        for (f, d) in seq.frames.iter().zip(&decoded) {
            let expected = apply_view_transform(f, &p).unwrap();
            for (a, b) in expected.joints.iter().zip(&d.joints) {
                assert!((a - b).abs().max() < 1e-5);
            }
        }
    }
}

#[test]
fn fusion_hand_values_and_scale_invariance() {
    let f = fuse_scores(&[0.6, 0.4], &[0.2, 0.8], CNN_WEIGHT, RNN_WEIGHT).unwrap();
    assert!(
        (f[0] - 0.52).abs() < 1e-15 && (f[1] - 0.48).abs() < 1e-15,
        "{f:?}"
    );
    let mut r = rng(7);
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    for _ in 0..200 {
        let draw = |r: &mut ChaCha8Rng| {
            let raw: Vec<f64> = (0..5).map(|_| r.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let (a, b) = (draw(&mut r), draw(&mut r));
        let k = r.random_range(0.01..100.0);
        let base = fuse_scores(&a, &b, 4.0, 1.0).unwrap();
        let scaled = fuse_scores(&a, &b, 4.0 * k, k).unwrap();
        assert_eq!(argmax(&base), argmax(&scaled));
    }
}

/// Gives the zero-initialized view regressors small random weights so the
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

fn weighted<'t, T: Scalar>(y: Var<'t, T>) -> viewadapt::Result<Var<'t, T>> {
    let n = y.shape().iter().product::<usize>();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    Ok(y.mul(y.tape().constant(Tensor::from_f64(&y.shape(), &w)?))?
        .sum()?)
}

fn rnn_data() -> Vec<SkeletonSequence> {
    let mut r = rng(8);
    (0..3)
        .map(|k| random_sequence(&mut r, 5, 6 + 2 * k, k))
        .collect()
}

fn rnn_loss<'t, T: Scalar>(m: &VaRnn<T>, tape: &'t Tape<T>) -> viewadapt::Result<Var<'t, T>> {
    let data = rnn_data();
    let refs: Vec<&SkeletonSequence> = data.iter().collect();
    let batch = SequenceBatch::new(&refs, m.config.aggregation)?;
    let out = m.forward(tape, &batch, &mut ForwardCtx::train(9))?;
    weighted(out.logits)
}

fn tiny_rnn<T: Scalar>() -> VaRnn<T> {
    let mut m = VaRnn::new(
        VarnnConfig {
            dropout: 0.3,
            ..rnn_config()
        },
        21,
    )
    .unwrap();
    perturb_view_fc(m.params_mut(), 22);
    m
}

#[test]
fn rnn_end_to_end_gradients() {
    let mut m64 = tiny_rnn::<f64>();
    let mut ref64 = m64.clone();
    let double = check_param_grads(&mut m64, rnn_loss, &mut ref64, rnn_loss, 1e-5, 1).unwrap();
    assert!(double.passes(1e-5), "{double:?}");
    let mut m32 = tiny_rnn::<f32>();
    let mut ref_hi = tiny_rnn::<f64>();
    let single = check_param_grads(&mut m32, rnn_loss, &mut ref_hi, rnn_loss, 1e-5, 1).unwrap();
    assert!(single.passes(1e-3), "{single:?}");
}

fn cnn_loss<'t, T: Scalar>(m: &VaCnn<T>, tape: &'t Tape<T>) -> viewadapt::Result<Var<'t, T>> {
    let mut r = rng(10);
    let data: Vec<SkeletonSequence> = (0..2)
        .map(|k| random_sequence(&mut r, 5, 7 + k, k))
        .collect();
    let refs: Vec<&SkeletonSequence> = data.iter().collect();
    let batch = m.make_batch(&refs)?;
    let out = m.forward(tape, &batch, &mut ForwardCtx::train(11))?;
    weighted(out.logits)
}

fn tiny_cnn<T: Scalar>() -> VaCnn<T> {
    let mut m = VaCnn::new(cnn_config(), -1.0, 1.0, 23).unwrap();
    perturb_view_fc(m.params_mut(), 24);
    m
}

/// Max pooling and ReLU switch under larger probes on this tiny batch, so
/// the convolutional model uses a smaller difference step.
#[test]
fn cnn_end_to_end_gradients() {
    let mut m64 = tiny_cnn::<f64>();
    let mut ref64 = m64.clone();
    let double = check_param_grads(&mut m64, cnn_loss, &mut ref64, cnn_loss, 1e-6, 1).unwrap();
    assert!(double.passes(1e-5), "{double:?}");
    let mut m32 = tiny_cnn::<f32>();
    let mut ref_hi = tiny_cnn::<f64>();
    let single = check_param_grads(&mut m32, cnn_loss, &mut ref_hi, cnn_loss, 1e-6, 1).unwrap();
    assert!(single.passes(1e-3), "{single:?}");
}

/// Two classes separated by the sign of a constant offset on every joint.
fn toy_set(n: usize, seed: u64) -> Vec<SkeletonSequence> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let mut s = random_sequence(&mut r, 5, 6, label);
            let shift = if label == 0 { 0.6 } else { -0.6 };
            for f in &mut s.frames {
                for j in &mut f.joints {
                    *j *= 0.3;
                    j.x += shift;
                }
            }
            s
        })
        .collect()
}

fn toy_config() -> VarnnConfig {
    VarnnConfig {
        num_classes: 2,
        num_joints: 5,
        main_layers: 1,
        hidden: 8,
        va_hidden: 4,
        dropout: 0.0,
        lr: 0.01,
        batch_size: 4,
        ..VarnnConfig::default()
    }
}

/// First-epoch training loss of the toy run, recorded from this
/// implementation to catch silent behavior changes.
const TOY_FIRST_LOSS: f64 = 0.704_744_610_358_493_1;

#[test]
fn toy_training_converges() {
    let data = toy_set(16, 12);
    let mut model = VaRnn::<f64>::new(toy_config(), 13).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        seed: 14,
        augment: None,
    };
    let (_, logs) = train(&mut model, &data, &cfg).unwrap();
    for w in logs[..5].windows(2) {
        assert!(w[1].loss < w[0].loss, "{logs:?}");
    }
    assert!(
        (logs[0].loss - TOY_FIRST_LOSS).abs() < 1e-9,
        "{}",
        logs[0].loss
    );
    assert_eq!(evaluate(&model, &data).unwrap().accuracy, 1.0, "{logs:?}");
}

#[test]
fn evaluate_rejects_class_count_mismatch() {
    let model = VaRnn::<f64>::new(toy_config(), 1).unwrap();
    let mut data = toy_set(4, 1);
    data[0].label = 5;
    assert!(matches!(
        evaluate(&model, &data),
        Err(viewadapt::Error::Schema(_))
    ));
}

#[test]
fn uniform_model_scores_chance() {
    // all-zero classifier outputs uniform probabilities; ties go to class 0
    let mut model = VaRnn::<f64>::new(toy_config(), 1).unwrap();
    for p in model.classifier.params_mut() {
        p.value.fill(0.0);
    }
    let data = toy_set(10, 2);
    let report = evaluate(&model, &data).unwrap();
    assert_eq!(report.accuracy, 0.5);
    assert!(report.probabilities.iter().flatten().all(|&p| p == 0.5));
}

fn run_toy(seed: u64) -> (Vec<u8>, Vec<viewadapt::models::EpochLog>) {
    let data = toy_set(12, 15);
    let mut model = VaRnn::<f32>::new(
        VarnnConfig {
            dropout: 0.5,
            ..toy_config()
        },
        seed,
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed,
        augment: Some(viewadapt::geometry::AugmentRange::symmetric(45.0)),
    };
    let (trainer, logs) = train(&mut model, &data, &cfg).unwrap();
    let ckpt = Checkpoint::from_training(AnyModel::Rnn(model), seed, &trainer);
    (ckpt.to_bytes().unwrap(), logs)
}

#[test]
fn same_seed_training_is_bit_identical() {
    let (a, la) = run_toy(3);
    let (b, lb) = run_toy(3);
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let (c, _) = run_toy(4);
    assert_ne!(a, c);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = toy_set(8, 16);
    let mut model = VaCnn::<f32>::new(cnn_config(), -1.5, 1.5, 17).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        seed: 18,
        augment: None,
    };
    let (trainer, _) = train(&mut model, &data, &cfg).unwrap();
    model.zero_grad();
    let ckpt = Checkpoint::from_training(AnyModel::Cnn(model.clone()), 17, &trainer);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.to_bytes().unwrap(), ckpt.to_bytes().unwrap());
    let AnyModel::Cnn(restored) = &loaded.model else {
        panic!("wrong kind")
    };
    let refs: Vec<&SkeletonSequence> = data.iter().collect();
    let a = logits(&model, &refs, None);
    let b = logits(restored, &refs, None);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));

    // resuming continues the same schedule as uninterrupted training
    let mut resumed_model = restored.clone();
    let mut resumed = loaded.resume_trainer(cfg.clone()).unwrap();
    resumed.run_epoch(&mut resumed_model, &data).unwrap();
    let mut straight = model.clone();
    let mut t: Trainer<f32> = trainer.clone();
    t.run_epoch(&mut straight, &data).unwrap();
    assert_eq!(resumed_model, straight);
    assert_eq!(resumed, t);
}

#[test]
fn checkpoint_rejects_wrong_precision_and_garbage() {
    let model = VaRnn::<f32>::new(rnn_config(), 1).unwrap();
    let bytes = Checkpoint::new(AnyModel::Rnn(model), 1).to_bytes().unwrap();
    assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    assert!(Checkpoint::<f32>::from_bytes(b"not a checkpoint").is_err());
    assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}
