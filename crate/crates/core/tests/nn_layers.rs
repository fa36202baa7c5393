//! Layer forward passes against scalar oracles, optimizer arithmetic, and
//! layer gradients against finite differences.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewadapt::nn::{
    check_param_grads, clip_gradients, global_grad_norm, uniform, AdamConfig, AdamState,
    BatchNormLayer, Conv2dLayer, DropoutLayer, FcLayer, ForwardCtx, LstmLayer, LstmState,
    MaxPoolLayer, Module,
};
use viewadapt_tensor::{conv_out_len, softmax_rows, Param, Scalar, Tape, Tensor, Var};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn lstm_step_matches_scalar_evaluation() {
    let mut r = rng(1);
    let (input, hidden, batch) = (3, 2, 2);
    let layer = LstmLayer::<f64>::new("l", input, hidden, &mut r);
    let x: Tensor<f64> = uniform(&[batch, input], 1.0, &mut r);
    let h0: Tensor<f64> = uniform(&[batch, hidden], 1.0, &mut r);
    let c0: Tensor<f64> = uniform(&[batch, hidden], 1.0, &mut r);
    let tape = Tape::new();
    let state = LstmState {
        h: tape.constant(h0.clone()),
        c: tape.constant(c0.clone()),
    };
    let out = layer.step(&tape, tape.constant(x.clone()), state).unwrap();
    let (w_ih, w_hh, b) = (
        layer.w_ih.value.data(),
        layer.w_hh.value.data(),
        layer.bias.value.data(),
    );
    for n in 0..batch {
        for k in 0..hidden {
            let pre = |gate: usize| {
                let row = gate * hidden + k;
                let mut s = b[row];
                for j in 0..input {
                    s += w_ih[row * input + j] * x.data()[n * input + j];
                }
                for j in 0..hidden {
                    s += w_hh[row * hidden + j] * h0.data()[n * hidden + j];
                }
                s
            };
            let (i, f, g, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
            let c = f * c0.data()[n * hidden + k] + i * g;
            let h = o * c.tanh();
            assert!((out.c.value().data()[n * hidden + k] - c).abs() < 1e-14);
            assert!((out.h.value().data()[n * hidden + k] - h).abs() < 1e-14);
        }
    }
}

#[test]
fn fc_matches_manual_dot_products() {
    let mut r = rng(2);
    let fc = FcLayer::<f64>::new("fc", 4, 3, &mut r);
    let x: Tensor<f64> = uniform(&[2, 4], 2.0, &mut r);
    let tape = Tape::new();
    let y = fc.forward(&tape, tape.constant(x.clone())).unwrap().value();
    for n in 0..2 {
        for o in 0..3 {
            let mut s = fc.bias.value.data()[o];
            for i in 0..4 {
                s += fc.weight.value.data()[o * 4 + i] * x.data()[n * 4 + i];
            }
            assert!((y.data()[n * 3 + o] - s).abs() < 1e-14);
        }
    }
}

#[test]
fn fc_identity_weights_pass_through() {
    let mut fc = FcLayer::<f64>::zeros("fc", 3, 3);
    fc.weight.value = Tensor::eye(3);
    let tape = Tape::new();
    let x = Tensor::from_f64(&[1, 3], &[0.1, -4.0, 2.5]).unwrap();
    assert_eq!(
        fc.forward(&tape, tape.constant(x.clone())).unwrap().value(),
        x
    );
}

#[test]
fn conv_output_size_follows_floor_formula() {
    for n in 3..30 {
        for k in 1..=n.min(7) {
            for s in 1..4 {
                assert_eq!(conv_out_len(n, k, s, 0), Some((n - k) / s + 1));
            }
        }
    }
    let mut r = rng(3);
    let conv = Conv2dLayer::<f64>::new("c", 1, 2, 3, 2, 0, &mut r);
    let tape = Tape::new();
    let y = conv
        .forward(&tape, tape.constant(Tensor::ones(&[1, 1, 5, 5])))
        .unwrap();
    assert_eq!(y.shape(), vec![1, 2, 2, 2]);
}

#[test]
fn conv_matches_direct_sum() {
    let mut r = rng(4);
    let conv = Conv2dLayer::<f64>::new("c", 2, 3, 3, 2, 1, &mut r);
    let x: Tensor<f64> = uniform(&[2, 2, 6, 5], 1.0, &mut r);
    let tape = Tape::new();
    let y = conv
        .forward(&tape, tape.constant(x.clone()))
        .unwrap()
        .value();
    let (oh, ow) = conv.output_hw(6, 5).unwrap();
    assert_eq!(y.shape(), &[2, 3, oh, ow]);
    let w = &conv.weight.value;
    for n in 0..2 {
        for k in 0..3 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = conv.bias.as_ref().unwrap().value.data()[k];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= 6 || ix >= 5 {
                                    continue;
                                }
                                s += w.get(&[k, c, ky, kx]).unwrap()
                                    * x.get(&[n, c, iy as usize, ix as usize]).unwrap();
                            }
                        }
                    }
                    assert!((y.get(&[n, k, oy, ox]).unwrap() - s).abs() < 1e-13);
                }
            }
        }
    }
}

#[test]
fn batch_norm_train_and_eval_statistics() {
    let bn = BatchNormLayer::<f64>::new("bn", 2);
    let mut r = rng(5);
    let x: Tensor<f64> = uniform(&[4, 2, 3, 3], 3.0, &mut r);
    let tape = Tape::new();
    let mut ctx = ForwardCtx::train(0);
    let y = bn
        .forward(&tape, tape.constant(x.clone()), &mut ctx)
        .unwrap()
        .value();
    for c in 0..2 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| (0..9).map(move |i| (n, i)))
            .map(|(n, i)| y.data()[(n * 2 + c) * 9 + i])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }
    assert_eq!(ctx.moments().len(), 1);
    let mut eval = ForwardCtx::eval();
    let y_eval = bn
        .forward(&tape, tape.constant(x.clone()), &mut eval)
        .unwrap()
        .value();
    let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
    for (a, b) in y_eval.data().iter().zip(x.data()) {
        assert!((a - b * expect).abs() < 1e-12);
    }
    assert!(eval.moments().is_empty());
}

#[test]
fn dropout_is_unbiased_in_training() {
    let d = DropoutLayer::new(0.5).unwrap();
    let n = 40_000;
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[n], 1.5));
    let mut ctx = ForwardCtx::train(9);
    let y = d.forward(x, &mut ctx).unwrap().value();
    let mean = y.data().iter().sum::<f64>() / n as f64;
    // each output is 0 or 3 with equal probability: sd 1.5
    let sigma = 1.5 / (n as f64).sqrt();
    assert!((mean - 1.5).abs() < 3.0 * sigma, "mean {mean}");
    assert!(y.data().iter().all(|&v| v == 0.0 || v == 3.0));
}

#[test]
fn max_pool_picks_window_maxima() {
    let tape = Tape::<f64>::new();
    let x = Tensor::from_f64(&[1, 1, 2, 4], &[1.0, 5.0, -1.0, 0.0, 3.0, 2.0, 4.0, -2.0]).unwrap();
    let y = MaxPoolLayer::new(2, 2)
        .forward(tape.constant(x))
        .unwrap()
        .value();
    assert_eq!(y.data(), &[5.0, 4.0]);
}

#[test]
fn softmax_cross_entropy_reference_values() {
    let tape = Tape::<f64>::new();
    let uniform_logits = tape.constant(Tensor::full(&[1, 5], 0.7));
    let loss = uniform_logits
        .softmax_cross_entropy(&[2])
        .unwrap()
        .item()
        .unwrap();
    assert!((loss - 5.0f64.ln()).abs() < 1e-14);

    let mut prev = f64::INFINITY;
    for margin in [1.0, 5.0, 20.0, 60.0] {
        let l = tape
            .constant(Tensor::from_f64(&[1, 3], &[margin, 0.0, 0.0]).unwrap())
            .softmax_cross_entropy(&[0])
            .unwrap()
            .item()
            .unwrap();
        assert!(l < prev);
        prev = l;
    }
    assert!(prev < 1e-20);

    let mut r = rng(6);
    let logits: Tensor<f64> = uniform(&[4, 6], 4.0, &mut r);
    let labels = [0, 5, 2, 2];
    let got = tape
        .constant(logits.clone())
        .softmax_cross_entropy(&labels)
        .unwrap()
        .item()
        .unwrap();
    let naive: f64 = logits
        .data()
        .chunks(6)
        .zip(labels)
        .map(|(row, l)| -(row[l].exp() / row.iter().map(|v| v.exp()).sum::<f64>()).ln())
        .sum::<f64>()
        / 4.0;
    assert!((got - naive).abs() < 1e-12);
}

#[test]
fn softmax_cross_entropy_rejects_bad_label() {
    let tape = Tape::<f64>::new();
    assert!(tape
        .constant(Tensor::zeros(&[1, 3]))
        .softmax_cross_entropy(&[3])
        .is_err());
}

#[test]
fn softmax_is_stable_for_huge_logits() {
    let mut r = rng(7);
    for _ in 0..100 {
        let near: Vec<f64> = (0..8).map(|_| 1e4 + r.random_range(-3.0..3.0)).collect();
        let p = softmax_rows(&Tensor::<f32>::from_f64(&[1, 8], &near).unwrap()).unwrap();
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!((p.data().iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        let wide: Vec<f64> = (0..8).map(|_| r.random_range(-1e4..1e4)).collect();
        let q = softmax_rows(&Tensor::<f64>::from_f64(&[1, 8], &wide).unwrap()).unwrap();
        assert!(q
            .data()
            .iter()
            .all(|&v| v.is_finite() && (0.0..=1.0).contains(&v)));
        assert!((q.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn adam_three_steps_match_hand_computation() {
    let mut p = Param::new("w", Tensor::<f64>::scalar(1.0));
    let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &[&p]);
    let expected = [0.900000002, 0.8654394181165108, 0.8109953836811554];
    for (g, want) in [0.5, -0.2, 0.3].into_iter().zip(expected) {
        p.grad = Tensor::scalar(g);
        adam.update(&mut [&mut p]).unwrap();
        assert!((p.value.item().unwrap() - want).abs() < 1e-15);
    }
    assert_eq!(adam.step, 3);
}

#[test]
fn adam_constant_gradient_steps_approach_lr() {
    let mut p = Param::new("w", Tensor::<f64>::scalar(0.0));
    let mut adam = AdamState::new(AdamConfig::with_lr(0.01), &[&p]);
    let mut last = 0.0;
    for _ in 0..5000 {
        p.grad = Tensor::scalar(-3.0);
        let before = p.value.item().unwrap();
        adam.update(&mut [&mut p]).unwrap();
        last = p.value.item().unwrap() - before;
    }
    assert!((last - 0.01).abs() < 1e-6, "{last}");
}

fn param_with_grad(data: Vec<f64>) -> Param<f64> {
    let mut p = Param::new("p", Tensor::zeros(&[data.len()]));
    p.grad = Tensor::vector(data);
    p
}

proptest! {
    #[test]
    fn clipping_bounds_norm_and_preserves_direction(
        a in proptest::collection::vec(-50.0f64..50.0, 1..20),
        b in proptest::collection::vec(-50.0f64..50.0, 1..20),
    ) {
        let mut pa = param_with_grad(a.clone());
        let mut pb = param_with_grad(b.clone());
        let s = clip_gradients(&mut [&mut pa, &mut pb], 1.0);
        prop_assert!(global_grad_norm(&[&mut pa, &mut pb]) <= 1.0 + 1e-6);
        prop_assert!(s > 0.0 && s <= 1.0);
        for (orig, now) in a.iter().chain(&b).zip(pa.grad.data().iter().chain(pb.grad.data())) {
            prop_assert!((orig * s - now).abs() <= 1e-12 * orig.abs().max(1.0));
        }
        let snapshot = (pa.grad.clone(), pb.grad.clone());
        let s2 = clip_gradients(&mut [&mut pa, &mut pb], 1.0);
        prop_assert!((s2 - 1.0).abs() < 1e-9);
        for (x, y) in snapshot.0.data().iter().zip(pa.grad.data()) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-12));
        }
    }
}

/// Fixed random weighting of a layer output, so every gradient entry is
/// generic.
fn weighted_sum<'t, T: Scalar>(y: Var<'t, T>, seed: u64) -> viewadapt::Result<Var<'t, T>> {
    let w: Tensor<T> = uniform(&y.shape(), 1.0, &mut rng(seed));
    Ok(y.mul(y.tape().constant(w))?.sum()?)
}

fn input<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    uniform::<f64>(shape, 1.0, &mut rng(seed)).cast()
}

const F64_TOL: f64 = 1e-5;
const F32_TOL: f64 = 1e-3;

macro_rules! check_layer {
    ($ty:ident, $make:expr, $loss:expr) => {{
        let mut m64: $ty<f64> = $make(ChaCha8Rng::seed_from_u64(50));
        let mut ref64 = m64.clone();
        let double = check_param_grads(&mut m64, $loss, &mut ref64, $loss, 1e-5, 1).unwrap();
        assert!(double.passes(F64_TOL), "double: {double:?}");
        let mut m32: $ty<f32> = $make(ChaCha8Rng::seed_from_u64(50));
        let mut ref_hi: $ty<f64> = $make(ChaCha8Rng::seed_from_u64(50));
        let single = check_param_grads(&mut m32, $loss, &mut ref_hi, $loss, 1e-5, 1).unwrap();
        assert!(single.passes(F32_TOL), "single: {single:?}");
    }};
}

#[test]
fn fc_gradients() {
    fn loss<'t, T: Scalar>(m: &FcLayer<T>, tape: &'t Tape<T>) -> viewadapt::Result<Var<'t, T>> {
        let y = m.forward(tape, tape.constant(input(&[3, 4], 1)))?;
        weighted_sum(y, 2)
    }
    check_layer!(
        FcLayer,
        |mut r: ChaCha8Rng| FcLayer::new("fc", 4, 3, &mut r),
        loss
    );
}

#[test]
fn lstm_gradients() {
    fn loss<'t, T: Scalar>(m: &LstmLayer<T>, tape: &'t Tape<T>) -> viewadapt::Result<Var<'t, T>> {
        let y = m.forward_sequence(tape, tape.constant(input(&[4 * 2, 3], 3)), 4)?;
        weighted_sum(y, 4)
    }
    check_layer!(
        LstmLayer,
        |mut r: ChaCha8Rng| LstmLayer::new("lstm", 3, 5, &mut r),
        loss
    );
}

#[test]
fn lstm_step_gradients_include_state() {
    // the loss depends on a non-zero initial state through w_hh
    fn loss<'t, T: Scalar>(m: &LstmLayer<T>, tape: &'t Tape<T>) -> viewadapt::Result<Var<'t, T>> {
        let state = LstmState {
            h: tape.constant(input(&[2, 4], 5)),
            c: tape.constant(input(&[2, 4], 6)),
        };
        let s = m.step(tape, tape.constant(input(&[2, 3], 7)), state)?;
        let s = m.step(tape, tape.constant(input(&[2, 3], 8)), s)?;
        let hc = Var::concat(&[s.h, s.c], 1)?;
        weighted_sum(hc, 9)
    }
    check_layer!(
        LstmLayer,
        |mut r: ChaCha8Rng| LstmLayer::new("lstm", 3, 4, &mut r),
        loss
    );
}

#[test]
fn conv_gradients() {
    fn loss<'t, T: Scalar>(m: &Conv2dLayer<T>, tape: &'t Tape<T>) -> viewadapt::Result<Var<'t, T>> {
        let y = m.forward(tape, tape.constant(input(&[2, 2, 7, 6], 10)))?;
        weighted_sum(y, 11)
    }
    check_layer!(
        Conv2dLayer,
        |mut r: ChaCha8Rng| Conv2dLayer::new("conv", 2, 3, 3, 2, 1, &mut r),
        loss
    );
}

fn perturbed_bn<T: Scalar>(mut r: ChaCha8Rng) -> BatchNormLayer<T> {
    let mut bn = BatchNormLayer::new("bn", 3);
    bn.gamma.value = uniform::<f64>(&[3], 1.0, &mut r).map(|v| v + 1.5).cast();
    bn.beta.value = uniform(&[3], 1.0, &mut r);
    bn.running_mean.value = uniform(&[3], 0.5, &mut r);
    bn.running_var.value = uniform::<f64>(&[3], 0.5, &mut r).map(|v| v + 1.0).cast();
    bn
}

#[test]
fn batch_norm_train_gradients() {
    fn loss<'t, T: Scalar>(
        m: &BatchNormLayer<T>,
        tape: &'t Tape<T>,
    ) -> viewadapt::Result<Var<'t, T>> {
        let mut ctx = ForwardCtx::train(0);
        let y = m.forward(tape, tape.constant(input(&[3, 3, 2, 2], 12)), &mut ctx)?;
        weighted_sum(y, 13)
    }
    check_layer!(BatchNormLayer, perturbed_bn, loss);
}

#[test]
fn batch_norm_eval_gradients() {
    fn loss<'t, T: Scalar>(
        m: &BatchNormLayer<T>,
        tape: &'t Tape<T>,
    ) -> viewadapt::Result<Var<'t, T>> {
        let mut ctx = ForwardCtx::eval();
        let y = m.forward(tape, tape.constant(input(&[3, 3, 2, 2], 14)), &mut ctx)?;
        weighted_sum(y, 15)
    }
    check_layer!(BatchNormLayer, perturbed_bn, loss);
}

#[test]
fn layer_input_gradients() {
    let mut r = rng(16);
    let fc = FcLayer::<f64>::new("fc", 4, 3, &mut r);
    let lstm = LstmLayer::<f64>::new("l", 3, 4, &mut r);
    let conv = Conv2dLayer::<f64>::new("c", 2, 2, 3, 1, 1, &mut r);
    let bn = perturbed_bn::<f64>(rng(17));
    let report = viewadapt_tensor::grad_check_many(
        |v| {
            let tape = v[0].tape();
            let a = weighted_sum(fc.forward(tape, v[0]).unwrap(), 1).unwrap();
            let b = weighted_sum(lstm.forward_sequence(tape, v[1], 3).unwrap(), 2).unwrap();
            let c = weighted_sum(conv.forward(tape, v[2]).unwrap(), 3).unwrap();
            let mut ctx = ForwardCtx::train(0);
            let d = weighted_sum(bn.forward(tape, v[3], &mut ctx).unwrap(), 4).unwrap();
            let e = weighted_sum(MaxPoolLayer::new(2, 2).forward(v[4]).unwrap(), 5).unwrap();
            a.add(b)?.add(c)?.add(d)?.add(e)
        },
        &[
            input(&[2, 4], 20),
            input(&[3 * 2, 3], 21),
            input(&[1, 2, 4, 4], 22),
            input(&[2, 3, 2, 2], 23),
            input(&[1, 2, 4, 4], 24),
        ],
        1e-5,
    )
    .unwrap();
    assert!(report.passes(F64_TOL), "{report:?}");
}

#[test]
fn dropout_gradient_uses_same_mask() {
    let d = DropoutLayer::new(0.3).unwrap();
    let err = viewadapt_tensor::grad_check(
        |x| {
            let mut ctx = ForwardCtx::train(4);
            weighted_sum(d.forward(x, &mut ctx).unwrap(), 1).map_err(|e| match e {
                viewadapt::Error::Tensor(t) => t,
                other => viewadapt_tensor::TensorError::InvalidArgument(other.to_string()),
            })
        },
        &input::<f64>(&[5, 4], 30),
        1e-5,
    )
    .unwrap();
    assert!(err < F64_TOL);
}

#[test]
fn module_parameter_counts() {
    let mut r = rng(0);
    assert_eq!(
        LstmLayer::<f32>::new("l", 48, 100, &mut r).num_params(),
        4 * 100 * (48 + 100 + 1)
    );
    assert_eq!(FcLayer::<f32>::new("f", 100, 5, &mut r).num_params(), 505);
}
