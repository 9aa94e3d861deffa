//! Gradient checks for composite structures: squeeze-excite gating, inverted
//! residuals, shuffle units and batchnorm against the finite-difference
//! oracle. Per-operation sweeps live in the acceptance suite.

mod common;

use common::{check_grads, rand_kink_free, rand_separated, rand_tensor};
use fens_core::rng::CounterRng;
use fens_core::tensor::kernels::ActKind;

#[test]
fn dot_sum_gradient() {
    let mut rng = CounterRng::new(1, &["gc", "dot"]);
    let a = rand_tensor(&[3, 4], -1.0, 1.0, &mut rng);
    let b = rand_tensor(&[3, 4], -1.0, 1.0, &mut rng);
    check_grads("dot_sum", &[a, b], &|tape, ids| {
        tape.dot_sum(ids[0], ids[1]).unwrap()
    });
}

#[test]
fn squeeze_excite_block_gradient() {
    // x → GAP → 1×1 conv → relu → 1×1 conv → hard-sigmoid → scale x
    let mut rng = CounterRng::new(2, &["gc", "se"]);
    let x = rand_tensor(&[2, 4, 3, 3], -1.0, 1.0, &mut rng);
    let w1 = rand_tensor(&[2, 4, 1, 1], -0.7, 0.7, &mut rng);
    let b1 = rand_tensor(&[2], -0.3, 0.3, &mut rng);
    let w2 = rand_tensor(&[4, 2, 1, 1], -0.7, 0.7, &mut rng);
    let b2 = rand_tensor(&[4], -0.3, 0.3, &mut rng);
    let cot = rand_tensor(&[2, 4, 3, 3], -1.0, 1.0, &mut rng);
    check_grads("squeeze-excite", &[x, w1, b1, w2, b2, cot], &|tape, ids| {
        let pooled = tape.global_avgpool(ids[0]);
        let f1 = tape.conv2d(pooled, ids[1], Some(ids[2]), 1, 0, 1).unwrap();
        let a1 = tape.activation(f1, ActKind::Relu);
        let f2 = tape.conv2d(a1, ids[3], Some(ids[4]), 1, 0, 1).unwrap();
        let gate = tape.activation(f2, ActKind::HardSigmoid);
        let y = tape.scale_channels(ids[0], gate).unwrap();
        tape.dot_sum(y, ids[5]).unwrap()
    });
}

#[test]
fn inverted_residual_block_gradient() {
    // expand 1×1 → BN → hard-swish → depthwise 3×3 → BN → hard-swish →
    // project 1×1 → BN → skip add
    let mut rng = CounterRng::new(3, &["gc", "ir"]);
    let x = rand_tensor(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
    let w_exp = rand_tensor(&[6, 3, 1, 1], -0.6, 0.6, &mut rng);
    let w_dw = rand_tensor(&[6, 1, 3, 3], -0.6, 0.6, &mut rng);
    let w_proj = rand_tensor(&[3, 6, 1, 1], -0.6, 0.6, &mut rng);
    let gamma = rand_tensor(&[6], 0.6, 1.4, &mut rng);
    let beta = rand_tensor(&[6], -0.3, 0.3, &mut rng);
    let cot = rand_tensor(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
    check_grads(
        "inverted-residual",
        &[x, w_exp, w_dw, w_proj, gamma, beta, cot],
        &|tape, ids| {
            let mut rm = vec![0.0f64; 6];
            let mut rv = vec![1.0f64; 6];
            let e = tape.conv2d(ids[0], ids[1], None, 1, 0, 1).unwrap();
            let e = tape
                .batchnorm_train(e, ids[4], ids[5], &mut rm, &mut rv, 0.1, 1e-5)
                .unwrap();
            let e = tape.activation(e, ActKind::HardSwish);
            let d = tape.conv2d(e, ids[2], None, 1, 1, 6).unwrap();
            let d = tape.activation(d, ActKind::HardSwish);
            let p = tape.conv2d(d, ids[3], None, 1, 0, 1).unwrap();
            let y = tape.add(ids[0], p).unwrap();
            tape.dot_sum(y, ids[6]).unwrap()
        },
    );
}

#[test]
fn shuffle_unit_gradient() {
    // split → right branch (1×1 conv, dw 3×3, 1×1 conv) → concat → shuffle
    let mut rng = CounterRng::new(4, &["gc", "shuffle"]);
    let x = rand_tensor(&[1, 4, 4, 4], -1.0, 1.0, &mut rng);
    let w1 = rand_tensor(&[2, 2, 1, 1], -0.7, 0.7, &mut rng);
    let wd = rand_tensor(&[2, 1, 3, 3], -0.7, 0.7, &mut rng);
    let w2 = rand_tensor(&[2, 2, 1, 1], -0.7, 0.7, &mut rng);
    let cot = rand_tensor(&[1, 4, 4, 4], -1.0, 1.0, &mut rng);
    check_grads("shuffle-unit", &[x, w1, wd, w2, cot], &|tape, ids| {
        let left = tape.slice_channels(ids[0], 0, 2).unwrap();
        let right = tape.slice_channels(ids[0], 2, 2).unwrap();
        let r = tape.conv2d(right, ids[1], None, 1, 0, 1).unwrap();
        let r = tape.activation(r, ActKind::Relu6);
        let r = tape.conv2d(r, ids[2], None, 1, 1, 2).unwrap();
        let r = tape.conv2d(r, ids[3], None, 1, 0, 1).unwrap();
        let y = tape.concat_channels(&[left, r]).unwrap();
        let y = tape.channel_shuffle(y, 2).unwrap();
        tape.dot_sum(y, ids[4]).unwrap()
    });
}

#[test]
fn batchnorm_train_mode_gradient() {
    let mut rng = CounterRng::new(5, &["gc", "bn"]);
    let x = rand_tensor(&[3, 2, 2, 2], -2.0, 2.0, &mut rng);
    let gamma = rand_tensor(&[2], 0.5, 1.5, &mut rng);
    let beta = rand_tensor(&[2], -0.5, 0.5, &mut rng);
    let cot = rand_tensor(&[3, 2, 2, 2], -1.0, 1.0, &mut rng);
    check_grads("batchnorm-train", &[x, gamma, beta, cot], &|tape, ids| {
        let mut rm = vec![0.0f64; 2];
        let mut rv = vec![1.0f64; 2];
        let y = tape
            .batchnorm_train(ids[0], ids[1], ids[2], &mut rm, &mut rv, 0.1, 1e-5)
            .unwrap();
        tape.dot_sum(y, ids[3]).unwrap()
    });
}

#[test]
fn pooling_chain_gradient() {
    let mut rng = CounterRng::new(6, &["gc", "pool"]);
    let x = rand_separated(&[2, 2, 4, 4], &mut rng);
    let cot = rand_tensor(&[2, 2, 1, 1], -1.0, 1.0, &mut rng);
    check_grads("max-then-global", &[x, cot], &|tape, ids| {
        let m = tape.maxpool(ids[0], 2, 2, 0).unwrap();
        let g = tape.global_avgpool(m);
        tape.dot_sum(g, ids[1]).unwrap()
    });
}

#[test]
fn activations_through_linear_gradient() {
    let mut rng = CounterRng::new(7, &["gc", "act"]);
    for kind in [
        ActKind::Relu,
        ActKind::Relu6,
        ActKind::Sigmoid,
        ActKind::HardSigmoid,
        ActKind::HardSwish,
    ] {
        let x = rand_kink_free(&[3, 5], &mut rng);
        let w = rand_tensor(&[4, 5], -0.5, 0.5, &mut rng);
        let b = rand_tensor(&[4], -0.2, 0.2, &mut rng);
        check_grads(&format!("{kind:?}-linear"), &[x, w, b], &|tape, ids| {
            let a = tape.activation(ids[0], kind);
            let y = tape.linear(a, ids[1], Some(ids[2])).unwrap();
            tape.softmax_cross_entropy(y, &[0, 2, 3]).unwrap()
        });
    }
}

#[test]
fn frozen_subtree_gets_no_update() {
    // Gradients may flow through a frozen parameter, but the optimizer must
    // leave it bit-identical.
    use fens_core::tensor::optim::{OptimConfig, Optimizer};
    use fens_core::tensor::param::{ParamKind, ParamStore};
    use fens_core::tensor::tape::Tape;
    use fens_core::Tensor;

    let mut store: ParamStore<f32> = ParamStore::new();
    let frozen = store.add(
        "feat.weight".into(),
        Tensor::new(vec![2, 2], vec![0.25, -0.5, 0.75, 1.0]).unwrap(),
        ParamKind::Weight,
        false,
    );
    let head = store.add(
        "head.weight".into(),
        Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
        ParamKind::Weight,
        true,
    );
    store.slot_mut(frozen).trainable = false;
    let before: Vec<u32> = store.slot(frozen).value.data().iter().map(|v| v.to_bits()).collect();

    let mut opt = Optimizer::new(OptimConfig::default(), store.len());
    for _ in 0..3 {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap());
        let wf = tape.bind_param(&store, frozen);
        let wh = tape.bind_param(&store, head);
        let h1 = tape.linear(x, wf, None).unwrap();
        let h2 = tape.linear(h1, wh, None).unwrap();
        let loss = tape.softmax_cross_entropy(h2, &[1]).unwrap();
        let grads = tape.backward(loss).unwrap();
        let pg = grads.param_grads(&tape);
        assert!(pg.iter().any(|(i, _)| *i == frozen), "grad flows through frozen leaf");
        opt.step(&mut store, &pg).unwrap();
    }
    let after: Vec<u32> = store.slot(frozen).value.data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(before, after);
    assert_ne!(
        store.slot(head).value.data(),
        &[0.1, 0.2, 0.3, 0.4],
        "trainable head moved"
    );
}
