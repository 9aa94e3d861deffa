//! Shared test support: the central finite-difference gradient oracle.

use fens_core::rng::CounterRng;
use fens_core::tensor::tape::{Tape, ValueId};
use fens_core::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_SKIP_BELOW: f64 = 1e-8;

/// Checks every analytic input gradient of `f` against central finite
/// differences. `f` receives a fresh tape and one leaf per input and must
/// return a scalar loss node. Returns (elements checked, max relative error);
/// panics with context on any violation.
pub fn check_grads(
    what: &str,
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&mut Tape<f64>, &[ValueId]) -> ValueId,
) -> (usize, f64) {
    let run = |xs: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &ids);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let ids: Vec<ValueId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &ids);
    let grads = tape.backward(loss).expect("backward");

    let mut checked = 0usize;
    let mut max_rel = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(ids[i])
            .unwrap_or_else(|| panic!("{what}: no gradient for input {i}"));
        for e in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= FD_STEP;
            let fd = (run(&plus) - run(&minus)) / (2.0 * FD_STEP);
            let a = analytic.data()[e];
            if a.abs() < FD_SKIP_BELOW && fd.abs() < FD_SKIP_BELOW {
                continue;
            }
            let rel = (a - fd).abs() / a.abs().max(fd.abs());
            assert!(
                rel < FD_REL_TOL,
                "{what}: input {i} element {e}: analytic {a:.3e} vs fd {fd:.3e} (rel {rel:.3e})"
            );
            checked += 1;
            max_rel = max_rel.max(rel);
        }
    }
    (checked, max_rel)
}

/// Random tensor with entries uniform in [lo, hi).
pub fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut CounterRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// Random tensor whose entries stay clear of the activation kinks at
/// 0, ±3 and 6: magnitudes in [0.2, 2.7] with random sign.
pub fn rand_kink_free(shape: &[usize], rng: &mut CounterRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mag = rng.uniform(0.2, 2.7);
        if rng.next_f64() < 0.5 {
            -mag
        } else {
            mag
        }
    })
}

/// Random tensor whose per-(n,c) planes have pairwise element separation far
/// above the FD step, so max-pool argmaxes cannot flip under perturbation.
pub fn rand_separated(shape: &[usize], rng: &mut CounterRng) -> Tensor<f64> {
    assert_eq!(shape.len(), 4);
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let mut data = vec![0.0f64; n * c * hw];
    for plane in 0..n * c {
        let mut ranks: Vec<usize> = (0..hw).collect();
        rng.shuffle(&mut ranks);
        for (off, &r) in ranks.iter().enumerate() {
            data[plane * hw + off] = r as f64 * 0.1 + rng.uniform(-0.02, 0.02);
        }
    }
    Tensor::new(shape.to_vec(), data).unwrap()
}
