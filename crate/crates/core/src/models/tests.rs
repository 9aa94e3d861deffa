use super::*;
use crate::tensor::kernels::ActKind;

fn tiny_spec(features: Vec<BlockSpec>, input: [usize; 3], classes: usize) -> ModelSpec {
    ModelSpec {
        family: Family::Squeeze,
        preset: PresetKind::Micro,
        width_mult: 1.0,
        input,
        classes,
        features,
        head: vec![BlockSpec::Linear { out: OutDim::Classes, bias: false, act: None }],
    }
}

fn defs_with_prefix(spec: &ModelSpec, prefix: &str) -> (usize, usize) {
    let lowered = lower::lower(spec).unwrap();
    let mut learned = 0;
    let mut running = 0;
    for d in param_defs(&lowered) {
        if d.name.starts_with(prefix) {
            let n: usize = d.shape.iter().product();
            if d.kind.is_learned() {
                learned += n;
            } else {
                running += n;
            }
        }
    }
    (learned, running)
}

#[test]
fn single_conv_param_count() {
    let spec = tiny_spec(
        vec![
            BlockSpec::PlainConv { out: 8, k: 3, stride: 1, pad: 1, bn: false, bias: true, act: None },
            BlockSpec::GlobalAvgPool,
        ],
        [1, 32, 32],
        4,
    );
    assert_eq!(defs_with_prefix(&spec, "f00"), (80, 0));
}

#[test]
fn dw_separable_param_count() {
    let spec = tiny_spec(
        vec![
            BlockSpec::DwSeparable { out: 16, k: 3, stride: 1, bn: false, act: ActKind::Relu },
            BlockSpec::GlobalAvgPool,
        ],
        [8, 16, 16],
        4,
    );
    assert_eq!(defs_with_prefix(&spec, "f00"), (200, 0));
}

#[test]
fn conv_mac_examples() {
    let spec = tiny_spec(
        vec![
            BlockSpec::PlainConv { out: 8, k: 3, stride: 1, pad: 1, bn: false, bias: false, act: None },
            BlockSpec::GlobalAvgPool,
        ],
        [1, 32, 32],
        1,
    );
    let report = count_flops(&spec, [1, 32, 32]).unwrap();
    assert_eq!(report.macs, 73_728 + 8);
    assert_eq!(report.flops, 2 * report.macs);

    let square = tiny_spec(
        vec![
            BlockSpec::PlainConv { out: 8, k: 1, stride: 1, pad: 0, bn: false, bias: false, act: None },
            BlockSpec::GlobalAvgPool,
        ],
        [8, 5, 5],
        1,
    );
    let report = count_flops(&square, [8, 5, 5]).unwrap();
    assert_eq!(report.macs, 8 * 8 * 25 + 8);
}

#[test]
fn full_preset_params_match_published_totals() {
    let cases = [
        (Family::Mobile, 2_542_856, 2_500_000.0),
        (Family::Mnas, 2_218_512, 2_200_000.0),
        (Family::Shuffle, 1_366_792, 1_400_000.0),
        (Family::Squeeze, 1_235_496, 1_200_000.0),
    ];
    for (family, exact, published) in cases {
        let spec = preset_spec(family, PresetKind::Full, 1.0, [3, 224, 224], 1000).unwrap();
        let report = count_params(&spec).unwrap();
        assert_eq!(report.params, exact, "{family}");
        let rel = (report.params as f64 - published).abs() / published;
        assert!(rel < 0.15, "{family}: {} vs {published}", report.params);
    }
}

#[test]
fn micro_preset_cost_fixtures() {
    let cases = [
        (Family::Mobile, 10_732, 624, 316_928),
        (Family::Mnas, 11_580, 816, 418_688),
        (Family::Shuffle, 3_820, 384, 238_464),
        (Family::Squeeze, 10_892, 352, 587_520),
    ];
    for (family, params, running, macs) in cases {
        let spec = preset_spec(family, PresetKind::Micro, 1.0, [1, 32, 32], 28).unwrap();
        let report = count_params(&spec).unwrap();
        assert_eq!((report.params, report.running_stats, report.macs), (params, running, macs), "{family}");
        assert!(report.params < 150_000);
        assert!(report.macs < 20_000_000);
    }
}

#[test]
fn squeeze_micro_forward_shape() {
    let spec = preset_spec(Family::Squeeze, PresetKind::Micro, 1.0, [1, 32, 32], 28).unwrap();
    let mut model: Model = Model::build(spec, 7).unwrap();
    let logits = model.forward_logits(&Tensor::zeros(&[1, 1, 32, 32])).unwrap();
    assert_eq!(logits.shape(), &[1, 28]);
    let empty = model.forward_logits(&Tensor::zeros(&[0, 1, 32, 32])).unwrap();
    assert_eq!(empty.shape(), &[0, 28]);
}

#[test]
fn duplicated_rows_give_identical_logits() {
    let spec = preset_spec(Family::Shuffle, PresetKind::Micro, 1.0, [1, 32, 32], 5).unwrap();
    let mut model: Model = Model::build(spec, 11).unwrap();
    let mut rng = crate::rng::CounterRng::new(3, &["batch"]);
    let row: Vec<f32> = (0..32 * 32).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
    let mut data = row.clone();
    data.extend_from_slice(&row);
    let batch = Tensor::new(vec![2, 1, 32, 32], data).unwrap();
    let logits = model.forward_logits(&batch).unwrap();
    assert_eq!(logits.data()[..5], logits.data()[5..]);
}

#[test]
fn constant_input_gives_equal_logits() {
    let spec = preset_spec(Family::Mobile, PresetKind::Micro, 1.0, [1, 32, 32], 6).unwrap();
    let mut model: Model = Model::build(spec, 19).unwrap();
    let logits = model.forward_logits(&Tensor::zeros(&[3, 1, 32, 32])).unwrap();
    for n in 1..3 {
        assert_eq!(logits.data()[..6], logits.data()[n * 6..(n + 1) * 6]);
    }
}

#[test]
fn shuffle_units_keep_even_channels() {
    for wm in [0.5, 0.75, 1.0, 1.35, 2.0] {
        let spec = preset_spec(Family::Shuffle, PresetKind::Micro, wm, [1, 32, 32], 4).unwrap();
        let lowered = lower::lower(&spec).unwrap();
        fn check(pieces: &[Piece]) {
            for p in pieces {
                match p {
                    Piece::SplitRight { keep, right } => {
                        assert!(*keep > 0);
                        check(right);
                    }
                    Piece::Branches(bodies) => bodies.iter().for_each(|b| check(b)),
                    Piece::ChannelShuffle { groups } => assert_eq!(*groups, 2),
                    _ => {}
                }
            }
        }
        check(&lowered.pieces);
    }
}

#[test]
fn doubling_width_scales_conv_kinds() {
    let at = |wm: f64| {
        let spec = preset_spec(Family::Mobile, PresetKind::Micro, wm, [1, 32, 32], 9).unwrap();
        let lowered = lower::lower(&spec).unwrap();
        param_defs(&lowered)
            .into_iter()
            .map(|d| (d.name, d.shape.iter().product::<usize>()))
            .collect::<std::collections::HashMap<_, _>>()
    };
    let (one, two) = (at(1.0), at(2.0));
    // Pointwise expansion conv: both channel axes double.
    assert_eq!(two["f01.exp.conv.w"], 4 * one["f01.exp.conv.w"]);
    assert_eq!(two["f03.proj.conv.w"], 4 * one["f03.proj.conv.w"]);
    // Depthwise conv: one channel axis.
    assert_eq!(two["f01.dw.conv.w"], 2 * one["f01.dw.conv.w"]);
    // Final classifier: input features double, classes fixed.
    assert_eq!(two["h00.fc.w"], 2 * one["h00.fc.w"]);
}

#[test]
fn trainable_masks_follow_strategy() {
    let spec = preset_spec(Family::Squeeze, PresetKind::Micro, 1.0, [1, 32, 32], 28).unwrap();
    let mut model: Model = Model::build(spec, 1).unwrap();

    let hft = trainable_mask(&model, Strategy::Hft);
    for (name, on) in &hft {
        if name.contains(".rm") || name.contains(".rv") {
            assert!(!on, "{name}");
        } else {
            assert_eq!(*on, name.starts_with("h00."), "{name}");
        }
    }
    let fft = trainable_mask(&model, Strategy::Fft);
    assert!(fft
        .iter()
        .all(|(n, on)| *on == (!n.contains(".rm") && !n.contains(".rv"))));

    model.apply_strategy(Strategy::Hft);
    assert!(model.frozen_features);
    let applied: Vec<(String, bool)> = model
        .store
        .slots()
        .iter()
        .map(|s| (s.name.clone(), s.trainable))
        .collect();
    assert_eq!(applied, hft);
}

#[test]
fn hft_head_fraction_small_on_full_presets() {
    for family in Family::ALL {
        let spec = preset_spec(family, PresetKind::Full, 1.0, [3, 224, 224], 28).unwrap();
        let lowered = lower::lower(&spec).unwrap();
        let (mut head, mut total) = (0usize, 0usize);
        for d in param_defs(&lowered) {
            if d.kind.is_learned() {
                let n: usize = d.shape.iter().product();
                total += n;
                if d.head {
                    head += n;
                }
            }
        }
        assert!(
            (head as f64) < 0.10 * total as f64,
            "{family}: head {head} of {total}"
        );
    }
}

#[test]
fn geometry_underflow_is_reported() {
    let err = preset_spec(Family::Squeeze, PresetKind::Full, 1.0, [3, 2, 2], 4)
        .and_then(|s| lower::lower(&s))
        .unwrap_err();
    assert!(matches!(err, Error::Geometry(_)), "{err}");
}

#[test]
fn spec_digest_tracks_content() {
    let a = preset_spec(Family::Mnas, PresetKind::Micro, 1.0, [1, 32, 32], 28).unwrap();
    let b = preset_spec(Family::Mnas, PresetKind::Micro, 1.0, [1, 32, 32], 28).unwrap();
    let c = preset_spec(Family::Mnas, PresetKind::Micro, 1.0, [1, 32, 32], 29).unwrap();
    assert_eq!(a.digest(), b.digest());
    assert_ne!(a.digest(), c.digest());
}

#[test]
fn build_is_seed_deterministic() {
    let spec = preset_spec(Family::Mnas, PresetKind::Micro, 1.0, [1, 32, 32], 7).unwrap();
    let a: Model = Model::build(spec.clone(), 42).unwrap();
    let b: Model = Model::build(spec.clone(), 42).unwrap();
    let c: Model = Model::build(spec, 43).unwrap();
    for i in 0..a.store.len() {
        assert_eq!(a.store.slot(i).value.data(), b.store.slot(i).value.data());
    }
    let moved = (0..a.store.len())
        .any(|i| a.store.slot(i).value.data() != c.store.slot(i).value.data());
    assert!(moved);
}

#[test]
fn count_params_matches_store_scalars() {
    for family in Family::ALL {
        let spec = preset_spec(family, PresetKind::Micro, 1.0, [1, 32, 32], 28).unwrap();
        let report = count_params(&spec).unwrap();
        let model: Model = Model::build(spec, 5).unwrap();
        assert_eq!(report.params as usize, model.store.learned_scalars(), "{family}");
    }
}
