mod support;

use proptest::prelude::*;
use rand::Rng;
use stag_core::autodiff::Tape;
use stag_core::checkpoint::save_checkpoint;
use stag_core::geometry::BBox;
use stag_core::loss::bce_with_logits;
use stag_core::lstm::{lstm_sequence, LstmVars};
use stag_core::metrics::mean_average_precision;
use stag_core::model::{Architecture, InitOptions, ModelDims, Param, StagParams};
use stag_core::optim::{sgd_step, OptimState};
use stag_core::synth::{dataset_plan, generate_dataset, generate_segment, WorldSpec};
use stag_core::tensor::Tensor;
use stag_core::trainer::{evaluate, train, TrainConfig};
use stag_core::{Error, VideoSegment};
use support::{ap_oracle, iou_oracle, lstm_oracle, max_abs_diff, random_tensor, rows, seeded};

fn params_with_grads(seed: u64, sizes: &[usize], grad_scale: f64) -> Vec<Param> {
    let mut r = seeded(seed);
    sizes
        .iter()
        .map(|&n| {
            let mut p = Param::new(random_tensor(&mut r, &[n], 1.0));
            p.grad = random_tensor(&mut r, &[n], grad_scale);
            p
        })
        .collect()
}

fn step(params: &mut [Param], state: &mut OptimState) -> stag_core::optim::StepStats {
    let mut named: Vec<(&str, &mut Param)> = params.iter_mut().map(|p| ("p", p)).collect();
    sgd_step(&mut named, state).unwrap()
}

proptest! {
    #[test]
    fn plain_sgd_is_gradient_descent(sizes in prop::collection::vec(1usize..6, 1..5), seed in any::<u64>(), lr in 1e-4..1.0f64, steps in 1usize..4) {
        let mut params = params_with_grads(seed, &sizes, 3.0);
        let shapes: Vec<Vec<usize>> = sizes.iter().map(|&n| vec![n]).collect();
        let mut state = OptimState::new(shapes.iter().map(Vec::as_slice), lr, 0.0, f64::INFINITY).unwrap();
        let mut expect: Vec<Vec<f64>> = params.iter().map(|p| p.value.data().to_vec()).collect();
        for _ in 0..steps {
            for (e, p) in expect.iter_mut().zip(&params) {
                for (x, g) in e.iter_mut().zip(p.grad.data()) {
                    *x -= lr * g;
                }
            }
            step(&mut params, &mut state);
        }
        for (e, p) in expect.iter().zip(&params) {
            prop_assert_eq!(e.as_slice(), p.value.data());
        }
    }

    #[test]
    fn clipping_never_increases_the_norm(sizes in prop::collection::vec(1usize..6, 1..5), seed in any::<u64>(), clip in 0.01..10.0f64, scale in 0.001..50.0f64) {
        let mut params = params_with_grads(seed, &sizes, scale);
        let shapes: Vec<Vec<usize>> = sizes.iter().map(|&n| vec![n]).collect();
        let lr = 0.1;
        let mut state = OptimState::new(shapes.iter().map(Vec::as_slice), lr, 0.0, clip).unwrap();
        let stats = step(&mut params, &mut state);
        let applied: f64 = state.velocity().iter().map(|v| v.norm_sq()).sum::<f64>().sqrt() / lr;
        prop_assert!(applied <= clip + 1e-12);
        prop_assert!(applied <= stats.grad_norm * (1.0 + 1e-12));
        prop_assert!(stats.scale <= 1.0);
    }

    #[test]
    fn bce_matches_log_sigmoid_form(z in -30.0..30.0f64, positive in any::<bool>()) {
        let y = if positive { 1.0 } else { 0.0 };
        let log_sig = |x: f64| (1.0 / (1.0 + (-x).exp())).ln();
        let expect = -(y * log_sig(z) + (1.0 - y) * log_sig(-z));
        let got = bce_with_logits(&Tensor::vector(vec![z]), &Tensor::vector(vec![y])).unwrap();
        prop_assert!((got - expect).abs() <= 1e-12);
    }

    #[test]
    fn map_matches_brute_force(m in 1usize..=20, k in 1usize..=5, seed in any::<u64>()) {
        let mut r = seeded(seed);
        // a coarse score grid forces ties
        let scores: Vec<f64> = (0..m * k).map(|_| r.random_range(0..5) as f64 / 4.0).collect();
        let labels: Vec<f64> = (0..m * k).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let aps: Vec<f64> = (0..k)
            .filter_map(|c| {
                let s: Vec<f64> = (0..m).map(|i| scores[i * k + c]).collect();
                let y: Vec<bool> = (0..m).map(|i| labels[i * k + c] == 1.0).collect();
                ap_oracle(&s, &y)
            })
            .collect();
        let got = mean_average_precision(
            &Tensor::new(vec![m, k], scores).unwrap(),
            &Tensor::new(vec![m, k], labels).unwrap(),
        );
        if aps.is_empty() {
            prop_assert!(matches!(got, Err(Error::MetricUndefined(_))));
        } else {
            let expect = aps.iter().sum::<f64>() / aps.len() as f64;
            prop_assert!((got.unwrap() - expect).abs() <= 1e-12);
        }
    }
}

#[test]
fn map_hand_ranked_example() {
    let s = Tensor::new(vec![3, 1], vec![0.9, 0.8, 0.7]).unwrap();
    let y = Tensor::new(vec![3, 1], vec![1.0, 0.0, 1.0]).unwrap();
    assert!((mean_average_precision(&s, &y).unwrap() - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn lstm_matches_unrolled_cells() {
    let mut r = seeded(60);
    for _ in 0..50 {
        let (d, h) = (r.random_range(1..6), r.random_range(1..5));
        let x = random_tensor(&mut r, &[3, d], 1.5);
        let (w_x, w_h, b) = (
            random_tensor(&mut r, &[d, 4 * h], 1.0),
            random_tensor(&mut r, &[h, 4 * h], 1.0),
            random_tensor(&mut r, &[4 * h], 1.0),
        );
        let mut tape = Tape::new();
        let vars = LstmVars {
            w_x: tape.leaf(w_x.clone()),
            w_h: tape.leaf(w_h.clone()),
            b: tape.leaf(b.clone()),
        };
        let xs = tape.leaf(x.clone());
        let out = lstm_sequence(&mut tape, xs, vars).unwrap();
        let expect = lstm_oracle(&rows(&x), &w_x, &w_h, &b);
        assert!(max_abs_diff(tape.value(out).data(), &expect) <= 1e-12);
    }
}

fn peak_iou(seg: &VideoSegment) -> f64 {
    let mut best: f64 = 0.0;
    for f in &seg.frames {
        let boxes: Vec<BBox> = f.boxes.iter().flatten().copied().collect();
        for i in 0..boxes.len() {
            for j in 0..i {
                best = best.max(iou_oracle(&boxes[i], &boxes[j]));
            }
        }
    }
    best
}

#[test]
fn every_generated_positive_contains_a_contact() {
    let spec = WorldSpec::default();
    for plan in dataset_plan(&spec.with_seed(61), 1000, 0) {
        let seg = plan.generate().unwrap();
        assert_eq!(seg.labels, vec![1.0]);
        assert!(peak_iou(&seg) >= spec.contact_iou, "{}", seg.segment_id);
    }
}

#[test]
fn labels_are_recomputable_from_boxes() {
    for spec in [
        WorldSpec::default(),
        WorldSpec {
            collision_prob: 0.0,
            ..WorldSpec::default()
        },
    ] {
        for seg in generate_dataset(&spec.with_seed(62), 100, 300).unwrap() {
            let contact = peak_iou(&seg) >= spec.contact_iou;
            assert_eq!(seg.labels[0] == 1.0, contact, "{}", seg.segment_id);
        }
    }
}

#[test]
fn negatives_without_near_misses_have_no_contact() {
    let spec = WorldSpec {
        collision_prob: 0.0,
        ..WorldSpec::default()
    };
    for seed in 0..200 {
        let seg = generate_segment(&spec.with_seed(seed), false).unwrap();
        assert!(peak_iou(&seg) < spec.contact_iou);
    }
}

fn small_dims(spec: &WorldSpec) -> ModelDims {
    ModelDims {
        channels: spec.channels,
        d: 16,
        d_k: 8,
        n: spec.capacity,
        t: spec.frames,
        num_classes: 1,
    }
}

#[test]
fn small_learning_rate_loss_curve_is_pinned() {
    let spec = WorldSpec::default().with_seed(7);
    let data = generate_dataset(&spec, 3, 7).unwrap();
    let mut params = StagParams::init(
        ModelDims {
            channels: spec.channels,
            ..ModelDims::default()
        },
        7,
        InitOptions::default(),
    )
    .unwrap();
    let config = TrainConfig {
        epochs: 3,
        lr: 0.001,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut losses = vec![evaluate(&data, &params, Architecture::default()).unwrap().loss];
    let rows = train(&mut params, &data, Some(&data), Architecture::default(), &config).unwrap();
    losses.extend(rows.iter().filter(|r| r.split == "eval").map(|r| r.loss));
    let recorded = [
        0.792473422770541,
        0.6370585973286805,
        0.6276576632634001,
        0.6567354337175356,
    ];
    assert!(max_abs_diff(&losses, &recorded) <= 1e-9, "{losses:?}");
    assert!(losses[1..].iter().all(|&l| l < losses[0]));
}

#[test]
fn independent_labels_stay_near_the_base_rate() {
    let spec = WorldSpec::default();
    let coin = |data: &mut Vec<VideoSegment>, seed: u64| {
        let mut r = seeded(seed);
        let mut labels: Vec<f64> = (0..data.len()).map(|i| (i % 2) as f64).collect();
        rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut r);
        for (seg, y) in data.iter_mut().zip(labels) {
            seg.labels = vec![y];
        }
    };
    let mut train_set = generate_dataset(&spec.with_seed(63), 100, 100).unwrap();
    let mut eval_set = generate_dataset(&spec.with_seed(64), 250, 250).unwrap();
    coin(&mut train_set, 1);
    coin(&mut eval_set, 2);
    let mut params = StagParams::init(small_dims(&spec), 63, InitOptions::default()).unwrap();
    let config = TrainConfig {
        epochs: 3,
        seed: 63,
        ..TrainConfig::default()
    };
    train(&mut params, &train_set, None, Architecture::default(), &config).unwrap();
    let acc = evaluate(&eval_set, &params, Architecture::default()).unwrap().accuracy;
    assert!(acc <= 0.6, "{acc}");
}

#[test]
fn training_is_bitwise_reproducible() {
    let spec = WorldSpec {
        frames: 4,
        ..WorldSpec::default()
    }
    .with_seed(65);
    let data = generate_dataset(&spec, 4, 8).unwrap();
    let dims = small_dims(&spec);
    let config = TrainConfig {
        epochs: 2,
        seed: 65,
        ..TrainConfig::default()
    };
    let run = || {
        let mut p = StagParams::init(dims, 65, InitOptions::default()).unwrap();
        let rows = train(&mut p, &data, Some(&data), Architecture::default(), &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &p, Architecture::default()).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        (stag_core::trainer::metrics_csv(&rows), files)
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_loss_names_the_segment() {
    let spec = WorldSpec {
        frames: 2,
        ..WorldSpec::default()
    }
    .with_seed(66);
    let data = generate_dataset(&spec, 1, 0).unwrap();
    let mut params = StagParams::init(small_dims(&spec), 66, InitOptions::default()).unwrap();
    params.classifier.w.value.data_mut().fill(f64::MAX);
    params.classifier.b.value.data_mut().fill(f64::NAN);
    let err = train(
        &mut params,
        &data,
        None,
        Architecture::default(),
        &TrainConfig::default(),
    )
    .unwrap_err();
    match err {
        Error::NonFiniteLoss(id) => assert_eq!(id, data[0].segment_id),
        other => panic!("{other}"),
    }
}
