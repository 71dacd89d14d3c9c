use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpgnet::models::{self, build_proposed_net, proposed_spec, reduced_spec};
use vpgnet::nn::*;

fn random_batch(shape: [usize; 4], seed: u64) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_vec(shape, (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn to_f32(t: &Tensor4<f64>) -> Tensor4<f32> {
    Tensor4::from_vec(t.shape(), t.data().iter().map(|&v| v as f32).collect())
}

#[test]
fn reduced_net_gradients_match_finite_differences() {
    let spec = reduced_spec(8, 200).unwrap();
    let model: Model<f64> = Model::new(spec, 5).unwrap();
    let batch = random_batch([2, 1, 8, 200], 1);
    let report = gradient_check(&model, &batch, &[1, 3], 1e-6, 42).unwrap();
    assert_eq!(report.checked, model.param_count());
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn dense_softmax_gradient_is_exact() {
    let spec = ModelSpec {
        input: [1, 1, 6],
        n_classes: 3,
        layers: vec![LayerSpec::Flatten { features: 6 }, LayerSpec::Softmax { in_features: 6, classes: 3 }],
    };
    let model: Model<f64> = Model::new(spec, 2).unwrap();
    let batch = random_batch([3, 1, 1, 6], 9);
    let labels = [0, 2, 1];
    let report = gradient_check(&model, &batch, &labels, 1e-6, 0).unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");

    // Analytic oracle: dW = (p - onehot)^T x / batch.
    let (_, grads) = model.loss_and_gradients(&batch, &labels, false, 0, Reduction::Mean).unwrap();
    let probs = model.forward(&batch, false, 0).unwrap();
    for k in 0..3 {
        for j in 0..6 {
            let mut want = 0.0;
            for b in 0..3 {
                let delta = probs[[b, k]] - if labels[b] == k { 1.0 } else { 0.0 };
                want += delta * batch.sample(b)[j] / 3.0;
            }
            assert!((grads.tensors[0][k * 6 + j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn nonpositive_epsilon_rejected() {
    let model: Model<f64> = Model::new(reduced_spec(8, 200).unwrap(), 0).unwrap();
    let batch = random_batch([1, 1, 8, 200], 0);
    assert_eq!(gradient_check(&model, &batch, &[0], 0.0, 0).unwrap_err(), NnError::InvalidEpsilon(0.0));
    assert!(gradient_check(&model, &batch, &[0], -1e-3, 0).is_err());
}

#[test]
fn maxpool_input_gradient_matches_finite_differences() {
    // Distinct values so no window has a tie.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut vals: Vec<f64> = (0..2 * 3 * 23).map(|i| i as f64 * 0.1).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let x = Tensor4::from_vec([1, 2, 3, 23], vals);
    let weights: Vec<f64> = (0..2 * 2 * 7).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let objective = |x: &Tensor4<f64>| -> f64 {
        let (y, _) = maxpool_forward(x, (2, 3), (1, 3)).unwrap();
        y.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
    };
    let (y, idx) = maxpool_forward(&x, (2, 3), (1, 3)).unwrap();
    assert_eq!(y.shape(), [1, 2, 2, 7]);
    let g = Tensor4::from_vec(y.shape(), weights.clone());
    let analytic = maxpool_backward(x.shape(), &g, &idx);
    let eps = 1e-3;
    for i in 0..x.data().len() {
        let mut p = x.clone();
        p.data_mut()[i] += eps;
        let mut m = x.clone();
        m.data_mut()[i] -= eps;
        let numeric = (objective(&p) - objective(&m)) / (2.0 * eps);
        assert!((numeric - analytic.data()[i]).abs() < 1e-6, "index {i}");
    }
}

#[test]
fn maxpool_table_length_and_constant_input() {
    let x = Tensor4::from_vec([1, 80, 1, 1149], vec![0.25f32; 80 * 1149]);
    let (y, _) = maxpool_forward(&x, (1, 7), (1, 7)).unwrap();
    assert_eq!(y.shape(), [1, 80, 1, 164]);
    assert!(y.data().iter().all(|&v| v == 0.25));
    assert!(matches!(maxpool_forward(&x, (1, 2000), (1, 1)), Err(NnError::KernelTooLarge { .. })));
}

#[test]
fn conv_examples() {
    let x = Tensor4::<f32>::zeros([1, 1, 64, 1251]);
    let w = vec![0.0f32; 20 * 60];
    let y = conv_valid_forward(&x, &w, &[0.0; 20], 20, (1, 60), (1, 1)).unwrap();
    assert_eq!(y.shape(), [1, 20, 64, 1192]);
    let long = vec![0.0f32; 2000];
    assert!(matches!(conv_valid_forward(&x, &long, &[0.0], 1, (1, 2000), (1, 1)), Err(NnError::KernelTooLarge { .. })));
    let small = random_batch([1, 1, 4, 9], 3);
    assert_eq!(conv_valid_forward(&small, &[1.0], &[0.0], 1, (1, 1), (1, 1)).unwrap(), small);
}

#[test]
fn duplicated_sample_doubles_gradient_under_sum() {
    let model: Model<f64> = Model::new(reduced_spec(8, 200).unwrap(), 8).unwrap();
    let one = random_batch([1, 1, 8, 200], 12);
    let mut two_data = one.data().to_vec();
    two_data.extend_from_slice(one.data());
    let two = Tensor4::from_vec([2, 1, 8, 200], two_data);
    let (l1, g1) = model.loss_and_gradients(&one, &[2], false, 0, Reduction::Sum).unwrap();
    let (l2, g2) = model.loss_and_gradients(&two, &[2, 2], false, 0, Reduction::Sum).unwrap();
    assert!((l2 - 2.0 * l1).abs() < 1e-12);
    for (a, b) in g1.iter().zip(g2.iter()) {
        assert!((2.0 * a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }
}

#[test]
fn label_out_of_range() {
    let model: Model<f32> = Model::new(reduced_spec(8, 200).unwrap(), 0).unwrap();
    let batch = to_f32(&random_batch([1, 1, 8, 200], 0));
    assert_eq!(
        model.loss_and_gradients(&batch, &[4], false, 0, Reduction::Mean).unwrap_err(),
        NnError::LabelOutOfRange { label: 4, n_classes: 4 }
    );
}

#[test]
fn dropout_mean_matches_eval_activation() {
    let spec = ModelSpec {
        input: [1, 1, 4],
        n_classes: 2,
        layers: vec![
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Flatten { features: 4 },
            LayerSpec::Softmax { in_features: 4, classes: 2 },
        ],
    };
    let mut model: Model<f64> = Model::new(spec, 0).unwrap();
    model.params_mut().tensors[0] = vec![1e-3, 2e-3, 3e-3, 4e-3, 0.0, 0.0, 0.0, 0.0];
    let x = Tensor4::from_vec([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
    // For tiny logits p0 - 1/2 is linear in the logit difference.
    let eval = model.forward(&x, false, 0).unwrap()[[0, 0]] - 0.5;
    let mean = (0..10_000u64).map(|s| model.forward(&x, true, s).unwrap()[[0, 0]] - 0.5).sum::<f64>() / 10_000.0;
    assert!((mean - eval).abs() < 0.02 * eval.abs(), "{mean} vs {eval}");
    assert_eq!(model.forward(&x, false, 1).unwrap(), model.forward(&x, false, 2).unwrap());
}

#[test]
fn proposed_net_forward_shapes_and_rows() {
    let model: Model<f32> = build_proposed_net(64, 0).unwrap();
    let batch = to_f32(&random_batch([8, 1, 64, 1251], 7));
    let p = model.forward(&batch, false, 0).unwrap();
    assert_eq!(p.dim(), (8, 4));
    for row in p.rows() {
        assert!(row.iter().all(|&v| v > 0.0));
        assert!((row.sum() - 1.0).abs() < 1e-6);
    }
    let again = model.forward(&batch, false, 0).unwrap();
    assert_eq!(p, again);
}

#[test]
fn proposed_net_rejects_other_lengths() {
    let model: Model<f32> = build_proposed_net(4, 0).unwrap();
    let short = Tensor4::zeros([1, 1, 4, 1000]);
    assert!(matches!(model.forward(&short, false, 0), Err(NnError::ShapeMismatch { stage: 11, .. })));
    // Still passes the layer arithmetic but is not the declared length.
    let near = Tensor4::zeros([1, 1, 4, 1260]);
    assert!(matches!(model.forward(&near, false, 0), Err(NnError::ShapeMismatch { stage: 0, .. })));
}

#[test]
fn parameter_count_matches_layer_arithmetic() {
    let c = 64;
    let convs = [(1, 20, 1, 60), (20, 20, c, 1), (20, 40, 1, 30), (40, 80, 1, 15), (80, 160, 1, 15), (160, 320, 1, 15)];
    let mut want: usize = convs.iter().map(|&(i, o, kh, kw)| o * i * kh * kw + o).sum();
    want += 960 * 4 + 4;
    let model: Model<f32> = build_proposed_net(c, 1).unwrap();
    assert_eq!(model.param_count(), want);
    assert_eq!(proposed_spec(c).unwrap().param_count(), want);
}

#[test]
fn build_is_deterministic_and_single_channel_works() {
    let a: Model<f32> = build_proposed_net(16, 9).unwrap();
    let b: Model<f32> = build_proposed_net(16, 9).unwrap();
    let c: Model<f32> = build_proposed_net(16, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params(), c.params());
    let one: Model<f32> = build_proposed_net(1, 0).unwrap();
    let p = one.forward(&Tensor4::zeros([1, 1, 1, 1251]), false, 0).unwrap();
    assert_eq!(p.dim(), (1, 4));
}

#[test]
fn dropout_appears_once_at_stage_five() {
    let spec = proposed_spec(64).unwrap();
    let drops: Vec<_> = spec.layers.iter().enumerate().filter(|(_, l)| l.kind() == LayerKind::Dropout).collect();
    assert_eq!(drops.len(), 1);
    assert_eq!(drops[0].0, 4);
    assert_eq!(*drops[0].1, LayerSpec::Dropout { rate: 0.5 });
}

#[test]
fn spec_json_round_trip() {
    let spec = proposed_spec(16).unwrap();
    let text = serde_json::to_string(&spec).unwrap();
    assert_eq!(serde_json::from_str::<ModelSpec>(&text).unwrap(), spec);
}

#[test]
fn training_loss_trajectory_is_reproducible() {
    let run = || {
        let mut model: Model<f32> = Model::new(reduced_spec(8, 200).unwrap(), 3).unwrap();
        let batch = to_f32(&random_batch([4, 1, 8, 200], 5));
        let mut opt = OptimizerState::new(model.params(), AdamConfig::default());
        let mut losses = Vec::new();
        for step in 0..10 {
            let (l, g) = model.loss_and_gradients(&batch, &[0, 1, 2, 3], true, step, Reduction::Mean).unwrap();
            opt.step(model.params_mut(), &g).unwrap();
            losses.push(l.to_bits());
        }
        losses
    };
    assert_eq!(run(), run());
}

#[test]
fn admissible_lengths_bracket_required_length() {
    let spec = proposed_spec(2).unwrap();
    let ok = models::admissible_time_lengths(&spec);
    assert!(ok.contains(&1251));
    assert_eq!((ok[0], *ok.last().unwrap()), (1215, 1389));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_rows_positive_and_normalised(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let model: Model<f64> = Model::new(reduced_spec(8, 200).unwrap(), seed).unwrap();
        let mut batch = random_batch([3, 1, 8, 200], seed ^ 1);
        batch.data_mut().iter_mut().for_each(|v| *v *= scale);
        let p = model.forward(&batch, true, seed).unwrap();
        for row in p.rows() {
            prop_assert!(row.iter().all(|&v| v > 0.0));
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn proposed_trace_matches_reference_for_any_montage(c in 1usize..130) {
        let spec = proposed_spec(c).unwrap();
        prop_assert_eq!(spec.shape_trace(spec.input_shape(2)).unwrap(), models::reference_shapes(c, 2));
    }
}
