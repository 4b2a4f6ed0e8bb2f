use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavfml_core::fml::*;
use uavfml_core::scenario::ScenarioConfig;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-2.0..2.0))
}

/// Worst relative error between analytic and central-difference gradients.
/// `floor` only guards the division when both values are zero.
fn fd_error(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], floor: f64) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let up = f(&p);
        p[i] = x[i] - h;
        let down = f(&p);
        p[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(floor));
    }
    worst
}

#[derive(Debug, Clone)]
struct Draw {
    encoder: ModelParams,
    ctx: LocalContext,
    x: Array2<f64>,
    y: Vec<usize>,
    h: Vec<Array2<f64>>,
    z: Vec<Array1<f64>>,
    attention: AttentionState,
}

fn draw(seed: u64) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, hidden, embed, classes) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..4), rng.gen_range(2..5));
    let m = rng.gen_range(1..4);
    let rows = rng.gen_range(1..8);
    let encoder = ModelParams::encoder(input, hidden, embed).randomized(&mut rng);
    let mut decoder = ModelParams::decoder(m * embed, classes).randomized(&mut rng);
    let noisy: Vec<f64> = decoder.to_flat().iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
    decoder.set_flat(&noisy).unwrap();
    let fill = (0..m).map(|_| Array1::from_shape_fn(embed, |_| rng.gen_range(-1.0..1.0))).collect();
    let alpha: Vec<f64> = softmax(&(0..m).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
    let ctx = LocalContext { decoder, slot: rng.gen_range(0..m), scales: alpha.iter().map(|a| a * m as f64).collect(), fill };
    let x = random_matrix(&mut rng, rows, input);
    let y = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
    let h = (0..m).map(|_| random_matrix(&mut rng, rows, embed)).collect();
    let z = (0..m).map(|_| Array1::from_shape_fn(embed, |_| rng.gen_range(-1.0..1.0))).collect();
    let mut attention = AttentionState::new(m, embed);
    attention.set_flat(&(0..m * (embed + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
    Draw { encoder, ctx, x, y, h, z, attention }
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let d = draw(seed);
        let (_, g) = encoder_loss_grad(&d.encoder, &d.ctx, d.x.view(), &d.y).unwrap();
        let loss = |w: &[f64]| encoder_loss_grad(&d.encoder.with_flat(w).unwrap(), &d.ctx, d.x.view(), &d.y).unwrap().0;
        let err = fd_error(loss, &d.encoder.to_flat(), &g.to_flat(), 1e-12);
        assert!(err <= 1e-5, "draw {seed}: {err}");
    }
}

#[test]
fn decoder_and_attention_gradients_match_finite_differences() {
    for seed in 0..20 {
        let d = draw(100 + seed);
        let dec = &d.ctx.decoder;
        let (_, g_dec, g_att) = server_loss_grad(dec, &d.attention, &d.h, &d.z, &d.y).unwrap();
        let by_dec = |w: &[f64]| server_loss_grad(&dec.with_flat(w).unwrap(), &d.attention, &d.h, &d.z, &d.y).unwrap().0;
        let err = fd_error(by_dec, &dec.to_flat(), &g_dec.to_flat(), 1e-12);
        assert!(err <= 1e-5, "decoder draw {seed}: {err}");
        let by_att = |w: &[f64]| {
            let mut a = d.attention.clone();
            a.set_flat(w);
            server_loss_grad(dec, &a, &d.h, &d.z, &d.y).unwrap().0
        };
        let err = fd_error(by_att, &d.attention.to_flat(), &g_att.to_flat(), 1e-12);
        assert!(err <= 1e-5, "attention draw {seed}: {err}");
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let d = draw(3);
    let part = Samples { x: d.x.clone(), y: d.y.clone() };
    let out = local_sgd_round(&d.encoder, &d.ctx, &part, 5, 0.0, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.params, d.encoder);
    assert_eq!(out.losses.len(), 5);
}

#[test]
fn one_step_on_one_sample_follows_the_hand_gradient() {
    let mut enc = ModelParams::encoder(1, 1, 1);
    enc.set_flat(&[1.0, 0.0, 1.0, 0.0]).unwrap();
    let mut dec = ModelParams::decoder(1, 2);
    dec.set_flat(&[1.0, -1.0, 0.0, 0.0]).unwrap();
    let ctx = LocalContext { decoder: dec, slot: 0, scales: vec![1.0], fill: vec![Array1::zeros(1)] };
    let part = Samples { x: Array2::from_elem((1, 1), 0.5), y: vec![0] };
    let out = local_sgd_round(&enc, &ctx, &part, 1, 0.1, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let want = [1.0189757038811962, 0.03795140776239222, 1.022300269851413, 0.048256745072258286];
    for (a, b) in out.params.to_flat().iter().zip(want) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn aggregation_examples() {
    let scalar = |v: f64| {
        let mut p = ModelParams::decoder(1, 1);
        p.set_flat(&[v, 0.0]).unwrap();
        p
    };
    let w = aggregate_models(&[scalar(0.0), scalar(4.0)], &[true, true], &[1, 3]).unwrap();
    assert_eq!(w.to_flat()[0], 3.0);
    let w = aggregate_models(&[scalar(0.0), scalar(4.0)], &[false, true], &[1, 3]).unwrap();
    assert_eq!(w.to_flat()[0], 4.0);
    assert_eq!(aggregate_models(&[scalar(1.0)], &[false], &[3]), Err(FmlError::EmptyModality));

    let h = aggregate_embeddings(&[Array2::from_elem((1, 1), 1.0), Array2::from_elem((1, 1), 3.0)]).unwrap();
    assert_eq!(h[[0, 0]], 2.0);
    let one = Array2::from_elem((2, 3), 0.25);
    assert_eq!(aggregate_embeddings(std::slice::from_ref(&one)).unwrap(), one);
    let cat = concat_embeddings(&[Array2::zeros((2, 3)), Array2::ones((2, 1))]).unwrap();
    assert_eq!(cat.dim(), (2, 4));
    assert_eq!(cat[[1, 3]], 1.0);
    assert!(concat_embeddings(&[Array2::zeros((2, 3)), Array2::ones((1, 1))]).is_err());
}

#[test]
fn fusion_and_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = ModelParams::encoder(2, 3, 2).randomized(&mut rng);
    let b = ModelParams::encoder(2, 3, 2).randomized(&mut rng);
    assert_eq!(fuse_global(std::slice::from_ref(&a), &[1.0]).unwrap(), a);
    assert!(fuse_global(&[a.clone(), ModelParams::encoder(3, 3, 2)], &[0.5, 0.5]).is_err());
    let copies = broadcast(&[a.clone(), b.clone()], &[0, 0, 1]);
    assert_eq!(copies, vec![a.clone(), a, b]);
    let probe = Array2::zeros((4, 2));
    let z = extract_high_level_features(&copies[2], probe.view()).unwrap();
    assert_eq!(attention_scores(&[z.clone(), z], &AttentionState::new(2, 2)), vec![0.5, 0.5]);
}

#[test]
fn losses_and_accuracy() {
    assert_eq!(global_loss(&[0.7], &[10]), 0.7);
    assert_eq!(global_loss(&[1.0, 2.0], &[1, 3]), 1.75);

    // A random decoder on balanced labels lands near chance.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 1000;
    let classes = 5;
    let enc = ModelParams::encoder(3, 4, 2).randomized(&mut rng);
    let dec = ModelParams::decoder(2, classes).randomized(&mut rng);
    let x = random_matrix(&mut rng, n, 3);
    let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let acc = evaluate_accuracy(&dec, &[enc], &[1.0], &[x], &y).unwrap();
    assert!((acc - 0.2).abs() <= 0.05, "{acc}");

    // Perfect classifier on a separable toy: sign of the single feature.
    let mut enc = ModelParams::encoder(1, 1, 1);
    enc.set_flat(&[5.0, 0.0, 5.0, 0.0]).unwrap();
    let mut dec = ModelParams::decoder(1, 2);
    dec.set_flat(&[-10.0, 10.0, 0.0, 0.0]).unwrap();
    let x = Array2::from_shape_vec((4, 1), vec![-1.0, -0.5, 0.5, 1.0]).unwrap();
    assert_eq!(evaluate_accuracy(&dec, &[enc], &[1.0], &[x], &[0, 0, 1, 1]).unwrap(), 1.0);
}

fn small() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.num_rounds = 4;
    cfg
}

#[test]
fn training_is_deterministic_and_reports_every_round() {
    let cfg = small();
    let a = run_federated_training(&cfg, TrainMode::Multimodal, 5).unwrap();
    let b = run_federated_training(&cfg, TrainMode::Multimodal, 5).unwrap();
    assert_eq!(a.rounds, b.rounds);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.rounds.len(), 4);
    assert_eq!(a.to_csv().lines().next(), Some("round,loss,accuracy,alpha_1,alpha_2"));
    for r in &a.rounds {
        assert!((r.alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(r.alpha.iter().all(|&v| v >= 0.0));
    }
    assert_eq!(a.snapshots.len(), 4);
    assert_eq!(a.snapshots[0][0].len(), cfg.num_uavs / 2);
}

#[test]
fn loss_trends_down_over_default_training() {
    let cfg = ScenarioConfig::default();
    let run = run_federated_training(&cfg, TrainMode::Multimodal, 7).unwrap();
    let losses: Vec<f64> = run.rounds.iter().map(|r| r.loss).collect();
    let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = losses[losses.len() - 5..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "{losses:?}");
}

#[test]
fn no_rounds_means_empty_trace() {
    let mut cfg = small();
    cfg.num_rounds = 0;
    let run = run_federated_training(&cfg, TrainMode::Unimodal(1), 1).unwrap();
    assert!(run.rounds.is_empty());
    assert_eq!(run.to_csv(), "round,loss,accuracy,alpha_1\n");
}

#[test]
fn unimodal_run_has_a_single_unit_weight() {
    let run = run_federated_training(&small(), TrainMode::Unimodal(0), 2).unwrap();
    assert!(run.rounds.iter().all(|r| r.alpha == vec![1.0]));
    assert_eq!(run.fused, run.encoders[0]);
}

#[test]
fn unknown_modality_is_an_error() {
    assert_eq!(run_federated_training(&small(), TrainMode::Unimodal(5), 2).unwrap_err(), FmlError::EmptyModality);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_is_linear(seed in 0u64..1000, c in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let models: Vec<ModelParams> = (0..4).map(|_| ModelParams::encoder(2, 3, 2).randomized(&mut rng)).collect();
        let sizes: Vec<usize> = (0..4).map(|_| rng.gen_range(1..50)).collect();
        let active = [true, false, true, true];
        let scaled: Vec<ModelParams> = models.iter().map(|m| m.with_flat(&m.to_flat().iter().map(|v| c * v).collect::<Vec<_>>()).unwrap()).collect();
        let base = aggregate_models(&models, &active, &sizes).unwrap().to_flat();
        let lin = aggregate_models(&scaled, &active, &sizes).unwrap().to_flat();
        for (a, b) in base.iter().zip(lin) {
            prop_assert!((c * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn fusion_ignores_modality_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let models: Vec<ModelParams> = (0..3).map(|_| ModelParams::encoder(2, 2, 2).randomized(&mut rng)).collect();
        let alpha = softmax(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        let a = fuse_global(&models, &alpha).unwrap().to_flat();
        let order = [2, 0, 1];
        let permuted: Vec<ModelParams> = order.iter().map(|&i| models[i].clone()).collect();
        let weights: Vec<f64> = order.iter().map(|&i| alpha[i]).collect();
        let b = fuse_global(&permuted, &weights).unwrap().to_flat();
        for (x, y) in a.iter().zip(b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in 0u64..1000, rows in 0usize..20, width in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = ModelParams::decoder(width, 4).randomized(&mut rng);
        let h = Array2::from_shape_fn((rows, width), |_| rng.gen_range(-50.0..50.0));
        let p = decoder_forward(&dec, h.view()).unwrap();
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn attention_weights_are_a_distribution(scores in proptest::collection::vec(-100.0f64..100.0, 1..6)) {
        let a = softmax(&scores);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(a.iter().all(|&v| v >= 0.0));
    }
}
