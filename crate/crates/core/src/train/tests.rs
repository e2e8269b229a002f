use super::*;
use crate::data::{decode_checkpoint, encode_checkpoint};
use crate::gp::ObservedField;

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
    let mut p = vec![Tensor::vector(vec![1.0, -2.0, 0.5])];
    let mut adam = Adam::new(cfg, &p);
    adam.update(&mut p, &[Tensor::vector(vec![3.0, -0.01, 0.0])]);
    // bias-corrected m̂/√v̂ = sign(g) on the first step
    let want = [0.9, -1.9, 0.5];
    for (a, b) in p[0].data().iter().zip(want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert_eq!(adam.step, 1);
}

#[test]
fn adam_matches_reference_recursion() {
    let cfg = AdamConfig { lr: 0.05, beta1: 0.8, beta2: 0.9, eps: 1e-6 };
    let mut p = vec![Tensor::vector(vec![2.0])];
    let mut adam = Adam::new(cfg, &p);
    let (mut x, mut m, mut v) = (2.0f64, 0.0, 0.0);
    for t in 1..=20 {
        let g = 2.0 * x - 1.0;
        let grad = Tensor::vector(vec![2.0 * p[0].data()[0] - 1.0]);
        adam.update(&mut p, &[grad]);
        m = 0.8 * m + 0.2 * g;
        v = 0.9 * v + 0.1 * g * g;
        x -= 0.05 * (m / (1.0 - 0.8f64.powi(t))) / ((v / (1.0 - 0.9f64.powi(t))).sqrt() + 1e-6);
        assert!((p[0].data()[0] - x).abs() < 1e-14);
    }
}

#[test]
fn class_weights_are_inverse_frequencies() {
    let s = |label| LabeledSample {
        field: ObservedField::new(Tensor::zeros(&[1, 2]), Tensor::zeros(&[1, 1]), Tensor::zeros(&[1, 1])).unwrap(),
        label,
    };
    let data = vec![s(0), s(0), s(0), s(1), s(2), s(2)];
    let w = class_weights(&data, 4);
    assert_eq!(w, vec![6.0 / 9.0, 6.0 / 3.0, 6.0 / 6.0, 0.0]);
    let weighted: f64 = data.iter().map(|d| w[d.label]).sum();
    assert!((weighted - data.len() as f64).abs() < 1e-12);
}

#[test]
fn metrics_helpers() {
    assert_eq!(argmax(&[0.1, 3.0, 3.0, -1.0]), 1);
    let p = softmax(&[0.0, 0.0, 2f64.ln()]);
    assert!((p[2] - 0.5).abs() < 1e-15 && (p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

/// Two 6-point classes: a bright blob on the left or on the right.
fn toy_data(n: usize, seed: u64) -> Vec<LabeledSample> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let m = 8;
            let x: Vec<f64> = (0..2 * m).map(|_| rng.uniform()).collect();
            let y: Vec<f64> = (0..m)
                .map(|j| {
                    let centre = if label == 0 { 0.25 } else { 0.75 };
                    (-(x[2 * j] - centre).powi(2) / 0.02).exp()
                })
                .collect();
            let field = ObservedField::new(
                Tensor::from_shape(&[m, 2], x),
                Tensor::from_shape(&[m, 1], y),
                Tensor::zeros(&[m, 1]),
            )
            .unwrap();
            LabeledSample { field, label }
        })
        .collect()
}

fn toy_spec() -> ModelSpec {
    ModelSpec { dim: 2, c_in: 1, channels: 4, blocks: 1, terms: 9, classes: 2, lambda: 0.01, spacing: 0.2 }
}

fn toy_trainer(seed: u64, data: &[LabeledSample]) -> Trainer {
    let model = ModelParams::init(&toy_spec(), &mut Rng::new(seed));
    let cfg = TrainConfig {
        batch_size: 4,
        lambda: 0.01,
        seed,
        adam: AdamConfig { lr: 0.03, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    Trainer::new(model, cfg, data)
}

#[test]
fn training_fits_a_separable_toy_problem() {
    let data = toy_data(16, 1);
    let mut t = toy_trainer(2, &data);
    let before = evaluate(&t.model, &data, &t.config.forward, 0).unwrap();
    for _ in 0..15 {
        t.train_epoch(&data).unwrap();
    }
    let after = evaluate(&t.model, &data, &t.config.forward, 0).unwrap();
    assert!(after.task_loss < before.task_loss, "{} -> {}", before.task_loss, after.task_loss);
    assert!(after.accuracy >= 0.95, "accuracy {}", after.accuracy);
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let data = toy_data(8, 3);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut t = toy_trainer(4, &data);
            let s = t.train_epoch(&data).unwrap();
            (t.model, s)
        })
    };
    let (m1, s1) = run(1);
    let (m3, s3) = run(3);
    assert_eq!(m1, m3);
    assert_eq!(s1, s3);
}

#[test]
fn resume_from_checkpoint_reproduces_next_step() {
    let data = toy_data(8, 5);
    let mut straight = toy_trainer(6, &data);
    straight.train_epoch(&data).unwrap();
    let bytes = encode_checkpoint(&straight.checkpoint(&toy_spec(), [7; 32]));

    let next = straight.epoch_order(data.len());
    let want = straight.step(&data, &next[..4]).unwrap();

    let ck = decode_checkpoint(&bytes).unwrap();
    let mut resumed = Trainer::from_checkpoint(ck, straight.config.clone(), &data);
    assert_eq!(resumed.epoch_order(data.len()), next);
    let got = resumed.step(&data, &next[..4]).unwrap();
    assert_eq!(got.task_loss.to_bits(), want.task_loss.to_bits());
    assert_eq!(got.gp_nll.to_bits(), want.gp_nll.to_bits());
    assert_eq!(resumed.model, straight.model);
}

#[test]
fn evaluation_is_seed_deterministic() {
    let data = toy_data(6, 7);
    let t = toy_trainer(8, &data);
    let a = evaluate(&t.model, &data, &t.config.forward, 1).unwrap();
    assert_eq!(a, evaluate(&t.model, &data, &t.config.forward, 1).unwrap());
    assert_eq!(a.labels, data.iter().map(|d| d.label).collect::<Vec<_>>());
    assert!(a.probabilities.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
}
