use pncnn::data::{
    image_dataset, load_checkpoint, save_checkpoint, split_indices, timeseries_dataset, write_idx_file, IdxArray,
    ImageSet, SubsampleMode, TimeseriesConfig,
};
use pncnn::diffusion::{ConvolvedGpView, DiffusionOp};
use pncnn::equivariance::{
    admissible_subspace, build_constraint_matrix, solve_invariant_basis, Coefficient, GroupKind, GroupSample, Rep,
    DEFAULT_TOL,
};
use pncnn::gp::{ObservedField, RbfGp, RbfHyper};
use pncnn::stack::{forward, ModelParams, ModelSpec};
use pncnn::train::{evaluate, TrainConfig, Trainer};
use pncnn::{Rng, Tensor};

/// Eight 6×6 "images": bright left half for label 0, right half for 1.
fn write_toy_images(dir: &std::path::Path) {
    let (n, h, w) = (8, 6, 6);
    let mut pixels = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        for _ in 0..h {
            for c in 0..w {
                let bright = (c < w / 2) == (label == 0);
                pixels.push(if bright { 200 + i as u8 } else { 10 });
            }
        }
        labels.push(label as u8);
    }
    write_idx_file(&dir.join("images-idx3-ubyte.gz"), &IdxArray { shape: vec![n, h, w], data: pixels }).unwrap();
    write_idx_file(&dir.join("labels-idx1-ubyte"), &IdxArray { shape: vec![n], data: labels }).unwrap();
}

fn spec(c_in: usize, classes: usize, dim: usize) -> ModelSpec {
    ModelSpec { dim, c_in, channels: 3, blocks: 1, terms: 3, classes, lambda: 0.0, spacing: 0.3 }
}

#[test]
fn images_on_disk_train_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_images(dir.path());
    let set = ImageSet::load(dir.path()).unwrap();
    assert_eq!((set.len(), set.height(), set.width()), (8, 6, 6));
    let (train_idx, test_idx) = split_indices(set.len(), 6, 2, 1).unwrap();
    let train = image_dataset(&set, &train_idx, 12, SubsampleMode::Uniform, 1).unwrap();
    let test = image_dataset(&set, &test_idx, 12, SubsampleMode::Uniform, 1).unwrap();

    let s = spec(1, 2, 2);
    let cfg = TrainConfig { batch_size: 3, seed: 4, lambda: 0.0, ..TrainConfig::default() };
    let mut trainer = Trainer::new(ModelParams::init(&s, &mut Rng::new(4)), cfg.clone(), &train);
    trainer.train_epoch(&train).unwrap();

    let path = dir.path().join("ck.bin");
    save_checkpoint(&path, &trainer.checkpoint(&s, [7; 32])).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.model, trainer.model);
    assert_eq!(ck.epoch, 1);

    let mut resumed = Trainer::from_checkpoint(ck, cfg, &train);
    let a = trainer.train_epoch(&train).unwrap();
    let b = resumed.train_epoch(&train).unwrap();
    assert_eq!(a, b);
    assert_eq!(trainer.model, resumed.model);

    let e = evaluate(&trainer.model, &test, &trainer.config.forward, 0).unwrap();
    assert_eq!(e.labels.len(), 2);
    assert!(e.probabilities.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
}

#[test]
fn irregular_series_run_through_the_network() {
    let cfg = TimeseriesConfig { channels: 2, obs_per_channel: 5, static_channels: 1, ..TimeseriesConfig::default() };
    let data = timeseries_dataset(&cfg, 3, 8).unwrap();
    assert_eq!(data, timeseries_dataset(&cfg, 3, 8).unwrap());
    let model = ModelParams::init(&spec(3, 2, 1), &mut Rng::new(2));
    for s in &data {
        assert!(!s.field.is_shared_grid());
        let a = forward(&model, &s.field, 5).unwrap();
        let b = forward(&model, &s.field, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.logits.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn identity_operator_keeps_the_posterior() {
    let mut rng = Rng::new(3);
    let n = 7;
    let x = Tensor::from_shape(&[n, 2], (0..2 * n).map(|_| rng.uniform()).collect());
    let y = Tensor::from_shape(&[n, 2], rng.normals(2 * n));
    let obs = ObservedField::new(x, y, Tensor::full(&[n, 2], 0.01)).unwrap();
    let gp = RbfGp::fit(RbfHyper::new(1.0, 0.3, 2), &obs).unwrap();
    let q = Tensor::from_shape(&[4, 2], (0..8).map(|_| rng.uniform()).collect());
    let op = DiffusionOp::identity(2, 2);
    let view = ConvolvedGpView::new(&gp, &op).unwrap();
    assert!(view.conv_mean(&q).max_abs_diff(&gp.posterior_mean(&q)) < 1e-12);
    assert!(view.conv_var_diag(&q).max_abs_diff(&gp.posterior_var(&q)) < 1e-10);
}

#[test]
fn vector_fields_admit_rotation_equivariant_drifts() {
    let mut rng = Rng::new(1);
    let sample = GroupSample::draw(GroupKind::So2, 8, &mut rng);
    let (out, inp) = (Rep::vector(), Rep::scalar());
    let c = build_constraint_matrix(&out, &inp, Coefficient::Drift, &sample);
    let basis = solve_invariant_basis(&c, &admissible_subspace(2, Coefficient::Drift), DEFAULT_TOL);
    // a scalar feeding a vector output through a drift: the identity and the
    // quarter-turn pairing of output and spatial index
    assert_eq!(basis.dim(), 2);
}
