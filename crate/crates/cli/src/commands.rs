//! The `train`, `eval` and `inspect` commands. Every artifact records the
//! config hash and seed.

use crate::config::{hex, RunConfig};
use crate::dataset::{DataShape, Source};
use anyhow::{bail, Context, Result};
use pncnn::data::{load_checkpoint, save_checkpoint, Checkpoint, LabeledSample};
use pncnn::equivariance::check_scalar_diffusion_triviality;
use pncnn::gp::ObservedField;
use pncnn::metrics::{auroc, average_precision};
use pncnn::stack::{forward_with, ForwardOptions, ModelParams, ModelSpec};
use pncnn::train::{evaluate, Trainer};
use pncnn::{Rng, Tensor};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

const INIT_STREAM: u64 = 0x1417;
const INSPECT_STREAM: u64 = 0x1d5c;

fn header(cfg: &RunConfig) -> String {
    format!("# config_hash={} seed={}\n", cfg.hash_hex(), cfg.seed)
}

fn check_shape(spec: &ModelSpec, shape: DataShape) -> Result<()> {
    if (spec.dim, spec.c_in, spec.classes) != (shape.dim, shape.c_in, shape.classes) {
        bail!(
            "checkpoint expects dim {}, {} input channels, {} classes; dataset has dim {}, {} channels, {} classes",
            spec.dim,
            spec.c_in,
            spec.classes,
            shape.dim,
            shape.c_in,
            shape.classes
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: u64,
    pub task_loss: f64,
    pub gp_nll: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub rows: Vec<EpochRow>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Trains from scratch, or from `resume` up to the configured epoch count.
/// Writes the resolved config, metrics and timing CSVs and a checkpoint
/// after every epoch.
pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    let out = &cfg.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;

    let source = Source::open(cfg)?;
    let shape = source.shape();
    let train = source.train()?;
    let test = source.test_at(source.test_points(), None)?;
    let spec = cfg.model_spec(shape.dim, shape.c_in, shape.classes);
    let mut trainer = match resume {
        Some(path) => {
            let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            if ck.spec != spec {
                bail!("checkpoint architecture differs from the config");
            }
            Trainer::from_checkpoint(ck, cfg.train_config(), &train)
        }
        None => {
            let model = ModelParams::init(&spec, &mut Rng::new(cfg.seed).substream(&[INIT_STREAM]));
            Trainer::new(model, cfg.train_config(), &train)
        }
    };

    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = header(cfg);
    metrics.push_str("epoch,task_loss,gp_nll,train_acc,test_acc\n");
    let mut timing = header(cfg);
    timing.push_str("epoch,wall_seconds\n");
    let ck_path = out.join(CHECKPOINT_FILE);
    let mut rows = Vec::new();
    let opts = cfg.forward();
    while (trainer.epoch as usize) < cfg.optim.epochs {
        let start = Instant::now();
        let stats = trainer.train_epoch(&train)?;
        let test_acc =
            if test.is_empty() { f64::NAN } else { evaluate(&trainer.model, &test, &opts, cfg.seed)?.accuracy };
        let row = EpochRow {
            epoch: trainer.epoch,
            task_loss: stats.task_loss,
            gp_nll: stats.gp_nll,
            train_acc: stats.accuracy,
            test_acc,
        };
        let secs = start.elapsed().as_secs_f64();
        eprintln!(
            "epoch {} task {:.4} nll {:.2} train {:.4} test {:.4} ({secs:.1}s)",
            row.epoch, row.task_loss, row.gp_nll, row.train_acc, row.test_acc
        );
        writeln!(metrics, "{},{},{},{},{}", row.epoch, row.task_loss, row.gp_nll, row.train_acc, row.test_acc)?;
        writeln!(timing, "{},{secs:.3}", row.epoch)?;
        fs::write(&metrics_path, &metrics)?;
        fs::write(out.join(TIMING_FILE), &timing)?;
        save_checkpoint(&ck_path, &trainer.checkpoint(&spec, cfg.hash()))?;
        rows.push(row);
    }
    if rows.is_empty() {
        fs::write(&metrics_path, &metrics)?;
        save_checkpoint(&ck_path, &trainer.checkpoint(&spec, cfg.hash()))?;
    }
    Ok(TrainSummary { rows, checkpoint: ck_path, metrics: metrics_path })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub split: Split,
    /// Resolutions to evaluate; the config's test resolution when empty.
    pub points: Vec<usize>,
    /// Evaluate only the first items of the split.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub n_points: usize,
    pub samples: usize,
    pub accuracy: f64,
    pub task_loss: f64,
    pub gp_nll: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub average_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub checkpoint_config_hash: String,
    pub seed: u64,
    pub epoch: u64,
    pub split: Split,
    pub deterministic: bool,
    pub records: Vec<EvalRecord>,
}

fn open_checkpoint(path: &Path, shape: DataShape) -> Result<Checkpoint> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    check_shape(&ck.spec, shape)?;
    Ok(ck)
}

/// Accuracy and losses at every requested resolution; AUROC and average
/// precision on binary tasks. Writes `eval.json` under the output directory.
pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<EvalReport> {
    let source = Source::open(cfg)?;
    let shape = source.shape();
    let ck = open_checkpoint(&args.checkpoint, shape)?;
    let points = if args.points.is_empty() { vec![source.test_points()] } else { args.points.clone() };
    let opts = cfg.forward();
    let mut records = Vec::new();
    for &n in &points {
        let data = match args.split {
            Split::Train => source.train_at(n, args.limit)?,
            Split::Test => source.test_at(n, args.limit)?,
        };
        records.push(eval_record(&ck.model, &data, &opts, cfg.seed, n, shape.classes)?);
    }
    let report = EvalReport {
        config_hash: cfg.hash_hex(),
        checkpoint_config_hash: hex(&ck.config_hash),
        seed: cfg.seed,
        epoch: ck.epoch,
        split: args.split,
        deterministic: opts.deterministic,
        records,
    };
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("eval.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

fn eval_record(
    model: &ModelParams,
    data: &[LabeledSample],
    opts: &ForwardOptions,
    seed: u64,
    n_points: usize,
    classes: usize,
) -> Result<EvalRecord> {
    let e = evaluate(model, data, opts, seed)?;
    let (auroc, average_precision) = if classes == 2 {
        let scores: Vec<f64> = e.probabilities.iter().map(|p| p[1]).collect();
        let positive: Vec<bool> = e.labels.iter().map(|&l| l == 1).collect();
        (auroc(&scores, &positive), average_precision(&scores, &positive))
    } else {
        (None, None)
    };
    Ok(EvalRecord {
        n_points,
        samples: data.len(),
        accuracy: e.accuracy,
        task_loss: e.task_loss,
        gp_nll: e.gp_nll,
        auroc,
        average_precision,
    })
}

#[derive(Debug, Clone)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
    /// Index into the test split of the sample whose fields are dumped.
    pub sample: usize,
    /// Grid points per axis.
    pub grid: usize,
    pub resolutions: Vec<usize>,
    /// Test samples per resolution in the uncertainty table.
    pub median_samples: usize,
    pub equivariance: bool,
}

impl Default for InspectArgs {
    fn default() -> Self {
        InspectArgs {
            checkpoint: PathBuf::new(),
            sample: 0,
            grid: 32,
            resolutions: vec![25, 75, 150, 300],
            median_samples: 20,
            equivariance: false,
        }
    }
}

/// Median posterior standard deviation per layer at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyRow {
    pub n_points: usize,
    pub layer: usize,
    pub median_std: f64,
}

#[derive(Debug, Clone)]
pub struct InspectSummary {
    pub field_files: Vec<PathBuf>,
    pub uncertainty: Vec<UncertaintyRow>,
    pub equivariance: Option<String>,
}

/// Cell centres of a `per_axis`-point regular grid on the unit cube.
pub fn unit_grid(dim: usize, per_axis: usize) -> Tensor {
    let n = per_axis.pow(dim as u32);
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let mut rest = i;
        let mut coords = vec![0.0; dim];
        for c in coords.iter_mut().rev() {
            *c = ((rest % per_axis) as f64 + 0.5) / per_axis as f64;
            rest /= per_axis;
        }
        data.extend(coords);
    }
    Tensor::from_shape(&[n, dim], data)
}

/// Posterior means and standard deviations of every layer's GP at `grid`.
pub fn layer_fields(
    model: &ModelParams,
    sample: &ObservedField,
    opts: &ForwardOptions,
    grid: &Tensor,
    rng: &mut Rng,
) -> Result<Vec<(Tensor, Tensor)>> {
    let trace = forward_with(model, sample, opts, rng)?;
    trace
        .layers
        .iter()
        .map(|l| {
            let gp = l.gp()?;
            Ok((gp.posterior_mean(grid), gp.posterior_var(grid).map(|v| v.max(0.0).sqrt())))
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per layer, the median over samples of each sample's median standard
/// deviation over grid points and channels.
pub fn median_uncertainty(
    model: &ModelParams,
    samples: &[LabeledSample],
    opts: &ForwardOptions,
    grid: &Tensor,
    seed: u64,
) -> Result<Vec<f64>> {
    let root = Rng::new(seed);
    let per_sample: Vec<Vec<f64>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let fields = layer_fields(model, &s.field, opts, grid, &mut root.substream(&[INSPECT_STREAM, i as u64]))?;
            Ok(fields.into_iter().map(|(_, sd)| median(&mut sd.into_data())).collect())
        })
        .collect::<Result<_>>()?;
    let layers = per_sample.first().map_or(0, Vec::len);
    Ok((0..layers).map(|l| median(&mut per_sample.iter().map(|m| m[l]).collect::<Vec<_>>())).collect())
}

/// Field dumps for one test sample, the uncertainty-versus-resolution table
/// and optionally the rotation-equivariance report, under `<out>/inspect`.
pub fn inspect(cfg: &RunConfig, args: &InspectArgs) -> Result<InspectSummary> {
    let source = Source::open(cfg)?;
    let shape = source.shape();
    let ck = open_checkpoint(&args.checkpoint, shape)?;
    let dir = cfg.out.join("inspect");
    fs::create_dir_all(&dir)?;
    let opts = cfg.forward();
    let grid = unit_grid(shape.dim, args.grid);
    let seed = cfg.seed;

    let test = source.test_at(source.test_points(), Some(args.sample + 1))?;
    let sample = test.get(args.sample).with_context(|| format!("test split has no sample {}", args.sample))?;
    let fields = layer_fields(&ck.model, &sample.field, &opts, &grid, &mut Rng::new(seed))?;
    let mut field_files = Vec::new();
    for (l, (mean, sd)) in fields.iter().enumerate() {
        let mut text = header(cfg);
        let coords: Vec<String> = (0..shape.dim).map(|k| format!("x{k}")).collect();
        writeln!(text, "{},channel,mean,std", coords.join(","))?;
        for i in 0..grid.rows() {
            let at: Vec<String> = grid.row(i).iter().map(|v| v.to_string()).collect();
            for c in 0..mean.cols() {
                writeln!(text, "{},{c},{},{}", at.join(","), mean.at(i, c), sd.at(i, c))?;
            }
        }
        let path = dir.join(format!("fields_layer{l}.csv"));
        fs::write(&path, text)?;
        field_files.push(path);
    }

    let mut uncertainty = Vec::new();
    let mut table = header(cfg);
    table.push_str("n_points,layer,median_std\n");
    for &n in &args.resolutions {
        let samples = source.test_at(n, Some(args.median_samples))?;
        for (layer, m) in median_uncertainty(&ck.model, &samples, &opts, &grid, seed)?.into_iter().enumerate() {
            writeln!(table, "{n},{layer},{m}")?;
            uncertainty.push(UncertaintyRow { n_points: n, layer, median_std: m });
        }
    }
    fs::write(dir.join("median_uncertainty.csv"), table)?;

    let equivariance = if args.equivariance {
        let report = check_scalar_diffusion_triviality(4, 100, &mut Rng::new(cfg.seed));
        let text = format!("{}{report}", header(cfg));
        fs::write(dir.join("equivariance.txt"), &text)?;
        let json = serde_json::json!({
            "config_hash": cfg.hash_hex(),
            "seed": cfg.seed,
            "tolerance": report.tol,
            "drift_dimension": report.drift.dim(),
            "diffusion_dimension": report.diffusion.dim(),
            "identity_overlap": report.identity_overlap,
            "min_gap_ratio": report.min_gap_ratio(),
            "drift_singular_values": report.drift.singular_values,
            "diffusion_singular_values": report.diffusion.singular_values,
            "kernels": report.kernels.iter().map(|k| serde_json::json!({
                "label": k.label, "beta": k.beta, "sigma": k.sigma, "residual": k.residual,
            })).collect::<Vec<_>>(),
        });
        fs::write(dir.join("equivariance.json"), serde_json::to_string_pretty(&json)? + "\n")?;
        Some(text)
    } else {
        None
    };
    Ok(InspectSummary { field_files, uncertainty, equivariance })
}
