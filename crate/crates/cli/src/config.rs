//! Run configuration read from TOML, with command-line overrides.

use anyhow::{bail, Context, Result};
use pncnn::data::{SubsampleMode, TimeseriesConfig};
use pncnn::stack::{ForwardOptions, ModelSpec, Pooling};
use pncnn::train::{AdamConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory. Not part of the config hash.
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub mode: ModeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            mode: ModeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Randomly subsampled IDX images.
    Images,
    /// Synthetic irregularly sampled series with a binary label.
    Timeseries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    Uniform,
    IntensityWeighted,
}

impl From<Sampling> for SubsampleMode {
    fn from(s: Sampling) -> Self {
        match s {
            Sampling::Uniform => SubsampleMode::Uniform,
            Sampling::IntensityWeighted => SubsampleMode::IntensityWeighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory holding `images-idx3-ubyte[.gz]` and `labels-idx1-ubyte[.gz]`.
    pub dir: PathBuf,
    pub n_points: usize,
    /// Points per test image; `n_points` when absent.
    pub test_points: Option<usize>,
    pub sampling: Sampling,
    pub train: usize,
    pub test: usize,
    pub channels: usize,
    pub obs_per_channel: usize,
    pub static_channels: usize,
    pub positive_rate: f64,
    pub noise_sd: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let ts = TimeseriesConfig::default();
        DatasetConfig {
            kind: DatasetKind::Images,
            dir: PathBuf::from("data/mnist"),
            n_points: 75,
            test_points: None,
            sampling: Sampling::Uniform,
            train: 3000,
            test: 1000,
            channels: ts.channels,
            obs_per_channel: ts.obs_per_channel,
            static_channels: ts.static_channels,
            positive_rate: ts.positive_rate,
            noise_sd: ts.noise_sd,
        }
    }
}

impl DatasetConfig {
    pub fn timeseries(&self) -> TimeseriesConfig {
        TimeseriesConfig {
            channels: self.channels,
            obs_per_channel: self.obs_per_channel,
            static_channels: self.static_channels,
            positive_rate: self.positive_rate,
            noise_sd: self.noise_sd,
        }
    }

    pub fn test_points(&self) -> usize {
        self.test_points.unwrap_or(self.n_points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub blocks: usize,
    pub channels: usize,
    /// Basis operators per convolution.
    pub terms: usize,
    /// Weight of the GP likelihood in the loss.
    pub lambda: f64,
    /// Initial kernel length scale; a per-dataset default when absent.
    pub spacing: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { blocks: 2, channels: 32, terms: 9, lambda: 0.1, spacing: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub class_weighting: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        OptimConfig { lr: t.adam.lr, batch: t.batch_size, epochs: t.epochs, class_weighting: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeConfig {
    /// Drop variances after each convolution.
    pub deterministic: bool,
    /// Pool over the unit box instead of the whole space.
    pub pool_box: bool,
    /// Probes of the stochastic variance estimator.
    pub probes: usize,
}

impl Default for ModeConfig {
    fn default() -> Self {
        ModeConfig { deterministic: false, pool_box: false, probes: ForwardOptions::default().probes }
    }
}

/// Command-line values that replace their config counterparts when given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
    pub pool_box: bool,
    pub probes: Option<usize>,
    pub test_points: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        self.mode.deterministic |= o.deterministic;
        self.mode.pool_box |= o.pool_box;
        if let Some(p) = o.probes {
            self.mode.probes = p;
        }
        if let Some(n) = o.test_points {
            self.dataset.test_points = Some(n);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.kind == DatasetKind::Images && (d.n_points == 0 || d.test_points() == 0) {
            bail!("images need at least one point");
        }
        if d.kind == DatasetKind::Timeseries && d.obs_per_channel < 2 {
            bail!("time series need at least two observations per channel");
        }
        if d.train == 0 {
            bail!("empty training set");
        }
        if self.model.channels == 0 || self.model.terms == 0 {
            bail!("model needs channels and basis terms");
        }
        if self.optim.batch == 0 || !(self.optim.lr > 0.0) {
            bail!("batch size and learning rate must be positive");
        }
        if !(self.model.lambda >= 0.0) {
            bail!("lambda must be nonnegative");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML without the output directory.
    pub fn hash(&self) -> [u8; 32] {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        Sha256::digest(canonical.to_toml().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        hex(&self.hash())
    }

    pub fn spacing(&self) -> f64 {
        self.model.spacing.unwrap_or(match self.dataset.kind {
            DatasetKind::Images => 0.3,
            DatasetKind::Timeseries => 0.1,
        })
    }

    pub fn model_spec(&self, dim: usize, c_in: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            dim,
            c_in,
            channels: self.model.channels,
            blocks: self.model.blocks,
            terms: self.model.terms,
            classes,
            lambda: self.model.lambda,
            spacing: self.spacing(),
        }
    }

    pub fn forward(&self) -> ForwardOptions {
        ForwardOptions {
            deterministic: self.mode.deterministic,
            probes: self.mode.probes,
            pooling: if self.mode.pool_box { Pooling::Box } else { Pooling::Mean },
            eval_points: None,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.optim.epochs,
            batch_size: self.optim.batch,
            adam: AdamConfig { lr: self.optim.lr, ..AdamConfig::default() },
            lambda: self.model.lambda,
            forward: self.forward(),
            class_weighting: self.optim.class_weighting,
            seed: self.seed,
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
