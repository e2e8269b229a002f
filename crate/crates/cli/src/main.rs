use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use pncnn_cli::commands::{InspectArgs, Split};
use pncnn_cli::{eval, inspect, train, EvalArgs, Overrides, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Probabilistic numeric CNNs on irregularly sampled data.
///
/// Configs are TOML. Missing keys take their defaults: 2 blocks of 32
/// channels, 9 basis operators, lambda 0.1, Adam with lr 3e-3, batch 50,
/// 10 epochs, 20 variance probes, 75-point images with a 3000/1000 split.
#[derive(Parser)]
#[command(name = "pncnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics.csv, timing.csv and checkpoint.ckpt.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, optionally at several resolutions; writes eval.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Comma-separated points per sample to sweep.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
        /// Evaluate only this many items of the split.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Dump per-layer fields on a grid and the uncertainty-versus-resolution table.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test sample whose fields are dumped.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Grid points per axis.
        #[arg(long, default_value_t = 32)]
        grid: usize,
        /// Comma-separated resolutions for the uncertainty table.
        #[arg(long, value_delimiter = ',', default_value = "25,75,150,300")]
        resolutions: Vec<usize>,
        /// Test samples per resolution in the uncertainty table.
        #[arg(long, default_value_t = 20)]
        median_samples: usize,
        /// Also write the rotation-equivariance report.
        #[arg(long)]
        equivariance: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop variances after each convolution.
    #[arg(long)]
    deterministic: bool,
    /// Pool over the unit box instead of the whole space.
    #[arg(long)]
    pool_box: bool,
    /// Probes of the stochastic variance estimator.
    #[arg(long)]
    probes: Option<usize>,
    /// Points per test sample.
    #[arg(long)]
    test_points: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            deterministic: self.deterministic,
            pool_box: self.pool_box,
            probes: self.probes,
            test_points: self.test_points,
        })?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, resume } => {
            let cfg = common.resolve()?;
            let s = train(&cfg, resume.as_deref())?;
            println!("{}", s.metrics.display());
            println!("{}", s.checkpoint.display());
        }
        Command::Eval { common, checkpoint, split, sweep, limit } => {
            let cfg = common.resolve()?;
            let report = eval(&cfg, &EvalArgs { checkpoint, split, points: sweep, limit })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Inspect { common, checkpoint, sample, grid, resolutions, median_samples, equivariance } => {
            let cfg = common.resolve()?;
            let args = InspectArgs { checkpoint, sample, grid, resolutions, median_samples, equivariance };
            let s = inspect(&cfg, &args)?;
            println!("n_points,layer,median_std");
            for r in &s.uncertainty {
                println!("{},{},{}", r.n_points, r.layer, r.median_std);
            }
            if let Some(text) = s.equivariance {
                print!("{text}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
