//! Synthetic irregularly sampled multichannel series.
//!
//! A latent curve `z(t) = c₀ + Σ_{j=1..3} (a_j cos(πjt) + b_j sin(πjt))/j` on
//! `[0,1]` has standard normal coefficients. The label is 1 when
//! `∫₀¹ z(t) dt = c₀ + Σ_{j odd} 2b_j/(πj²)` exceeds the threshold that makes
//! positives occur at the configured rate. Channel `c` observes
//! `gain_c·z(t) + noise` at its own sorted uniform times, with
//! `gain_c = (−1)^c/(1 + c/2)`. Static covariates are extra channels holding
//! one standard normal value, observed at every time of the sample; they carry
//! no label information.

use super::LabeledSample;
use crate::error::{Error, Result};
use crate::gp::ObservedField;
use crate::numerics::special::normal_quantile;
use crate::numerics::{Rng, Tensor};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeseriesConfig {
    pub channels: usize,
    pub obs_per_channel: usize,
    pub static_channels: usize,
    pub positive_rate: f64,
    pub noise_sd: f64,
}

impl Default for TimeseriesConfig {
    fn default() -> Self {
        TimeseriesConfig { channels: 2, obs_per_channel: 16, static_channels: 0, positive_rate: 0.5, noise_sd: 0.1 }
    }
}

const HARMONICS: usize = 3;

fn integral_sd() -> f64 {
    let odd: f64 = (1..=HARMONICS).filter(|j| j % 2 == 1).map(|j| (2.0 / (PI * (j * j) as f64)).powi(2)).sum();
    (1.0 + odd).sqrt()
}

pub(crate) fn channel_gain(c: usize) -> f64 {
    let sign = if c.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign / (1.0 + 0.5 * c as f64)
}

/// The latent curve's coefficients: `c₀`, then `(a_j, b_j)` pairs.
struct Latent([f64; 1 + 2 * HARMONICS]);

impl Latent {
    fn eval(&self, t: f64) -> f64 {
        let c = &self.0;
        c[0] + (1..=HARMONICS)
            .map(|j| {
                let w = PI * j as f64 * t;
                (c[2 * j - 1] * w.cos() + c[2 * j] * w.sin()) / j as f64
            })
            .sum::<f64>()
    }

    fn integral(&self) -> f64 {
        let c = &self.0;
        c[0] + (1..=HARMONICS).filter(|j| j % 2 == 1).map(|j| 2.0 * c[2 * j] / (PI * (j * j) as f64)).sum::<f64>()
    }
}

/// One labelled series. Rows of the field are all observation times in
/// increasing order; the mask marks which channels saw each row.
pub fn gen_timeseries(config: &TimeseriesConfig, rng: &mut Rng) -> Result<LabeledSample> {
    if config.obs_per_channel < 2 || config.channels == 0 {
        return Err(Error::InvalidInput("need at least one channel with two observations".into()));
    }
    if !(0.0..1.0).contains(&config.positive_rate) || config.positive_rate == 0.0 {
        return Err(Error::InvalidInput(format!("positive rate {} outside (0, 1)", config.positive_rate)));
    }
    let mut coef = [0.0; 1 + 2 * HARMONICS];
    coef.iter_mut().for_each(|c| *c = rng.normal());
    let latent = Latent(coef);
    let threshold = integral_sd() * normal_quantile(1.0 - config.positive_rate);
    let label = usize::from(latent.integral() > threshold);

    let mut obs: Vec<(f64, usize, f64)> = Vec::new();
    for c in 0..config.channels {
        for _ in 0..config.obs_per_channel {
            let t = rng.uniform();
            obs.push((t, c, channel_gain(c) * latent.eval(t) + config.noise_sd * rng.normal()));
        }
    }
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let statics: Vec<f64> = rng.normals(config.static_channels);

    let (n, width) = (obs.len(), config.channels + config.static_channels);
    let mut y = Tensor::zeros(&[n, width]);
    let mut v = Tensor::zeros(&[n, width]);
    let mut mask = vec![false; n * width];
    for (i, &(_, c, value)) in obs.iter().enumerate() {
        y.set(i, c, value);
        v.set(i, c, config.noise_sd * config.noise_sd);
        mask[i * width + c] = true;
        for (s, &val) in statics.iter().enumerate() {
            y.set(i, config.channels + s, val);
            mask[i * width + config.channels + s] = true;
        }
    }
    let x = Tensor::from_shape(&[n, 1], obs.iter().map(|o| o.0).collect());
    let field = ObservedField::with_mask(x, y, v, Some(mask))?;
    Ok(LabeledSample { field, label })
}

/// `n` series with one random substream per sample index.
pub fn timeseries_dataset(config: &TimeseriesConfig, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    let root = Rng::new(seed);
    (0..n).map(|i| gen_timeseries(config, &mut root.substream(&[SERIES_STREAM, i as u64]))).collect()
}

const SERIES_STREAM: u64 = 0x7153;
