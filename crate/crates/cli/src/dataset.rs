//! Train and test sets described by a [`RunConfig`].

use crate::config::{DatasetKind, RunConfig};
use anyhow::{Context, Result};
use pncnn::data::{image_dataset, split_indices, timeseries_dataset, ImageSet, LabeledSample};

/// Shapes a model needs to consume a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataShape {
    pub dim: usize,
    pub c_in: usize,
    pub classes: usize,
}

pub struct Source {
    cfg: RunConfig,
    images: Option<ImageSet>,
}

impl Source {
    pub fn open(cfg: &RunConfig) -> Result<Self> {
        let images = match cfg.dataset.kind {
            DatasetKind::Images => {
                let dir = &cfg.dataset.dir;
                Some(ImageSet::load(dir).with_context(|| format!("loading images from {}", dir.display()))?)
            }
            DatasetKind::Timeseries => None,
        };
        Ok(Source { cfg: cfg.clone(), images })
    }

    pub fn shape(&self) -> DataShape {
        match &self.images {
            Some(set) => DataShape { dim: 2, c_in: 1, classes: set.labels.iter().max().map_or(1, |m| m + 1) },
            None => {
                let d = &self.cfg.dataset;
                DataShape { dim: 1, c_in: d.channels + d.static_channels, classes: 2 }
            }
        }
    }

    fn split(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let d = &self.cfg.dataset;
        match &self.images {
            Some(set) => Ok(split_indices(set.len(), d.train, d.test, self.cfg.seed)?),
            None => Ok(((0..d.train).collect(), (d.train..d.train + d.test).collect())),
        }
    }

    fn build(&self, indices: &[usize], n_points: usize) -> Result<Vec<LabeledSample>> {
        let seed = self.cfg.seed;
        match &self.images {
            Some(set) => Ok(image_dataset(set, indices, n_points, self.cfg.dataset.sampling.into(), seed)?),
            None => {
                let mut ts = self.cfg.dataset.timeseries();
                ts.obs_per_channel = n_points;
                let end = indices.iter().max().map_or(0, |m| m + 1);
                let all = timeseries_dataset(&ts, end, seed)?;
                Ok(indices.iter().map(|&i| all[i].clone()).collect())
            }
        }
    }

    fn base_points(&self) -> usize {
        match self.cfg.dataset.kind {
            DatasetKind::Images => self.cfg.dataset.n_points,
            DatasetKind::Timeseries => self.cfg.dataset.obs_per_channel,
        }
    }

    /// Points per sample of the test split by default.
    pub fn test_points(&self) -> usize {
        self.cfg.dataset.test_points.unwrap_or(self.base_points())
    }

    pub fn train(&self) -> Result<Vec<LabeledSample>> {
        self.build(&self.split()?.0, self.base_points())
    }

    /// The training split resampled at `n_points` per sample.
    pub fn train_at(&self, n_points: usize, limit: Option<usize>) -> Result<Vec<LabeledSample>> {
        let (mut idx, _) = self.split()?;
        idx.truncate(limit.unwrap_or(idx.len()));
        self.build(&idx, n_points)
    }

    /// The test split at `n_points` per sample (points per channel for
    /// series); the same underlying items at every resolution.
    pub fn test_at(&self, n_points: usize, limit: Option<usize>) -> Result<Vec<LabeledSample>> {
        let (_, mut idx) = self.split()?;
        idx.truncate(limit.unwrap_or(idx.len()));
        self.build(&idx, n_points)
    }
}
