//! Datasets, file formats and checkpoints.
//!
//! Every location emitted here lies in `[0,1]^d` so default length scales do
//! not depend on the source resolution.

mod checkpoint;
mod idx;
mod images;
mod timeseries;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use idx::{encode_idx, parse_idx, read_idx_file, write_idx_file, IdxArray, ImageSet};
pub use images::{image_dataset, subsample_superpixels, SubsampleMode};
pub use timeseries::{gen_timeseries, timeseries_dataset, TimeseriesConfig};

use crate::error::{Error, Result};
use crate::gp::ObservedField;
use crate::numerics::Rng;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub field: ObservedField,
    pub label: usize,
}

/// Disjoint train and test index sets drawn from `0..n` by a seeded shuffle.
pub fn split_indices(n: usize, n_train: usize, n_test: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train + n_test > n {
        return Err(Error::InvalidInput(format!("split of {n_train}+{n_test} from {n} items")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut Rng::new(seed).substream(&[SPLIT_STREAM]));
    let test = order[n_train..n_train + n_test].to_vec();
    order.truncate(n_train);
    Ok((order, test))
}

const SPLIT_STREAM: u64 = 0x5b1;
