use super::{ImageSet, LabeledSample};
use crate::error::{Error, Result};
use crate::gp::ObservedField;
use crate::numerics::{Rng, Tensor};
use rand::seq::index;

/// How pixels are picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubsampleMode {
    #[default]
    Uniform,
    /// Probability proportional to `pixel + 1` (pixel values in 0–255).
    IntensityWeighted,
}

const INTENSITY_EPS: f64 = 1.0;

/// Draws `n_points` distinct pixels of a row-major `height×width` byte image
/// without replacement. Locations are pixel centres scaled into `[0,1]²` as
/// `(column, row)`; values are scaled into `[0,1]` and noise-free. Points are
/// returned in raster order.
pub fn subsample_superpixels(
    image: &[u8],
    height: usize,
    width: usize,
    n_points: usize,
    mode: SubsampleMode,
    rng: &mut Rng,
) -> Result<ObservedField> {
    let total = height * width;
    if image.len() != total {
        return Err(Error::InvalidInput(format!("image has {} bytes, expected {total}", image.len())));
    }
    if n_points > total {
        return Err(Error::TooManyPoints { requested: n_points, available: total });
    }
    let mut picked = match mode {
        SubsampleMode::Uniform => index::sample(rng, total, n_points).into_vec(),
        SubsampleMode::IntensityWeighted => {
            index::sample_weighted(rng, total, |i| image[i] as f64 + INTENSITY_EPS, n_points)
                .map_err(|e| Error::InvalidInput(e.to_string()))?
                .into_vec()
        }
    };
    picked.sort_unstable();
    let mut x = Vec::with_capacity(2 * n_points);
    let mut y = Vec::with_capacity(n_points);
    for &p in &picked {
        let (row, col) = (p / width, p % width);
        x.push((col as f64 + 0.5) / width as f64);
        x.push((row as f64 + 0.5) / height as f64);
        y.push(image[p] as f64 / 255.0);
    }
    ObservedField::new(
        Tensor::from_shape(&[n_points, 2], x),
        Tensor::from_shape(&[n_points, 1], y),
        Tensor::zeros(&[n_points, 1]),
    )
}

/// Subsampled images for the given indices. Sample `i` of the set always
/// uses the same random substream, whatever else is requested alongside it.
pub fn image_dataset(
    set: &ImageSet,
    indices: &[usize],
    n_points: usize,
    mode: SubsampleMode,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    let root = Rng::new(seed);
    indices
        .iter()
        .map(|&i| {
            let mut rng = root.substream(&[IMAGE_STREAM, i as u64, n_points as u64]);
            let field = subsample_superpixels(set.images.item(i), set.height(), set.width(), n_points, mode, &mut rng)?;
            Ok(LabeledSample { field, label: set.labels[i] })
        })
        .collect()
}

const IMAGE_STREAM: u64 = 0x1a6e;
