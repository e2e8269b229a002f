use crate::error::{Error, Result};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use std::io::{Read, Write};
use std::path::Path;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// An unsigned-byte IDX array: images are `[count, rows, cols]`, labels
/// `[count]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn count(&self) -> usize {
        self.shape[0]
    }

    /// Row-major bytes of item `i`.
    pub fn item(&self, i: usize) -> &[u8] {
        let stride: usize = self.shape[1..].iter().product();
        &self.data[i * stride..(i + 1) * stride]
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or(Error::TruncatedPayload { expected: 4 * i + 4, found: bytes.len() })
    };
    let magic = word(0)?;
    let ndim = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => return Err(Error::BadMagic(other)),
    };
    let shape = (1..=ndim).map(|i| word(i).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let header = 4 * (ndim + 1);
    let expected = header + shape.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload { expected, found: bytes.len() });
    }
    Ok(IdxArray { shape, data: bytes[header..expected].to_vec() })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let magic = if array.shape.len() == 3 { IMAGES_MAGIC } else { LABELS_MAGIC };
    let mut out = magic.to_be_bytes().to_vec();
    for &d in &array.shape {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

/// Reads a raw or gzip-compressed IDX file.
pub fn read_idx_file(path: &Path) -> Result<IdxArray> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        parse_idx(&out)
    } else {
        parse_idx(&raw)
    }
}

/// Writes an IDX file, gzip-compressed when the name ends in `.gz`.
pub fn write_idx_file(path: &Path, array: &IdxArray) -> Result<()> {
    let bytes = encode_idx(array);
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(std::fs::File::create(path)?, Compression::default());
        enc.write_all(&bytes)?;
        enc.finish()?;
    } else {
        std::fs::write(path, bytes)?;
    }
    Ok(())
}

/// Images with their labels.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub images: IdxArray,
    pub labels: Vec<usize>,
}

impl ImageSet {
    /// Loads `images-idx3-ubyte[.gz]` and `labels-idx1-ubyte[.gz]` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let find = |stem: &str| -> Result<std::path::PathBuf> {
            [format!("{stem}.gz"), stem.to_string()]
                .into_iter()
                .map(|f| dir.join(f))
                .find(|p| p.exists())
                .ok_or_else(|| Error::InvalidInput(format!("no {stem} in {}", dir.display())))
        };
        let images = read_idx_file(&find("images-idx3-ubyte")?)?;
        let labels = read_idx_file(&find("labels-idx1-ubyte")?)?;
        if images.shape.len() != 3 || labels.shape.len() != 1 || images.count() != labels.count() {
            return Err(Error::InvalidInput(format!(
                "image shape {:?} does not match label shape {:?}",
                images.shape, labels.shape
            )));
        }
        Ok(ImageSet { images, labels: labels.data.iter().map(|&b| b as usize).collect() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.shape[1]
    }

    pub fn width(&self) -> usize {
        self.images.shape[2]
    }
}
