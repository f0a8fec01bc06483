//! Datasets: synthetic Gaussian mixtures, MNIST-style IDX files, additive
//! noise and seeded splits.

use std::fs;
use std::path::Path;

use crate::error::{Error, IdxError, Result};
use crate::nncore::{RandomStream, Rng, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const GMM_MEAN_RANGE: f64 = 5.0;
pub const GMM_STD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n × dim_x`.
    pub features: Tensor,
    pub labels: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Option<Vec<u32>>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Dimension("features must be a matrix".into()));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::Dimension(format!(
                    "{} labels for {} samples",
                    l.len(),
                    features.rows()
                )));
            }
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select_rows(indices)?;
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(Self { features, labels })
    }

    /// First `n` samples (all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Mixture of `modes` isotropic Gaussians in `dim` dimensions.
///
/// Means are uniform in `[-5, 5]^dim`; each sample picks a mode uniformly and
/// adds `N(0, 0.5²)` noise per coordinate. Labels are mode indices.
/// Means are drawn first, then samples in order, so a longer draw with the
/// same seed extends a shorter one.
pub fn gmm_generate(modes: usize, dim: usize, n: usize, seed: u64) -> Result<Dataset> {
    let means = gmm_means(modes, dim, seed)?;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be positive".into(),
        ));
    }
    let mut rng = Rng::new(seed).fork(1);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let m = rng.index(modes);
        labels.push(m as u32);
        for v in means.row(m) {
            data.push(v + GMM_STD * rng.standard_normal());
        }
    }
    Dataset::new(Tensor::matrix(n, dim, data)?, Some(labels))
}

/// The mode means [`gmm_generate`] uses for `seed`, `modes × dim`.
pub fn gmm_means(modes: usize, dim: usize, seed: u64) -> Result<Tensor> {
    if modes == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "modes and dim must be positive".into(),
        ));
    }
    let mut rng = Rng::new(seed).fork(0);
    let data = (0..modes * dim)
        .map(|_| GMM_MEAN_RANGE * (2.0 * rng.uniform() - 1.0))
        .collect();
    Tensor::matrix(modes, dim, data)
}

/// Raw IDX3 unsigned-byte image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(IdxError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, payload: usize) -> Result<(), IdxError> {
    let expected = header + payload;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IdxError::TrailingBytes(bytes.len() - expected));
    }
    Ok(())
}

impl IdxImages {
    pub fn parse(bytes: &[u8]) -> Result<Self, IdxError> {
        check_magic(bytes, IDX_IMAGES_MAGIC)?;
        let count = be_u32(bytes, 4)? as usize;
        let rows = be_u32(bytes, 8)? as usize;
        let cols = be_u32(bytes, 12)? as usize;
        check_payload(bytes, 16, count * rows * cols)?;
        Ok(Self {
            count,
            rows,
            cols,
            pixels: bytes[16..].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [
            IDX_IMAGES_MAGIC,
            self.count as u32,
            self.rows as u32,
            self.cols as u32,
        ] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

impl IdxLabels {
    pub fn parse(bytes: &[u8]) -> Result<Self, IdxError> {
        check_magic(bytes, IDX_LABELS_MAGIC)?;
        let count = be_u32(bytes, 4)? as usize;
        check_payload(bytes, 8, count)?;
        Ok(Self {
            labels: bytes[8..].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.labels.len());
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }
}

/// Images scaled by 1/255 and flattened row-major, paired with labels.
pub fn dataset_from_idx(images: &IdxImages, labels: &IdxLabels) -> Result<Dataset> {
    if images.count != labels.labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.count,
            labels: labels.labels.len(),
        }
        .into());
    }
    if images.count == 0 {
        return Err(Error::InvalidArgument("IDX file holds no images".into()));
    }
    let features = images
        .pixels
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    Dataset::new(
        Tensor::matrix(images.count, images.rows * images.cols, features)?,
        Some(labels.labels.iter().map(|&l| u32::from(l)).collect()),
    )
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lab = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    dataset_from_idx(&IdxImages::parse(&img)?, &IdxLabels::parse(&lab)?)
}

/// Adds `sigma · N(0, 1)` to every feature. Values are not clipped.
pub fn add_noise(d: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be >= 0, got {sigma}"
        )));
    }
    let mut out = d.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = Rng::new(seed);
    for v in out.features.data_mut() {
        *v += sigma * rng.standard_normal();
    }
    Ok(out)
}

/// Seeded shuffle, then consecutive parts with boundaries at
/// `round(n · cumulative fraction)`.
pub fn split(d: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|&f| f.is_nan() || f <= 0.0) {
        return Err(Error::InvalidArgument("fractions must be positive".into()));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "fractions sum to {sum}, not 1"
        )));
    }
    let n = d.len();
    let order = Rng::new(seed).permutation(n);
    let mut bounds = vec![0usize];
    let mut acc = 0.0;
    for (i, f) in fractions.iter().enumerate() {
        acc += f;
        let b = if i + 1 == fractions.len() {
            n
        } else {
            ((acc * n as f64).round() as usize).min(n)
        };
        bounds.push(b);
    }
    bounds
        .windows(2)
        .map(|w| {
            if w[1] <= w[0] {
                return Err(Error::InvalidArgument(format!(
                    "split of {n} samples by {fractions:?} leaves an empty part"
                )));
            }
            d.subset(&order[w[0]..w[1]])
        })
        .collect()
}
