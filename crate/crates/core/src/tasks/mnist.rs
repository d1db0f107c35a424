use std::path::Path;

use super::TaskError;
use crate::nn::Tensor;
use crate::scalar::Scalar;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Images scaled to `[0, 1]` with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistDataset {
    pub rows: usize,
    pub cols: usize,
    /// `count x (rows * cols)` row-major pixels.
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    /// Pixel order: step `t` of a sequence reads pixel `permutation[t]`.
    pub permutation: Option<Vec<usize>>,
}

fn read(path: &Path) -> Result<Vec<u8>, TaskError> {
    std::fs::read(path).map_err(|source| TaskError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>, TaskError> {
    let p = path.display().to_string();
    let need = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(TaskError::Truncated {
            path: p,
            expected: need,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(TaskError::BadMagic {
            path: p,
            expected: magic,
            found,
        });
    }
    if bytes.len() < need {
        return Err(TaskError::Truncated {
            path: p,
            expected: need,
            found: bytes.len(),
        });
    }
    Ok((0..dims)
        .map(|k| be_u32(bytes, 4 + 4 * k) as usize)
        .collect())
}

/// Parses an IDX image file (magic 2051, three dimensions) and label file
/// (magic 2049, one dimension).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<MnistDataset, TaskError> {
    let img = read(images_path)?;
    let dims = header(&img, images_path, IMAGE_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    if rows == 0 || cols == 0 {
        return Err(TaskError::BadDims {
            path: images_path.display().to_string(),
            msg: format!("{rows}x{cols} images"),
        });
    }
    let expected = 16 + count * rows * cols;
    if img.len() < expected {
        return Err(TaskError::Truncated {
            path: images_path.display().to_string(),
            expected,
            found: img.len(),
        });
    }

    let lab = read(labels_path)?;
    let n_labels = header(&lab, labels_path, LABEL_MAGIC, 1)?[0];
    if lab.len() < 8 + n_labels {
        return Err(TaskError::Truncated {
            path: labels_path.display().to_string(),
            expected: 8 + n_labels,
            found: lab.len(),
        });
    }
    if n_labels != count {
        return Err(TaskError::CountMismatch {
            images: count,
            labels: n_labels,
        });
    }

    let images = img[16..expected]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let labels = lab[8..8 + n_labels].to_vec();
    Ok(MnistDataset {
        rows,
        cols,
        images,
        labels,
        permutation: None,
    })
}

impl MnistDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// Keeps the first `n` samples.
    pub fn subsample(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.images.truncate(n * self.pixels());
        self.labels.truncate(n);
        self
    }

    pub fn with_permutation(mut self, permutation: Option<Vec<usize>>) -> Self {
        self.permutation = permutation;
        self
    }

    /// Pixel-by-pixel sequence for the given samples: one `batch x 1`
    /// tensor per pixel, plus the labels.
    pub fn sequence_batch<S: Scalar>(&self, indices: &[usize]) -> (Vec<Tensor<S>>, Vec<usize>) {
        let n = self.pixels();
        let order: Vec<usize> = match &self.permutation {
            Some(p) => p.clone(),
            None => (0..n).collect(),
        };
        let inputs = order
            .iter()
            .map(|&px| {
                Tensor::from_fn(indices.len(), 1, |b, _| {
                    S::lit(self.images[indices[b] * n + px])
                })
            })
            .collect();
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        (inputs, labels)
    }
}

/// Bit-reversal order of `0..n`: with `B = ceil(log2 n)`, list `0..2^B` by
/// their `B`-bit reversal and keep the entries below `n`.
pub fn bit_reversal_permutation(n: usize) -> Vec<usize> {
    assert!(n >= 1);
    let bits = usize::BITS - (n - 1).leading_zeros();
    (0..1usize << bits)
        .map(|i| {
            if bits == 0 {
                0
            } else {
                i.reverse_bits() >> (usize::BITS - bits)
            }
        })
        .filter(|&j| j < n)
        .collect()
}
