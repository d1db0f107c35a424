//! Seeded generators for the adding and copy tasks and MNIST ingestion.

mod mnist;
mod rng;

pub use mnist::{bit_reversal_permutation, load_idx, MnistDataset};
pub use rng::{seeded_rng, SeededRng};

use thiserror::Error;

use crate::nn::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task shape: {0}")]
    InvalidShape(String),
    #[error("{path}: bad magic number {found} (expected {expected})")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated file, expected {expected} bytes, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: unexpected IDX dimensions: {msg}")]
    BadDims { path: String, msg: String },
    #[error("image file holds {images} images but label file holds {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Number of payload tokens in the copy task.
pub const COPY_PAYLOAD: usize = 10;
/// Alphabet size of the copy task (void, eight symbols, revoke).
pub const COPY_ALPHABET: usize = 10;
pub const COPY_REVOKE: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct AddingBatch<S> {
    /// `T` tensors of shape `batch x 2`: value channel, indicator channel.
    pub inputs: Vec<Tensor<S>>,
    /// `batch x 1` sums of the two marked values.
    pub targets: Tensor<S>,
    /// 0-based marker positions per sample.
    pub markers: Vec<(usize, usize)>,
}

/// Adding task batch. Markers are drawn 0-based from
/// `i1 in [0, T/2 - 1)` and `i2 in [T/2 - 1, T - 1)`, the 1-based
/// `[1, T/2)` and `[T/2, T)`.
pub fn gen_adding<S: Scalar>(
    t: usize,
    batch: usize,
    rng: &mut SeededRng,
) -> Result<AddingBatch<S>, TaskError> {
    if t < 4 || batch == 0 {
        return Err(TaskError::InvalidShape(format!(
            "adding task needs T >= 4 and batch >= 1, got T={t}, batch={batch}"
        )));
    }
    let half = t / 2;
    let mut inputs = vec![Tensor::zeros(batch, 2); t];
    let mut targets = Tensor::zeros(batch, 1);
    let mut markers = Vec::with_capacity(batch);
    for b in 0..batch {
        for x in inputs.iter_mut() {
            x.set(b, 0, S::lit(rng.uniform()));
        }
        let i1 = rng.below(half - 1);
        let i2 = half - 1 + rng.below(t - half);
        inputs[i1].set(b, 1, S::one());
        inputs[i2].set(b, 1, S::one());
        targets.set(b, 0, inputs[i1].get(b, 0) + inputs[i2].get(b, 0));
        markers.push((i1, i2));
    }
    Ok(AddingBatch {
        inputs,
        targets,
        markers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopyBatch<S> {
    /// `T + 20` one-hot tensors of shape `batch x 10`.
    pub inputs: Vec<Tensor<S>>,
    /// Payload token ids (1..=8), `targets[b][k]`.
    pub targets: Vec<Vec<usize>>,
}

impl<S: Scalar> CopyBatch<S> {
    /// Targets arranged per output step, `[k][b]`, for the last ten steps.
    pub fn step_targets(&self) -> Vec<Vec<usize>> {
        (0..COPY_PAYLOAD)
            .map(|k| self.targets.iter().map(|row| row[k]).collect())
            .collect()
    }

    /// Index of the first of the ten output steps.
    pub fn first_output_step(&self) -> usize {
        self.inputs.len() - COPY_PAYLOAD
    }
}

/// Copy task batch: ten payload tokens, `T` void tokens, the revoking token
/// at 0-based position `T + 10`, then nine void tokens.
pub fn gen_copy<S: Scalar>(
    t: usize,
    batch: usize,
    rng: &mut SeededRng,
) -> Result<CopyBatch<S>, TaskError> {
    if t == 0 || batch == 0 {
        return Err(TaskError::InvalidShape(format!(
            "copy task needs T >= 1 and batch >= 1, got T={t}, batch={batch}"
        )));
    }
    let len = t + 2 * COPY_PAYLOAD;
    let mut tokens = vec![vec![0usize; batch]; len];
    let mut targets = Vec::with_capacity(batch);
    for b in 0..batch {
        let payload: Vec<usize> = (0..COPY_PAYLOAD).map(|_| 1 + rng.below(8)).collect();
        for (k, &tok) in payload.iter().enumerate() {
            tokens[k][b] = tok;
        }
        tokens[t + COPY_PAYLOAD][b] = COPY_REVOKE;
        targets.push(payload);
    }
    let inputs = tokens
        .iter()
        .map(|step| {
            Tensor::from_fn(batch, COPY_ALPHABET, |b, c| {
                if step[b] == c {
                    S::one()
                } else {
                    S::zero()
                }
            })
        })
        .collect();
    Ok(CopyBatch { inputs, targets })
}
