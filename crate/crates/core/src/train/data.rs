use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::config::TaskConfig;
use super::TrainError;
use crate::nn::{loss_cross_entropy, loss_mse, Tensor};
use crate::scalar::Scalar;
use crate::tasks::{
    bit_reversal_permutation, gen_adding, gen_copy, load_idx, MnistDataset, SeededRng, COPY_PAYLOAD,
};

/// Supervision for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Target<S> {
    /// Regression on the final output.
    Regression(Tensor<S>),
    /// Class ids `[k][b]` for the last `classes.len()` outputs.
    Classes(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    pub inputs: Vec<Tensor<S>>,
    pub target: Target<S>,
}

/// Loss, accuracy and output gradients of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated<S> {
    pub loss: S,
    pub accuracy: Option<f64>,
    pub output_grads: Vec<Tensor<S>>,
}

impl<S: Scalar> Batch<S> {
    /// Scores readout `outputs` against the target. For class targets the
    /// loss covers the trailing outputs and earlier steps get zero gradient.
    pub fn evaluate(&self, outputs: &[Tensor<S>]) -> Result<Evaluated<S>, TrainError> {
        match &self.target {
            Target::Regression(y) => {
                let last = outputs.last().ok_or(crate::nn::NnError::EmptySequence)?;
                let (loss, g) = loss_mse(last, y)?;
                let mut output_grads: Vec<Tensor<S>> = outputs[..outputs.len() - 1]
                    .iter()
                    .map(|o| Tensor::zeros(o.rows(), o.cols()))
                    .collect();
                output_grads.push(g);
                Ok(Evaluated {
                    loss,
                    accuracy: None,
                    output_grads,
                })
            }
            Target::Classes(steps) => {
                let k = steps.len();
                if outputs.len() < k {
                    return Err(TrainError::InvalidConfig(format!(
                        "{} outputs for {k} target steps",
                        outputs.len()
                    )));
                }
                let split = outputs.len() - k;
                let ce = loss_cross_entropy(&outputs[split..], steps)?;
                let mut output_grads: Vec<Tensor<S>> = outputs[..split]
                    .iter()
                    .map(|o| Tensor::zeros(o.rows(), o.cols()))
                    .collect();
                output_grads.extend(ce.grads);
                Ok(Evaluated {
                    loss: ce.loss,
                    accuracy: Some(ce.accuracy),
                    output_grads,
                })
            }
        }
    }
}

/// Stream domain for the per-epoch MNIST shuffles, kept apart from the
/// per-iteration streams.
const EPOCH_DOMAIN: u64 = 1 << 40;

/// Source of training and evaluation batches.
#[derive(Debug, Clone)]
pub enum TaskData {
    Adding { length: usize },
    Copy { length: usize },
    Mnist(Arc<MnistDataset>),
}

/// IDX file names expected in an MNIST data directory.
pub fn mnist_paths(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    let stem = if train { "train" } else { "t10k" };
    (
        dir.join(format!("{stem}-images-idx3-ubyte")),
        dir.join(format!("{stem}-labels-idx1-ubyte")),
    )
}

impl TaskData {
    /// Training data for `task`; for MNIST this reads the IDX training files.
    pub fn for_task(task: &TaskConfig) -> Result<Self, TrainError> {
        Self::load(task, true)
    }

    /// Held-out data for `task`; for MNIST this reads the IDX test files.
    pub fn for_evaluation(task: &TaskConfig) -> Result<Self, TrainError> {
        Self::load(task, false)
    }

    fn load(task: &TaskConfig, train: bool) -> Result<Self, TrainError> {
        Ok(match task {
            TaskConfig::Adding { length } => TaskData::Adding { length: *length },
            TaskConfig::Copy { length } => TaskData::Copy { length: *length },
            TaskConfig::SeqMnist {
                permuted,
                subsample,
                data_dir,
            } => {
                let (img, lab) = mnist_paths(data_dir, train);
                if !img.exists() || !lab.exists() {
                    return Err(TrainError::MissingData {
                        images: img,
                        labels: lab,
                    });
                }
                let mut ds = load_idx(&img, &lab)?;
                if let Some(n) = subsample {
                    ds = ds.subsample(*n);
                }
                if *permuted {
                    let perm = bit_reversal_permutation(ds.pixels());
                    ds = ds.with_permutation(Some(perm));
                }
                TaskData::Mnist(Arc::new(ds))
            }
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TaskData::Adding { .. } => 2,
            TaskData::Copy { .. } => crate::tasks::COPY_ALPHABET,
            TaskData::Mnist(_) => 1,
        }
    }

    /// Number of training samples per epoch, if the task has finite data.
    pub fn epoch_len(&self) -> Option<usize> {
        match self {
            TaskData::Mnist(ds) => Some(ds.len()),
            _ => None,
        }
    }

    /// Training batch for 0-based iteration `iteration`. Synthetic tasks
    /// draw from stream `iteration + 1` of `seed`; MNIST walks through
    /// per-epoch shuffles of the dataset.
    pub fn train_batch<S: Scalar>(
        &self,
        seed: u64,
        iteration: u64,
        batch: usize,
    ) -> Result<Batch<S>, TrainError> {
        match self {
            TaskData::Mnist(ds) => {
                let n = ds.len();
                if n == 0 {
                    return Err(TrainError::InvalidConfig("MNIST dataset is empty".into()));
                }
                let start = iteration as usize * batch;
                let mut indices = Vec::with_capacity(batch);
                let mut epoch = usize::MAX;
                let mut order = Vec::new();
                for pos in start..start + batch {
                    if pos / n != epoch {
                        epoch = pos / n;
                        order = epoch_order(seed, epoch as u64, n);
                    }
                    indices.push(order[pos % n]);
                }
                Ok(mnist_batch(ds, &indices))
            }
            _ => self.synthetic_batch(&mut SeededRng::stream(seed, iteration + 1), batch),
        }
    }

    /// Evaluation batch `k`. Synthetic tasks draw from stream `k` of
    /// `eval_seed`; MNIST walks the dataset in order.
    pub fn eval_batch<S: Scalar>(
        &self,
        eval_seed: u64,
        k: u64,
        batch: usize,
    ) -> Result<Option<Batch<S>>, TrainError> {
        match self {
            TaskData::Mnist(ds) => {
                let start = k as usize * batch;
                if start >= ds.len() {
                    return Ok(None);
                }
                let indices: Vec<usize> = (start..(start + batch).min(ds.len())).collect();
                Ok(Some(mnist_batch(ds, &indices)))
            }
            _ => self
                .synthetic_batch(&mut SeededRng::stream(eval_seed, k), batch)
                .map(Some),
        }
    }

    fn synthetic_batch<S: Scalar>(
        &self,
        rng: &mut SeededRng,
        batch: usize,
    ) -> Result<Batch<S>, TrainError> {
        match *self {
            TaskData::Adding { length } => {
                let b = gen_adding(length, batch, rng)?;
                Ok(Batch {
                    inputs: b.inputs,
                    target: Target::Regression(b.targets),
                })
            }
            TaskData::Copy { length } => {
                let b = gen_copy(length, batch, rng)?;
                let steps = b.step_targets();
                debug_assert_eq!(steps.len(), COPY_PAYLOAD);
                Ok(Batch {
                    inputs: b.inputs,
                    target: Target::Classes(steps),
                })
            }
            TaskData::Mnist(_) => unreachable!("MNIST batches come from the dataset"),
        }
    }
}

fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::stream(seed, EPOCH_DOMAIN + epoch).shuffle(&mut order);
    order
}

fn mnist_batch<S: Scalar>(ds: &MnistDataset, indices: &[usize]) -> Batch<S> {
    let (inputs, labels) = ds.sequence_batch(indices);
    Batch {
        inputs,
        target: Target::Classes(vec![labels]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_batches_are_reproducible_and_distinct() {
        let data = TaskData::Adding { length: 10 };
        let a: Batch<f64> = data.train_batch(3, 5, 4).unwrap();
        let b: Batch<f64> = data.train_batch(3, 5, 4).unwrap();
        let c: Batch<f64> = data.train_batch(3, 6, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let e: Batch<f64> = data.eval_batch(3, 6, 4).unwrap().unwrap();
        assert_eq!(e, a);
    }

    #[test]
    fn copy_loss_covers_last_ten_steps() {
        let data = TaskData::Copy { length: 5 };
        let b: Batch<f64> = data.train_batch(0, 0, 3).unwrap();
        let outs = vec![Tensor::zeros(3, 10); 25];
        let ev = b.evaluate(&outs).unwrap();
        assert!((ev.loss - 10f64.ln()).abs() < 1e-12);
        assert_eq!(ev.output_grads.len(), 25);
        assert!(ev.output_grads[..15]
            .iter()
            .all(|g| g.data().iter().all(|&v| v == 0.0)));
        assert!(ev.output_grads[15..]
            .iter()
            .all(|g| g.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn mnist_epochs_cover_every_sample() {
        let n = 7;
        let ds = MnistDataset {
            rows: 1,
            cols: 2,
            images: (0..2 * n).map(|v| v as f64).collect(),
            labels: (0..n as u8).collect(),
            permutation: None,
        };
        let data = TaskData::Mnist(Arc::new(ds));
        let mut seen = Vec::new();
        for it in 0..7 {
            let b: Batch<f64> = data.train_batch(1, it, 2).unwrap();
            let Target::Classes(c) = b.target else {
                panic!()
            };
            seen.extend(c[0].iter().copied());
        }
        // Two epochs of seven samples each.
        let mut first: Vec<usize> = seen[..7].to_vec();
        first.sort_unstable();
        assert_eq!(first, (0..7).collect::<Vec<_>>());
        let mut second: Vec<usize> = seen[7..].to_vec();
        second.sort_unstable();
        assert_eq!(second, (0..7).collect::<Vec<_>>());
    }
}
