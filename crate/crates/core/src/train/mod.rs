//! Optimizers, gradient clipping, the training loop, evaluation, time-scale
//! telemetry and run directories.

mod config;
mod data;
pub mod optim;
mod run;
mod timescale;

pub use config::{TaskConfig, TrainConfig};
pub use data::{mnist_paths, Batch, Evaluated, Target, TaskData};
pub use optim::{OptimError, Optimizer, OptimizerConfig};
pub use run::{
    evaluate, run_in_dir, runs_root, EvalMetrics, RunSummary, StepReport, Trainer, RUNS_DIR_ENV,
};
pub use timescale::{timescale_stats, timescale_stats_from_bias, unit_timescale, TimescaleStats};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{GradientSet, NnError};
use crate::scalar::Scalar;
use crate::tasks::TaskError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("training aborted at iteration {iteration}: {source}")]
    Aborted {
        iteration: u64,
        #[source]
        source: Box<TrainError>,
    },
    #[error("checkpoint does not match the task: {0}")]
    SpecMismatch(String),
    #[error("MNIST data not found: expected IDX files {} and {}", images.display(), labels.display())]
    MissingData { images: PathBuf, labels: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TrainError {
    /// True for divergence (non-finite loss, gradient or update), as
    /// opposed to configuration or I/O failures.
    pub fn is_divergence(&self) -> bool {
        match self {
            TrainError::NonFiniteGradient { .. } | TrainError::NonFiniteLoss => true,
            TrainError::Optim(OptimError::NonFinite { .. }) => true,
            TrainError::Aborted { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            TrainError::Io { .. } | TrainError::MissingData { .. } => true,
            TrainError::Nn(NnError::Io(_)) | TrainError::Task(TaskError::Io { .. }) => true,
            TrainError::Aborted { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `threshold` and
/// returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(
    grads: &mut GradientSet<S>,
    threshold: S,
) -> Result<S, TrainError> {
    if !(threshold > S::zero()) {
        return Err(TrainError::InvalidConfig(format!(
            "clip threshold must be > 0, got {threshold}"
        )));
    }
    for (name, t) in grads.names().iter().zip(grads.tensors()) {
        if !t.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                param: name.clone(),
            });
        }
    }
    let norm = grads.norm();
    if !norm.is_finite() {
        // Finite entries whose squares overflow.
        let big = grads
            .tensors()
            .iter()
            .map(|t| t.data().iter().fold(S::zero(), |m, v| m.max(v.abs())))
            .fold(S::zero(), S::max);
        let scaled: S = grads
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|&v| (v / big) * (v / big))
            .sum();
        let norm = big * scaled.sqrt();
        grads.scale(threshold / norm);
        return Ok(norm);
    }
    if norm > threshold {
        grads.scale(threshold / norm);
    }
    Ok(norm)
}

/// One row of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Number of updates applied before this measurement.
    pub iteration: u64,
    /// Training loss on batch `iteration`, before its update.
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub grad_norm_preclip: f64,
    pub wall_ms: u64,
    pub timescale_mean: f64,
    pub timescale_std: f64,
}

/// Round-trip decimal rendering: 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str =
        "iteration,loss,accuracy,grad_norm_preclip,wall_ms,timescale_mean,timescale_std";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            fmt17(self.loss),
            self.accuracy.map(fmt17).unwrap_or_default(),
            fmt17(self.grad_norm_preclip),
            self.wall_ms,
            fmt17(self.timescale_mean),
            fmt17(self.timescale_std)
        )
    }

    pub fn from_csv_row(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return None;
        }
        Some(MetricsRecord {
            iteration: f[0].parse().ok()?,
            loss: f[1].parse().ok()?,
            accuracy: if f[2].is_empty() {
                None
            } else {
                Some(f[2].parse().ok()?)
            },
            grad_norm_preclip: f[3].parse().ok()?,
            wall_ms: f[4].parse().ok()?,
            timescale_mean: f[5].parse().ok()?,
            timescale_std: f[6].parse().ok()?,
        })
    }
}
