use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::optim::OptimizerConfig;
use super::TrainError;
use crate::gates::GateKind;
use crate::nn::{CellKind, CellSpec, InitScheme, ReadoutMode, ReadoutSpec};
use crate::tasks::{COPY_ALPHABET, COPY_PAYLOAD};

/// Which long-memory task a run trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum TaskConfig {
    Adding {
        length: usize,
    },
    Copy {
        length: usize,
    },
    /// Pixel-by-pixel MNIST read from IDX files in `data_dir`.
    SeqMnist {
        permuted: bool,
        #[serde(default)]
        subsample: Option<usize>,
        data_dir: PathBuf,
    },
}

impl TaskConfig {
    pub fn input_dim(&self) -> usize {
        match self {
            TaskConfig::Adding { .. } => 2,
            TaskConfig::Copy { .. } => COPY_ALPHABET,
            TaskConfig::SeqMnist { .. } => 1,
        }
    }

    pub fn readout(&self) -> ReadoutSpec {
        match self {
            TaskConfig::Adding { .. } => ReadoutSpec {
                output_dim: 1,
                mode: ReadoutMode::Final,
            },
            TaskConfig::Copy { .. } => ReadoutSpec {
                output_dim: COPY_ALPHABET,
                mode: ReadoutMode::EveryStep,
            },
            TaskConfig::SeqMnist { .. } => ReadoutSpec {
                output_dim: 10,
                mode: ReadoutMode::Final,
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Adding { .. } => "adding",
            TaskConfig::Copy { .. } => "copy",
            TaskConfig::SeqMnist { .. } => "mnist",
        }
    }

    /// Whether the task reports classification accuracy.
    pub fn has_accuracy(&self) -> bool {
        !matches!(self, TaskConfig::Adding { .. })
    }

    pub fn sequence_len(&self) -> usize {
        match *self {
            TaskConfig::Adding { length } => length,
            TaskConfig::Copy { length } => length + 2 * COPY_PAYLOAD,
            TaskConfig::SeqMnist { .. } => 784,
        }
    }
}

fn default_clip() -> f64 {
    1.0
}
fn default_batch() -> usize {
    64
}
fn default_log_every() -> u64 {
    10
}
fn default_init() -> InitScheme {
    InitScheme::Default
}
fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::rmsprop(1e-3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskConfig,
    pub cell: CellSpec,
    #[serde(default = "default_init")]
    pub init: InitScheme,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_clip")]
    pub clip_threshold: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Record elapsed time in `wall_ms`. Off by default so that metrics
    /// files are reproducible byte for byte.
    #[serde(default)]
    pub wall_clock: bool,
}

impl TrainConfig {
    /// RMSprop at `1e-3` (`alpha = 0.99`, `eps = 1e-8`), clip threshold 1,
    /// batch 64, default forget bias.
    pub fn new(task: TaskConfig, kind: CellKind, hidden_dim: usize, gate: GateKind) -> Self {
        let cell = CellSpec::new(kind, task.input_dim(), hidden_dim, gate);
        TrainConfig {
            task,
            cell,
            init: default_init(),
            optimizer: default_optimizer(),
            clip_threshold: default_clip(),
            batch: default_batch(),
            iterations: 0,
            seed: 0,
            log_every: default_log_every(),
            wall_clock: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.cell.validate()?;
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.cell.input_dim != self.task.input_dim() {
            return bad(format!(
                "cell input_dim {} does not match the {} task ({})",
                self.cell.input_dim,
                self.task.name(),
                self.task.input_dim()
            ));
        }
        if !(self.clip_threshold > 0.0) {
            return bad(format!(
                "clip threshold must be > 0, got {}",
                self.clip_threshold
            ));
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1".into());
        }
        if !(self.optimizer.lr() > 0.0 && self.optimizer.lr().is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.optimizer.lr()
            ));
        }
        match self.task {
            TaskConfig::Adding { length } if length < 4 => {
                bad(format!("adding length must be >= 4, got {length}"))
            }
            TaskConfig::Copy { length } if length == 0 => bad("copy length must be >= 1".into()),
            TaskConfig::SeqMnist {
                subsample: Some(0), ..
            } => bad("subsample must be >= 1".into()),
            _ => Ok(()),
        }
    }
}
