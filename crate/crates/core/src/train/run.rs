use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::data::{Batch, TaskData};
use super::optim::Optimizer;
use super::{clip_global_norm, timescale_stats, MetricsRecord, TrainConfig, TrainError};
use crate::nn::{
    backward_sequence, forward_sequence, init_params, Checkpoint, GradientSet, ModelParams,
    ReadoutSpec,
};
use crate::scalar::Scalar;
use crate::tasks::SeededRng;

/// Environment variable overriding the default run root `runs/`.
pub const RUNS_DIR_ENV: &str = "FASTGATE_RUNS_DIR";

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Loss and gradient statistics of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iteration: u64,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub grad_norm_preclip: f64,
}

/// Owns the parameters and optimizer state of one run.
#[derive(Debug)]
pub struct Trainer<S> {
    config: TrainConfig,
    data: TaskData,
    params: ModelParams<S>,
    optimizer: Optimizer<S>,
    iteration: u64,
    started: Instant,
}

fn check_compatible(
    params_readout: ReadoutSpec,
    input_dim: usize,
    data: &TaskData,
    expected: ReadoutSpec,
) -> Result<(), TrainError> {
    if input_dim != data.input_dim() {
        return Err(TrainError::SpecMismatch(format!(
            "model input_dim {input_dim} but the task feeds {}",
            data.input_dim()
        )));
    }
    if params_readout != expected {
        return Err(TrainError::SpecMismatch(format!(
            "model readout {params_readout:?} but the task needs {expected:?}"
        )));
    }
    Ok(())
}

impl<S: Scalar + Serialize + DeserializeOwned> Trainer<S> {
    /// Fresh run: parameters are drawn from stream 0 of the seed.
    pub fn new(config: TrainConfig, data: TaskData) -> Result<Self, TrainError> {
        config.validate()?;
        let readout = config.task.readout();
        check_compatible(readout, config.cell.input_dim, &data, readout)?;
        let params = init_params(
            config.cell,
            readout,
            &mut SeededRng::stream(config.seed, 0),
            config.init,
        )?;
        let optimizer = Optimizer::new(config.optimizer);
        Ok(Trainer {
            config,
            data,
            params,
            optimizer,
            iteration: 0,
            started: Instant::now(),
        })
    }

    /// Continues a run from `checkpoint`.
    pub fn resume(
        config: TrainConfig,
        data: TaskData,
        checkpoint: Checkpoint<S>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let p = &checkpoint.params;
        if p.spec != config.cell {
            return Err(TrainError::SpecMismatch(format!(
                "checkpoint cell {:?} but config has {:?}",
                p.spec, config.cell
            )));
        }
        check_compatible(p.readout, p.spec.input_dim, &data, config.task.readout())?;
        if checkpoint.seed != config.seed {
            return Err(TrainError::SpecMismatch(format!(
                "checkpoint seed {} but config seed {}",
                checkpoint.seed, config.seed
            )));
        }
        let optimizer = match checkpoint.optimizer {
            Some(o) if o.config == config.optimizer => o,
            Some(o) => {
                return Err(TrainError::SpecMismatch(format!(
                    "checkpoint optimizer {:?} but config has {:?}",
                    o.config, config.optimizer
                )))
            }
            None => Optimizer::new(config.optimizer),
        };
        Ok(Trainer {
            config,
            data,
            params: checkpoint.params,
            optimizer,
            iteration: checkpoint.iteration,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<S> {
        &self.params
    }

    /// Updates applied so far.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint<S> {
        Checkpoint {
            params: self.params.clone(),
            seed: self.config.seed,
            iteration: self.iteration,
            optimizer: Some(self.optimizer.clone()),
        }
    }

    fn batch(&self) -> Result<Batch<S>, TrainError> {
        self.data
            .train_batch(self.config.seed, self.iteration, self.config.batch)
    }

    /// Loss and clipped gradients on the current batch, without updating.
    pub fn measure(&self) -> Result<(StepReport, GradientSet<S>), TrainError> {
        let batch = self.batch()?;
        let (outputs, cache) = forward_sequence(&self.params, &batch.inputs, None)?;
        let ev = batch.evaluate(&outputs)?;
        if !ev.loss.is_finite() {
            return Err(TrainError::NonFiniteLoss);
        }
        let mut grads = backward_sequence(&self.params, &cache, &ev.output_grads)?;
        let norm = clip_global_norm(&mut grads, S::lit(self.config.clip_threshold))?;
        let report = StepReport {
            iteration: self.iteration,
            loss: ev.loss.to_f64_lossy(),
            accuracy: ev.accuracy,
            grad_norm_preclip: norm.to_f64_lossy(),
        };
        Ok((report, grads))
    }

    /// One training update. On error the parameters and optimizer state
    /// are left as they were.
    pub fn step(&mut self) -> Result<StepReport, TrainError> {
        let iteration = self.iteration;
        let abort = |e: TrainError| TrainError::Aborted {
            iteration,
            source: Box::new(e),
        };
        let (report, grads) = self.measure().map_err(abort)?;
        let gs: Vec<&[S]> = grads.tensors().iter().map(|t| t.data()).collect();
        let mut ps: Vec<&mut [S]> = self
            .params
            .tensors_mut()
            .iter_mut()
            .map(|t| t.data_mut())
            .collect();
        self.optimizer
            .step(&mut ps, &gs)
            .map_err(|e| abort(e.into()))?;
        self.iteration += 1;
        Ok(report)
    }

    fn record(&self, r: &StepReport) -> MetricsRecord {
        let ts = timescale_stats(&self.params);
        MetricsRecord {
            iteration: r.iteration,
            loss: r.loss,
            accuracy: r.accuracy,
            grad_norm_preclip: r.grad_norm_preclip,
            wall_ms: if self.config.wall_clock {
                self.started.elapsed().as_millis() as u64
            } else {
                0
            },
            timescale_mean: ts.mean,
            timescale_std: ts.std,
        }
    }

    /// Trains up to `config.iterations` updates. A record is emitted for
    /// every iteration divisible by `log_every` and for the final state;
    /// each record measures the parameters after `iteration` updates on
    /// batch `iteration`. Nothing is emitted when `iterations` is 0.
    pub fn run(
        &mut self,
        mut on_record: impl FnMut(&MetricsRecord) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        let total = self.config.iterations;
        if total == 0 {
            return Ok(());
        }
        while self.iteration < total {
            let logged = self.iteration % self.config.log_every == 0;
            let before = logged.then(|| timescale_stats(&self.params));
            let report = self.step()?;
            if let Some(ts) = before {
                let mut rec = self.record(&report);
                rec.timescale_mean = ts.mean;
                rec.timescale_std = ts.std;
                on_record(&rec)?;
            }
        }
        let iteration = self.iteration;
        let (report, _) = self.measure().map_err(|e| TrainError::Aborted {
            iteration,
            source: Box::new(e),
        })?;
        on_record(&self.record(&report))
    }
}

/// Aggregate metrics over evaluation batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub batches: usize,
}

/// Mean loss and accuracy of `checkpoint` over up to `n_batches` held-out
/// batches. Synthetic batches come from `eval_seed`.
pub fn evaluate<S: Scalar>(
    checkpoint: &Checkpoint<S>,
    data: &TaskData,
    n_batches: usize,
    batch: usize,
    eval_seed: u64,
) -> Result<EvalMetrics, TrainError> {
    let p = &checkpoint.params;
    let expected = match data {
        TaskData::Adding { length } => super::TaskConfig::Adding { length: *length }.readout(),
        TaskData::Copy { length } => super::TaskConfig::Copy { length: *length }.readout(),
        TaskData::Mnist(_) => ReadoutSpec {
            output_dim: 10,
            mode: crate::nn::ReadoutMode::Final,
        },
    };
    check_compatible(p.readout, p.spec.input_dim, data, expected)?;
    let (mut loss, mut acc, mut weight, mut batches) = (0.0, 0.0, 0usize, 0usize);
    let mut has_acc = false;
    for k in 0..n_batches as u64 {
        let Some(b) = data.eval_batch::<S>(eval_seed, k, batch)? else {
            break;
        };
        let rows = b.inputs[0].rows();
        let (outputs, _) = forward_sequence(p, &b.inputs, None)?;
        let ev = b.evaluate(&outputs)?;
        loss += ev.loss.to_f64_lossy() * rows as f64;
        if let Some(a) = ev.accuracy {
            has_acc = true;
            acc += a * rows as f64;
        }
        weight += rows;
        batches += 1;
    }
    if weight == 0 {
        return Err(TrainError::InvalidConfig("no evaluation batches".into()));
    }
    let w = weight as f64;
    Ok(EvalMetrics {
        loss: loss / w,
        accuracy: has_acc.then_some(acc / w),
        batches,
    })
}

/// Outcome of [`run_in_dir`].
#[derive(Debug)]
pub struct RunSummary {
    pub records: Vec<MetricsRecord>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Set when training stopped early; the checkpoint holds the last
    /// good state.
    pub aborted: Option<TrainError>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Trains `config` and writes `config.json`, `metrics.csv` and
/// `checkpoint.json` into `dir`. Metrics rows are flushed as they are
/// produced.
pub fn run_in_dir<S: Scalar + Serialize + DeserializeOwned>(
    config: &TrainConfig,
    dir: &Path,
) -> Result<RunSummary, TrainError> {
    config.validate()?;
    let data = TaskData::for_task(&config.task)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(config)? + "\n")
        .map_err(io_err(&cfg_path))?;

    let metrics = dir.join("metrics.csv");
    let mut out = BufWriter::new(File::create(&metrics).map_err(io_err(&metrics))?);
    writeln!(out, "{}", MetricsRecord::CSV_HEADER).map_err(io_err(&metrics))?;

    let mut trainer = Trainer::<S>::new(config.clone(), data)?;
    let mut records = Vec::new();
    let result = trainer.run(|r| {
        writeln!(out, "{}", r.to_csv_row())
            .and_then(|_| out.flush())
            .map_err(io_err(&metrics))?;
        records.push(r.clone());
        Ok(())
    });
    out.flush().map_err(io_err(&metrics))?;

    let checkpoint = dir.join("checkpoint.json");
    trainer.checkpoint().save(&checkpoint)?;
    let aborted = match result {
        Ok(()) => None,
        Err(e) if e.is_divergence() => Some(e),
        Err(e) => return Err(e),
    };
    Ok(RunSummary {
        records,
        checkpoint,
        metrics,
        aborted,
    })
}
