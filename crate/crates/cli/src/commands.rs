use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fastgate::dynamics::{
    fit_bound, fit_bound_window, integrate_flow, read_trajectory_csv, run_discrete, write_trajectory_csv,
    BoundFitRecord, DynamicsError, FlowConfig, Method,
};
use fastgate::nn::{Checkpoint, NnError};
use fastgate::train::{fmt17, run_in_dir, timescale_stats, TrainConfig, TrainError};
use fastgate::{GateKind, GateTag, ToyProblem64, Trajectory64};
use serde::{Deserialize, Serialize};

use crate::manifest::{manifest_path, RunManifest};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatesConfig {
    pub gates: Vec<GateKind>,
    pub zmin: f64,
    pub zmax: f64,
    pub step: f64,
    pub out: Option<PathBuf>,
}

impl Default for GatesConfig {
    fn default() -> Self {
        GatesConfig {
            gates: vec![GateKind::Sigmoid, GateKind::NormalizedSoftsign, GateKind::Fast, GateKind::IteratedFast],
            zmin: -6.0,
            zmax: 6.0,
            step: 0.01,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRunConfig {
    pub gate: GateKind,
    pub refine: bool,
    pub method: Method,
    pub horizon: u32,
    pub lambda_star: f64,
    /// Learning rate of a discrete method; flow takes none.
    pub lr: Option<f64>,
    pub steps: Option<usize>,
    pub tau_end: Option<f64>,
    pub rel_tol: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for ToyRunConfig {
    fn default() -> Self {
        ToyRunConfig {
            gate: GateKind::Sigmoid,
            refine: false,
            method: Method::Flow,
            horizon: 10,
            lambda_star: 1.0,
            lr: None,
            steps: None,
            tau_end: None,
            rel_tol: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyFitConfig {
    pub input: Option<PathBuf>,
    pub gate: GateKind,
    pub refine: bool,
    pub method: Method,
    pub tau_lo: Option<f64>,
    pub tau_hi: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for ToyFitConfig {
    fn default() -> Self {
        ToyFitConfig {
            input: None,
            gate: GateKind::Sigmoid,
            refine: false,
            method: Method::Flow,
            tau_lo: None,
            tau_hi: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub train: TrainConfig,
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimescalesConfig {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
}

fn tag(gate: GateKind, refine: bool) -> GateTag {
    if refine {
        GateTag::Refine(gate)
    } else {
        GateTag::Gate(gate)
    }
}

fn required(out: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    out.clone().ok_or_else(|| CliError::Usage(format!("missing required `{flag}`")))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Grid `zmin, zmin + step, ...` up to `zmax` inclusive.
pub fn grid(zmin: f64, zmax: f64, step: f64) -> Vec<f64> {
    let n = ((zmax - zmin) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|k| zmin + step * k as f64).collect()
}

/// `g_phi(phi(z))`. The gates are point symmetric, so the factor is read
/// at whichever of `f` and `1 - f` is smaller.
fn gradient_factor(kind: GateKind, f: f64, q: f64) -> f64 {
    let m = f.min(q);
    if m > 0.0 {
        kind.output_gradient_factor_unchecked(m)
    } else {
        0.0
    }
}

impl GatesConfig {
    pub fn validate(&self) -> Result<PathBuf, CliError> {
        let out = required(&self.out, "--out")?;
        if self.gates.is_empty() {
            return Err(CliError::Usage("no gate given".into()));
        }
        if !(self.zmin.is_finite() && self.zmax.is_finite() && self.zmin <= self.zmax) {
            return Err(CliError::Usage(format!("need finite zmin <= zmax, got {} and {}", self.zmin, self.zmax)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(CliError::Usage(format!("step must be > 0, got {}", self.step)));
        }
        Ok(out)
    }
}

pub fn gates(cfg: &GatesConfig) -> Result<(), CliError> {
    let out = cfg.validate()?;
    RunManifest::new("gates", cfg, vec![out.clone()], None)?.write(&manifest_path(&out))?;

    let multi = cfg.gates.len() > 1;
    let mut w = create(&out)?;
    let io = |e| CliError::io(&out, e);
    let header = "z,f,df_dz,one_minus_f,g_phi";
    if multi {
        writeln!(w, "gate,{header}").map_err(io)?;
    } else {
        writeln!(w, "{header}").map_err(io)?;
    }
    let zs = grid(cfg.zmin, cfg.zmax, cfg.step);
    for &kind in &cfg.gates {
        for &z in &zs {
            let (f, q, df) = kind.value_complement_derivative(z);
            let g = gradient_factor(kind, f, q);
            let row = [z, f, df, q, g].map(fmt17).join(",");
            if multi {
                writeln!(w, "{kind},{row}").map_err(io)?;
            } else {
                writeln!(w, "{row}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;
    println!("wrote {} rows to {}", zs.len() * cfg.gates.len(), out.display());
    Ok(())
}

impl ToyRunConfig {
    /// Checks the method/argument combination and fills the defaults that
    /// depend on the method.
    pub fn finalize(mut self) -> Result<Self, CliError> {
        required(&self.out, "--out")?;
        if self.method == Method::Flow {
            if self.lr.is_some() {
                return Err(CliError::Usage("method `flow` takes no --lr".into()));
            }
            if self.steps.is_some() {
                return Err(CliError::Usage("method `flow` takes --tau-end, not --steps".into()));
            }
            self.tau_end.get_or_insert(1e6);
            self.rel_tol.get_or_insert(FlowConfig::default().rel_tol);
        } else {
            if self.lr.is_none() {
                return Err(CliError::Usage(format!("method `{}` requires --lr", self.method.name())));
            }
            if self.tau_end.is_some() || self.rel_tol.is_some() {
                return Err(CliError::Usage(format!("method `{}` takes --steps, not --tau-end", self.method.name())));
            }
            self.steps.get_or_insert(10_000);
        }
        if self.horizon == 0 {
            return Err(CliError::Usage("horizon must be >= 1".into()));
        }
        Ok(self)
    }
}

pub fn toy_run(cfg: &ToyRunConfig) -> Result<(), CliError> {
    let cfg = cfg.clone().finalize()?;
    let out = required(&cfg.out, "--out")?;
    RunManifest::new("toy run", &cfg, vec![out.clone()], None)?.write(&manifest_path(&out))?;

    let mut problem = ToyProblem64::new(tag(cfg.gate, cfg.refine), cfg.horizon);
    problem.lambda_star = cfg.lambda_star;
    let y0 = problem.default_start();
    let traj = match cfg.method {
        Method::Flow => {
            let flow = FlowConfig { rel_tol: cfg.rel_tol.unwrap_or(1e-8), ..FlowConfig::default() };
            integrate_flow(&problem, &y0, cfg.tau_end.unwrap_or(1e6), &flow)
        }
        m => run_discrete(&problem, &y0, m, cfg.lr.unwrap_or_default(), cfg.steps.unwrap_or_default()),
    }
    .map_err(dynamics_error)?;

    let mut w = create(&out)?;
    write_trajectory_csv(&traj, &mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&out, e))?;
    println!("wrote {} points to {}", traj.len(), out.display());
    if traj.diverged {
        return Err(CliError::Runtime(format!("{} diverged (|z| > 1e6); trajectory truncated", cfg.method.name())));
    }
    Ok(())
}

/// Bound-fit result as written by `toy fit-bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    #[serde(flatten)]
    pub fit: BoundFitRecord,
    pub points: usize,
    pub tau_lo: Option<f64>,
    pub tau_hi: Option<f64>,
}

pub fn toy_fit(cfg: &ToyFitConfig) -> Result<(), CliError> {
    let input = required(&cfg.input, "--input")?;
    let out = required(&cfg.out, "--out")?;
    RunManifest::new("toy fit-bound", cfg, vec![out.clone()], None)?.write(&manifest_path(&out))?;

    let gate = tag(cfg.gate, cfg.refine);
    let file = File::open(&input).map_err(|e| CliError::io(&input, e))?;
    let traj: Trajectory64 = read_trajectory_csv(BufReader::new(file), cfg.method, gate).map_err(|e| match e {
        DynamicsError::Io(err) => CliError::io(&input, err),
        other => CliError::Io(format!("{}: {other}", input.display())),
    })?;
    let fit = match (cfg.tau_lo, cfg.tau_hi) {
        (None, None) => fit_bound(&traj, gate),
        (lo, hi) => fit_bound_window(&traj, gate, lo.unwrap_or(0.0), hi.unwrap_or(f64::INFINITY)),
    }
    .map_err(dynamics_error)?;
    let result = FitOutput { fit: fit.record(), points: fit.points, tau_lo: cfg.tau_lo, tau_hi: cfg.tau_hi };
    let text = serde_json::to_string_pretty(&result).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
    std::fs::write(&out, text).map_err(|e| CliError::io(&out, e))?;
    println!("slope {:.6} over {} points (C = {:e}); wrote {}", result.fit.slope, result.points, result.fit.c, out.display());
    Ok(())
}

impl TrainRun {
    pub fn manifest_path(&self) -> PathBuf {
        self.run_dir.join("manifest.json")
    }

    pub fn manifest(&self) -> Result<RunManifest, CliError> {
        let artifacts = ["config.json", "metrics.csv", "checkpoint.json"].map(|f| self.run_dir.join(f)).to_vec();
        RunManifest::new("train", self, artifacts, Some(self.train.seed))
    }
}

pub fn train(run: &TrainRun) -> Result<(), CliError> {
    run.train.validate().map_err(train_error)?;
    let dir = &run.run_dir;
    run.manifest()?.write(&run.manifest_path())?;

    let summary = run_in_dir::<f64>(&run.train, dir).map_err(train_error)?;
    if let Some(last) = summary.records.last() {
        let acc = last.accuracy.map(|a| format!(", accuracy {a:.4}")).unwrap_or_default();
        println!("iteration {}: loss {:.6}{acc}", last.iteration, last.loss);
    }
    println!("wrote {}", dir.display());
    match summary.aborted {
        Some(e) => Err(CliError::Runtime(e.to_string())),
        None => Ok(()),
    }
}

pub fn timescales(cfg: &TimescalesConfig) -> Result<(), CliError> {
    RunManifest::new("timescales", cfg, vec![cfg.out.clone()], None)?.write(&manifest_path(&cfg.out))?;
    let ckpt = Checkpoint::<f64>::load(&cfg.checkpoint).map_err(|e| match e {
        NnError::Io(err) => CliError::io(&cfg.checkpoint, err),
        other => CliError::Io(format!("{}: {other}", cfg.checkpoint.display())),
    })?;
    let stats = timescale_stats(&ckpt.params);
    let mut w = create(&cfg.out)?;
    let io = |e| CliError::io(&cfg.out, e);
    writeln!(w, "unit,timescale").map_err(io)?;
    for (i, t) in stats.per_unit.iter().enumerate() {
        writeln!(w, "{i},{}", fmt17(*t)).map_err(io)?;
    }
    writeln!(w, "mean,{}", fmt17(stats.mean)).map_err(io)?;
    writeln!(w, "std,{}", fmt17(stats.std)).map_err(io)?;
    w.flush().map_err(io)?;
    println!(
        "{} units: mean {:.6}, std {:.6}, {} infinite; wrote {}",
        stats.per_unit.len(),
        stats.mean,
        stats.std,
        stats.infinite,
        cfg.out.display()
    );
    Ok(())
}

/// Re-executes the command recorded in a manifest.
pub fn replay(manifest: &RunManifest) -> Result<(), CliError> {
    fn load<T: serde::de::DeserializeOwned>(m: &RunManifest) -> Result<T, CliError> {
        serde_json::from_value(m.config.clone()).map_err(|e| CliError::Usage(format!("manifest config: {e}")))
    }
    match manifest.command.as_str() {
        "gates" => gates(&load(manifest)?),
        "toy run" => toy_run(&load(manifest)?),
        "toy fit-bound" => toy_fit(&load(manifest)?),
        "train" => train(&load(manifest)?),
        "timescales" => timescales(&load(manifest)?),
        other => Err(CliError::Usage(format!("manifest names unknown command `{other}`"))),
    }
}

fn dynamics_error(e: DynamicsError) -> CliError {
    match e {
        DynamicsError::InvalidProblem(_) | DynamicsError::InvalidArgument(_) | DynamicsError::NoBound(_) => {
            CliError::Usage(e.to_string())
        }
        DynamicsError::Io(err) => CliError::Io(err.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::InvalidConfig(_) | TrainError::SpecMismatch(_) => CliError::Usage(e.to_string()),
        TrainError::Nn(NnError::InvalidSpec(_) | NnError::UnknownCell(_)) => CliError::Usage(e.to_string()),
        TrainError::MissingData { .. } | TrainError::Io { .. } | TrainError::Task(_) => CliError::Io(e.to_string()),
        TrainError::Nn(NnError::Io(_) | NnError::Checkpoint { .. }) => CliError::Io(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_includes_both_ends() {
        assert_eq!(grid(0.0, 0.0, 1.0), vec![0.0]);
        let g = grid(-6.0, 6.0, 0.01);
        assert_eq!(g.len(), 1201);
        assert!((g[1200] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_factor_matches_derivative() {
        for kind in GatesConfig::default().gates {
            for z in [-2.0, -0.4, 0.0, 0.7, 2.5] {
                let (f, q, df) = kind.value_complement_derivative(z);
                let g = gradient_factor(kind, f, q);
                assert!((g - df).abs() <= 1e-9 * df.max(1e-300), "{kind} z={z}: {g} vs {df}");
            }
        }
    }

    #[test]
    fn flow_rejects_learning_rate() {
        let cfg = ToyRunConfig { lr: Some(1.0), out: Some("x.csv".into()), ..ToyRunConfig::default() };
        assert!(matches!(cfg.finalize(), Err(CliError::Usage(_))));
        let cfg = ToyRunConfig { method: Method::Adam, out: Some("x.csv".into()), ..ToyRunConfig::default() };
        assert!(matches!(cfg.finalize(), Err(CliError::Usage(_))));
    }
}
