use serde::{Deserialize, Serialize};

use crate::gates::GateKind;
use crate::nn::ModelParams;
use crate::scalar::Scalar;

/// Per-unit memory time scales read off the forget-gate bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimescaleStats {
    /// `T_i = -1 / ln phi(b_{f,i})`; `+inf` where the gate rounds to 1.
    pub per_unit: Vec<f64>,
    /// Mean over the finite entries.
    pub mean: f64,
    /// Population standard deviation over the finite entries.
    pub std: f64,
    /// Number of units with an infinite time scale.
    pub infinite: usize,
}

/// Time scale of a unit whose forget gate has pre-activation `b`.
///
/// Above one half the gate is handled through its independently evaluated
/// complement `q = 1 - phi(b)` as `-1 / ln(1 - q)`, so long time scales
/// keep their precision.
pub fn unit_timescale(kind: GateKind, b: f64) -> f64 {
    let q = kind.one_minus(b);
    if q.value < 0.5 {
        if q.saturated {
            return f64::INFINITY;
        }
        -1.0 / (-q.value).ln_1p()
    } else {
        -1.0 / kind.value(b).ln()
    }
}

pub fn timescale_stats_from_bias(kind: GateKind, bias: &[f64]) -> TimescaleStats {
    let per_unit: Vec<f64> = bias.iter().map(|&b| unit_timescale(kind, b)).collect();
    let finite: Vec<f64> = per_unit.iter().copied().filter(|t| t.is_finite()).collect();
    let infinite = per_unit.len() - finite.len();
    let (mean, std) = if finite.is_empty() {
        (f64::INFINITY, 0.0)
    } else {
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let var = finite.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    TimescaleStats {
        per_unit,
        mean,
        std,
        infinite,
    }
}

/// Time scales of the forget gate of `params`, using its configured gate kind.
pub fn timescale_stats<S: Scalar>(params: &ModelParams<S>) -> TimescaleStats {
    let bias: Vec<f64> = params
        .forget_bias()
        .iter()
        .map(|b| b.to_f64_lossy())
        .collect();
    timescale_stats_from_bias(params.spec.forget_gate, &bias)
}
