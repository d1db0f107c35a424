//! Asymptotic upper bounds on `1 - f` and their fit to trajectories.

use serde::{Deserialize, Serialize};

use super::{DynamicsError, Trajectory};
use crate::gates::{ConvergenceRate, GateTag};
use crate::scalar::Scalar;

const MIN_TAIL: usize = 10;
const TAIL_F: f64 = 0.9;

/// Upper bound on `1 - f` as a function of `tau`, shifted by `translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCurve<S> {
    pub gate: GateTag,
    pub rate: ConvergenceRate,
    pub c: S,
    pub translation: S,
}

/// Solves `y (ln y)^2 = v` on `y < e^-2`, where the left side is strictly
/// increasing, by bisection in `ln y`.
fn solve_lambert_bound<S: Scalar>(v: S) -> Option<S> {
    let two = S::lit(2.0);
    let max_v = (-two).exp() * two * two;
    if !(v > S::zero()) || v >= max_v {
        return None;
    }
    // h(L) = L + 2 ln(-L) is increasing for L < -2, and h(L) = ln v at the root.
    let target = v.ln();
    let h = |l: S| l + two * (-l).ln();
    let mut lo = S::min_positive_value().ln();
    let mut hi = -two;
    if h(lo) > target {
        return Some(S::min_positive_value());
    }
    for _ in 0..400 {
        let mid = S::lit(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((S::lit(0.5) * (lo + hi)).exp())
}

impl<S: Scalar> BoundCurve<S> {
    /// Bound at `tau`; `None` where `tau <= translation` or the bound is
    /// undefined.
    pub fn eval(&self, tau: S) -> Option<S> {
        let u = self.c * (tau - self.translation);
        if !(u > S::zero()) {
            return None;
        }
        match self.rate {
            ConvergenceRate::TauInverse => Some(S::one() / u),
            ConvergenceRate::TauCubeRoot => Some(u.powf(-S::one() / S::lit(3.0))),
            ConvergenceRate::LambertSquared => solve_lambert_bound(S::one() / u),
        }
    }
}

/// Bound curve of the tabulated convergence rate for `gate`.
pub fn bound_curve<S: Scalar>(
    gate: GateTag,
    c: S,
    translation: S,
) -> Result<BoundCurve<S>, DynamicsError> {
    if !(c > S::zero()) {
        return Err(DynamicsError::InvalidArgument(
            "bound constant C must be positive".into(),
        ));
    }
    let order = gate
        .saturation_order()
        .ok_or(DynamicsError::NoBound(gate))?;
    Ok(BoundCurve {
        gate,
        rate: order.rate,
        c,
        translation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundFit<S> {
    pub curve: BoundCurve<S>,
    pub rms_log_residual: f64,
    /// Least-squares log-log slope of the fitted points.
    pub slope: f64,
    pub points: usize,
}

/// JSON form of a bound fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundFitRecord {
    pub gate: GateTag,
    #[serde(rename = "C")]
    pub c: f64,
    pub translation: f64,
    pub rms_log_residual: f64,
    pub slope: f64,
}

impl<S: Scalar> BoundFit<S> {
    pub fn record(&self) -> BoundFitRecord {
        BoundFitRecord {
            gate: self.curve.gate,
            c: self.curve.c.to_f64_lossy(),
            translation: self.curve.translation.to_f64_lossy(),
            rms_log_residual: self.rms_log_residual,
            slope: self.slope,
        }
    }
}

struct Tail {
    tau: Vec<f64>,
    log_q: Vec<f64>,
}

fn tail_points<S: Scalar>(traj: &Trajectory<S>, lo: f64, hi: f64) -> Tail {
    let mut tau = Vec::new();
    let mut log_q = Vec::new();
    for ((t, f), q) in traj
        .taus
        .iter()
        .zip(traj.effective())
        .zip(traj.effective_one_minus())
    {
        let (t, f, q) = (t.to_f64_lossy(), f.to_f64_lossy(), q.to_f64_lossy());
        if t > 0.0 && t >= lo && t <= hi && f > TAIL_F && q > 0.0 {
            tau.push(t);
            log_q.push(q.ln());
        }
    }
    Tail { tau, log_q }
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Fitting model in log space: `ln bound = model(ln C, tau - translation)`.
struct Model {
    rate: ConvergenceRate,
}

impl Model {
    /// Returns `(ln bound, d ln bound / d ln C)`.
    fn log_bound(&self, log_c: f64, d: f64) -> (f64, f64) {
        let log_u = log_c + d.ln();
        match self.rate {
            ConvergenceRate::TauInverse => (-log_u, -1.0),
            ConvergenceRate::TauCubeRoot => (-log_u / 3.0, -1.0 / 3.0),
            ConvergenceRate::LambertSquared => match solve_lambert_bound((-log_u).exp()) {
                Some(y) => {
                    let l = y.ln();
                    (l, -l / (l + 2.0))
                }
                // Undefined region: pinned at the maximum of the bound.
                None => (-2.0, 0.0),
            },
        }
    }

    fn sse(&self, tail: &Tail, log_c: f64, t0: f64) -> f64 {
        tail.tau
            .iter()
            .zip(&tail.log_q)
            .map(|(&t, &lq)| {
                let r = self.log_bound(log_c, t - t0).0 - lq;
                r * r
            })
            .sum()
    }

    /// Best `ln C` for a fixed translation.
    fn best_log_c(&self, tail: &Tail, t0: f64) -> f64 {
        let n = tail.tau.len() as f64;
        match self.rate {
            ConvergenceRate::TauInverse | ConvergenceRate::TauCubeRoot => {
                let p = if self.rate == ConvergenceRate::TauInverse {
                    1.0
                } else {
                    1.0 / 3.0
                };
                tail.tau
                    .iter()
                    .zip(&tail.log_q)
                    .map(|(&t, &lq)| -lq / p - (t - t0).ln())
                    .sum::<f64>()
                    / n
            }
            ConvergenceRate::LambertSquared => {
                // Start from the 1/(C tau) guess, then Gauss-Newton.
                let mut a = tail
                    .tau
                    .iter()
                    .zip(&tail.log_q)
                    .map(|(&t, &lq)| -lq - (t - t0).ln())
                    .sum::<f64>()
                    / n;
                a = a.max(-(tail.tau[0] - t0).ln() + 1.0);
                for _ in 0..100 {
                    let (mut num, mut den) = (0.0, 0.0);
                    for (&t, &lq) in tail.tau.iter().zip(&tail.log_q) {
                        let (lb, s) = self.log_bound(a, t - t0);
                        num += (lb - lq) * s;
                        den += s * s;
                    }
                    if den == 0.0 {
                        a += 1.0;
                        continue;
                    }
                    let step = num / den;
                    // Damped step that never increases the residual.
                    let base = self.sse(tail, a, t0);
                    let mut lambda = 1.0;
                    let mut next = a - step;
                    while self.sse(tail, next, t0) > base && lambda > 1e-6 {
                        lambda *= 0.5;
                        next = a - lambda * step;
                    }
                    let done = (next - a).abs() < 1e-13 * (1.0 + a.abs());
                    a = next;
                    if done {
                        break;
                    }
                }
                a
            }
        }
    }
}

fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if (hi - lo).abs() < 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Fits `(C, translation)` of the gate's bound to the `f > 0.9` tail of
/// `traj` by least squares on `ln(1 - f)`.
pub fn fit_bound<S: Scalar>(
    traj: &Trajectory<S>,
    gate: GateTag,
) -> Result<BoundFit<S>, DynamicsError> {
    fit_bound_window(traj, gate, 0.0, f64::INFINITY)
}

/// As [`fit_bound`], restricted to `tau` in `[tau_lo, tau_hi]`.
pub fn fit_bound_window<S: Scalar>(
    traj: &Trajectory<S>,
    gate: GateTag,
    tau_lo: f64,
    tau_hi: f64,
) -> Result<BoundFit<S>, DynamicsError> {
    let order = gate
        .saturation_order()
        .ok_or(DynamicsError::NoBound(gate))?;
    let tail = tail_points(traj, tau_lo, tau_hi);
    if tail.tau.len() < MIN_TAIL {
        return Err(DynamicsError::InsufficientTail {
            needed: MIN_TAIL,
            found: tail.tau.len(),
        });
    }
    let model = Model { rate: order.rate };
    let first = tail.tau[0];
    let last = *tail.tau.last().unwrap();

    // Translation parametrised as t0 = first - e^s with s searched on a
    // log grid, then refined by golden section.
    let objective = |s: f64| {
        let t0 = first - s.exp();
        let a = model.best_log_c(&tail, t0);
        model.sse(&tail, a, t0)
    };
    let s_lo = (1e-6 * first).ln();
    let s_hi = (1e3 * last).ln();
    let grid: usize = 160;
    let step = (s_hi - s_lo) / grid as f64;
    let (best_k, _) = (0..=grid)
        .map(|k| (k, objective(s_lo + step * k as f64)))
        .fold(
            (0, f64::INFINITY),
            |acc, (k, v)| if v < acc.1 { (k, v) } else { acc },
        );
    let lo = s_lo + step * best_k.saturating_sub(1) as f64;
    let hi = (s_lo + step * (best_k + 1) as f64).min(s_hi);
    let s = golden_min(lo, hi, objective);
    let t0 = first - s.exp();
    let log_c = model.best_log_c(&tail, t0);
    let sse = model.sse(&tail, log_c, t0);

    let log_tau: Vec<f64> = tail.tau.iter().map(|t| t.ln()).collect();
    Ok(BoundFit {
        curve: BoundCurve {
            gate,
            rate: order.rate,
            c: S::lit(log_c.exp()),
            translation: S::lit(t0),
        },
        rms_log_residual: (sse / tail.tau.len() as f64).sqrt(),
        slope: ols_slope(&log_tau, &tail.log_q),
        points: tail.tau.len(),
    })
}

/// Least-squares slope of `ln(1 - f)` against `ln tau` over the window.
pub fn fit_loglog_slope<S: Scalar>(
    traj: &Trajectory<S>,
    tau_lo: f64,
    tau_hi: f64,
) -> Result<f64, DynamicsError> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (t, q) in traj.taus.iter().zip(traj.effective_one_minus()) {
        let (t, q) = (t.to_f64_lossy(), q.to_f64_lossy());
        if t > 0.0 && t >= tau_lo && t <= tau_hi && q > 0.0 {
            x.push(t.ln());
            y.push(q.ln());
        }
    }
    if x.len() < MIN_TAIL {
        return Err(DynamicsError::InsufficientWindow {
            lo: tau_lo,
            hi: tau_hi,
            needed: MIN_TAIL,
            found: x.len(),
        });
    }
    Ok(ols_slope(&x, &y))
}
