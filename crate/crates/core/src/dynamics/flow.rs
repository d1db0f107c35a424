use serde::{Deserialize, Serialize};

use super::{DynamicsError, Method, ToyProblem, Trajectory};
use crate::scalar::Scalar;

/// Step-size policy for the gradient-flow integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Local error allowed per unit of `tau` (per unit of `ln tau` once
    /// `tau > 1`), relative to `max(1, |z|)`.
    pub rel_tol: f64,
    pub checkpoints_per_decade: usize,
    /// First logarithmic checkpoint after `tau = 0`.
    pub tau_min: f64,
    pub initial_step: f64,
    pub max_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            rel_tol: 1e-8,
            checkpoints_per_decade: 50,
            tau_min: 1e-2,
            initial_step: 1e-3,
            max_steps: 10_000_000,
        }
    }
}

impl FlowConfig {
    fn checkpoints(&self, tau_end: f64) -> Vec<f64> {
        let per = self.checkpoints_per_decade.max(1) as f64;
        let lo = (self.tau_min.log10() * per).floor() as i64;
        let hi = (tau_end.log10() * per).floor() as i64;
        let mut out: Vec<f64> = (lo..=hi)
            .map(|k| 10f64.powf(k as f64 / per))
            .filter(|&t| t > 0.0 && t < tau_end)
            .collect();
        out.push(tau_end);
        out
    }
}

fn rhs<S: Scalar>(problem: &ToyProblem<S>, y: &[S], out: &mut [S]) {
    let z_aux = y.get(1).copied().unwrap_or_else(S::zero);
    let g = problem.grad_at(y[0], z_aux);
    for (o, gi) in out.iter_mut().zip(g) {
        *o = -gi;
    }
}

fn rk4_step<S: Scalar>(problem: &ToyProblem<S>, y: &[S], dt: S, out: &mut [S]) {
    let n = y.len();
    let half = S::lit(0.5);
    let mut k1 = vec![S::zero(); n];
    let mut k2 = vec![S::zero(); n];
    let mut k3 = vec![S::zero(); n];
    let mut k4 = vec![S::zero(); n];
    let mut tmp = vec![S::zero(); n];
    rhs(problem, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + half * dt * k1[i];
    }
    rhs(problem, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + half * dt * k2[i];
    }
    rhs(problem, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    rhs(problem, &tmp, &mut k4);
    let sixth = S::one() / S::lit(6.0);
    for i in 0..n {
        out[i] = y[i] + dt * sixth * (k1[i] + S::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
    }
}

/// Integrates `dz/dtau = -dL/dz` from `z0` (plus the refine coordinate,
/// when present) up to `tau_end` with classical RK4 and step doubling.
///
/// The state is recorded at `tau = 0` and at logarithmically spaced
/// checkpoints; steps are shortened to land on every checkpoint exactly.
pub fn integrate_flow<S: Scalar>(
    problem: &ToyProblem<S>,
    y0: &[S],
    tau_end: f64,
    config: &FlowConfig,
) -> Result<Trajectory<S>, DynamicsError> {
    problem.validate()?;
    if !(tau_end > 0.0 && tau_end.is_finite()) {
        return Err(DynamicsError::InvalidArgument(format!(
            "tau_end must be positive, got {tau_end}"
        )));
    }
    if y0.len() != problem.dim() || y0.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::InvalidArgument(format!(
            "initial state must have {} finite coordinate(s)",
            problem.dim()
        )));
    }

    let n = y0.len();
    let mut traj = Trajectory::empty(Method::Flow, problem.gate);
    let mut y = y0.to_vec();
    let mut tau = 0.0f64;
    traj.record(problem, S::zero(), &y);

    let mut dt = config.initial_step.min(tau_end);
    let mut full = vec![S::zero(); n];
    let mut mid = vec![S::zero(); n];
    let mut twice = vec![S::zero(); n];
    let mut steps = 0usize;

    for target in config.checkpoints(tau_end) {
        while tau < target {
            steps += 1;
            if steps > config.max_steps {
                return Err(DynamicsError::StepUnderflow {
                    tau,
                    z: y[0].to_f64_lossy(),
                });
            }
            let h = dt.min(target - tau);
            let hs = S::lit(h);
            rk4_step(problem, &y, hs, &mut full);
            rk4_step(problem, &y, hs * S::lit(0.5), &mut mid);
            rk4_step(problem, &mid, hs * S::lit(0.5), &mut twice);

            let mut err = 0.0f64;
            let mut scale = 1.0f64;
            for i in 0..n {
                err = err.max(((twice[i] - full[i]) / S::lit(15.0)).to_f64_lossy().abs());
                scale = scale.max(y[i].to_f64_lossy().abs());
            }
            let allowed = config.rel_tol * scale * h / tau.max(1.0);
            if err <= allowed {
                for i in 0..n {
                    y[i] = twice[i] + (twice[i] - full[i]) / S::lit(15.0);
                }
                tau = if target - tau <= h { target } else { tau + h };
                let grow = if err == 0.0 {
                    4.0
                } else {
                    (0.9 * (allowed / err).powf(0.25)).clamp(0.2, 4.0)
                };
                // Only grow from a full (unclipped) step.
                if h >= dt * 0.999 {
                    dt *= grow;
                }
            } else {
                let shrink = if err.is_finite() {
                    (0.9 * (allowed / err).powf(0.25)).clamp(0.1, 0.5)
                } else {
                    0.1
                };
                dt = h * shrink;
                if dt < 1e-14 * tau.max(1.0) {
                    return Err(DynamicsError::StepUnderflow {
                        tau,
                        z: y[0].to_f64_lossy(),
                    });
                }
            }
        }
        traj.record(problem, S::lit(tau), &y);
    }
    Ok(traj)
}
