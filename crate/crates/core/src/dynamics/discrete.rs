use super::{DynamicsError, Method, ToyProblem, Trajectory};
use crate::scalar::Scalar;
use crate::train::optim::{Optimizer, OptimizerConfig};

const DIVERGENCE_LIMIT: f64 = 1e6;

/// Runs `steps` iterations of a discrete optimizer on the toy loss and
/// records every iterate; `tau` is the step index.
///
/// RMSprop uses `alpha = 0.99`, `eps = 1e-8`; Adam uses `(0.9, 0.999)`
/// with `eps = 1e-8`.
pub fn run_discrete<S: Scalar>(
    problem: &ToyProblem<S>,
    y0: &[S],
    method: Method,
    lr: f64,
    steps: usize,
) -> Result<Trajectory<S>, DynamicsError> {
    problem.validate()?;
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(DynamicsError::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if y0.len() != problem.dim() || y0.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::InvalidArgument(format!(
            "initial state must have {} finite coordinate(s)",
            problem.dim()
        )));
    }
    let config = match method {
        Method::GradientDescent => OptimizerConfig::sgd(lr),
        Method::RmsProp => OptimizerConfig::rmsprop(lr),
        Method::Adam => OptimizerConfig::adam(lr),
        Method::Flow => {
            return Err(DynamicsError::InvalidArgument(
                "gradient flow is integrated by integrate_flow, not stepped".into(),
            ))
        }
    };

    let mut opt = Optimizer::<S>::new(config);
    let mut traj = Trajectory::empty(method, problem.gate);
    let mut y = y0.to_vec();
    traj.record(problem, S::zero(), &y);
    for k in 1..=steps {
        let z_aux = y.get(1).copied().unwrap_or_else(S::zero);
        let grad = problem.grad_at(y[0], z_aux);
        let g = &grad[..y.len()];
        opt.step(&mut [&mut y[..]], &[g])?;
        if y.iter().any(|v| v.abs().to_f64_lossy() > DIVERGENCE_LIMIT) {
            traj.diverged = true;
            break;
        }
        traj.record(problem, S::from_usize(k).unwrap(), &y);
    }
    Ok(traj)
}
