//! The scalar long-time-scale learning problem.
//!
//! A memory value decays over `horizon` steps by a constant gate value
//! `f = phi(z)`; the loss `c |f^horizon - lambda*|` is minimised over the
//! pre-activation `z`, either by continuous gradient flow or by discrete
//! optimizers. With the refine construction the problem has a second
//! coordinate, the auxiliary gate pre-activation.

mod bounds;
mod discrete;
mod flow;
mod io;

pub use bounds::{
    bound_curve, fit_bound, fit_bound_window, fit_loglog_slope, BoundCurve, BoundFit,
    BoundFitRecord,
};
pub use discrete::run_discrete;
pub use flow::{integrate_flow, FlowConfig};
pub use io::{read_trajectory_csv, write_trajectory_csv};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gates::{GateError, GateKind, GateTag, RefineGate};
use crate::scalar::Scalar;
use crate::train::optim::OptimError;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("invalid toy problem: {0}")]
    InvalidProblem(String),
    #[error("step size underflow at tau = {tau:e}, z = {z}")]
    StepUnderflow { tau: f64, z: f64 },
    #[error("need at least {needed} points with f > 0.9 for a bound fit, found {found}")]
    InsufficientTail { needed: usize, found: usize },
    #[error("need at least {needed} points in tau window [{lo:e}, {hi:e}], found {found}")]
    InsufficientWindow {
        lo: f64,
        hi: f64,
        needed: usize,
        found: usize,
    },
    #[error("no convergence-rate bound is tabulated for gate `{0}`")]
    NoBound(GateTag),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("malformed trajectory CSV at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `L(z) = c_t0 |phi(z)^horizon - lambda*|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyProblem<S> {
    pub horizon: u32,
    pub lambda_star: S,
    pub c_t0: S,
    pub gate: GateTag,
}

/// Gate output and its sensitivities at one point of the toy problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyOutput<S> {
    pub f: S,
    pub one_minus_f: S,
    /// Effective gate: `f`, or the refine gate `g`.
    pub g: S,
    pub one_minus_g: S,
    pub r: Option<S>,
    pub dg_dz: S,
    pub dg_dz_aux: S,
}

impl<S: Scalar> ToyProblem<S> {
    /// `lambda* = 1`, `c_t0 = 1`.
    pub fn new(gate: impl Into<GateTag>, horizon: u32) -> Self {
        ToyProblem {
            horizon,
            lambda_star: S::one(),
            c_t0: S::one(),
            gate: gate.into(),
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.horizon < 1 {
            return Err(DynamicsError::InvalidProblem("horizon must be >= 1".into()));
        }
        if !(self.lambda_star > S::zero() && self.lambda_star <= S::one()) {
            return Err(DynamicsError::InvalidProblem(
                "lambda* must lie in (0, 1]".into(),
            ));
        }
        if !(self.c_t0 > S::zero()) {
            return Err(DynamicsError::InvalidProblem(
                "c_t0 must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of optimised coordinates: 1, or 2 with the refine gate.
    pub fn dim(&self) -> usize {
        if self.gate.is_refine() {
            2
        } else {
            1
        }
    }

    /// Starting point with effective gate `sigma(1)`; the refine
    /// pre-activation starts at 0.
    pub fn default_start(&self) -> Vec<S> {
        let z0 = self
            .gate
            .base()
            .inverse_unchecked(crate::gates::default_forget_activation::<S>());
        if self.gate.is_refine() {
            vec![z0, S::zero()]
        } else {
            vec![z0]
        }
    }

    pub fn output(&self, z: S, z_aux: S) -> ToyOutput<S> {
        let kind: GateKind = self.gate.base();
        let f = kind.value(z);
        let one_minus_f = kind.one_minus(z).value;
        let df = kind.derivative(z);
        match self.gate {
            GateTag::Gate(_) => ToyOutput {
                f,
                one_minus_f,
                g: f,
                one_minus_g: one_minus_f,
                r: None,
                dg_dz: df,
                dg_dz_aux: S::zero(),
            },
            GateTag::Refine(_) => {
                let aux = GateKind::Sigmoid;
                let r = aux.value(z_aux);
                let q_r = aux.one_minus(z_aux).value;
                let rg = RefineGate::compose(f, one_minus_f, r, q_r);
                ToyOutput {
                    f,
                    one_minus_f,
                    g: rg.g,
                    one_minus_g: rg.one_minus_g,
                    r: Some(r),
                    dg_dz: rg.dg_df * df,
                    dg_dz_aux: rg.dg_dr * aux.derivative(z_aux),
                }
            }
        }
    }

    /// `g^horizon - lambda*`, evaluated from `1 - g` in log space.
    fn gap(&self, out: &ToyOutput<S>) -> S {
        let h = S::from_u32(self.horizon).unwrap();
        let log_g = (-out.one_minus_g).ln_1p();
        if self.lambda_star == S::one() {
            (h * log_g).exp_m1()
        } else if out.g < S::lit(0.5) {
            (h * log_g).exp() - self.lambda_star
        } else {
            out.g.powi(self.horizon as i32) - self.lambda_star
        }
    }

    pub fn loss_at(&self, z: S, z_aux: S) -> S {
        let out = self.output(z, z_aux);
        self.c_t0 * self.gap(&out).abs()
    }

    /// Gradient of the loss with respect to `(z, z_aux)`. Zero at the kink
    /// `g^horizon = lambda*`.
    pub fn grad_at(&self, z: S, z_aux: S) -> [S; 2] {
        let out = self.output(z, z_aux);
        let gap = self.gap(&out);
        if gap == S::zero() {
            return [S::zero(), S::zero()];
        }
        let h = S::from_u32(self.horizon).unwrap();
        let log_g = (-out.one_minus_g).ln_1p();
        let dl_dg = self.c_t0 * gap.signum() * h * ((h - S::one()) * log_g).exp();
        [dl_dg * out.dg_dz, dl_dg * out.dg_dz_aux]
    }
}

/// `c_t0 |phi(z)^horizon - lambda*|`; a refine problem is evaluated with its
/// auxiliary pre-activation at 0.
pub fn toy_loss<S: Scalar>(problem: &ToyProblem<S>, z: S) -> Result<S, DynamicsError> {
    problem.validate()?;
    crate::gates::gate_value(problem.gate.base(), z)?;
    Ok(problem.loss_at(z, S::zero()))
}

/// `dL/dz`.
pub fn toy_grad_z<S: Scalar>(problem: &ToyProblem<S>, z: S) -> Result<S, DynamicsError> {
    problem.validate()?;
    crate::gates::gate_value(problem.gate.base(), z)?;
    Ok(problem.grad_at(z, S::zero())[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Flow,
    #[serde(rename = "gd")]
    GradientDescent,
    #[serde(rename = "rmsprop")]
    RmsProp,
    Adam,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Flow => "flow",
            Method::GradientDescent => "gd",
            Method::RmsProp => "rmsprop",
            Method::Adam => "adam",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flow" => Ok(Method::Flow),
            "gd" | "sgd" => Ok(Method::GradientDescent),
            "rmsprop" => Ok(Method::RmsProp),
            "adam" => Ok(Method::Adam),
            other => Err(DynamicsError::InvalidArgument(format!(
                "unknown method `{other}` (expected flow, gd, rmsprop, adam)"
            ))),
        }
    }
}

/// Auxiliary coordinate of a refine trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineTrace<S> {
    pub z_aux: Vec<S>,
    pub r: Vec<S>,
    pub g: Vec<S>,
    pub one_minus_g: Vec<S>,
}

/// Recorded learning dynamics. For discrete methods `tau` is the step
/// index.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub method: Method,
    pub gate: GateTag,
    pub taus: Vec<S>,
    pub zs: Vec<S>,
    pub fs: Vec<S>,
    pub one_minus_fs: Vec<S>,
    pub aux: Option<RefineTrace<S>>,
    /// Set when a discrete run was truncated because `|z|` exceeded 1e6.
    pub diverged: bool,
}

impl<S: Scalar> Trajectory<S> {
    pub(crate) fn empty(method: Method, gate: GateTag) -> Self {
        Trajectory {
            method,
            gate,
            taus: Vec::new(),
            zs: Vec::new(),
            fs: Vec::new(),
            one_minus_fs: Vec::new(),
            aux: gate.is_refine().then(RefineTrace::default),
            diverged: false,
        }
    }

    pub(crate) fn record(&mut self, problem: &ToyProblem<S>, tau: S, y: &[S]) {
        let z_aux = y.get(1).copied().unwrap_or_else(S::zero);
        let out = problem.output(y[0], z_aux);
        self.taus.push(tau);
        self.zs.push(y[0]);
        self.fs.push(out.f);
        self.one_minus_fs.push(out.one_minus_f);
        if let Some(aux) = self.aux.as_mut() {
            aux.z_aux.push(z_aux);
            aux.r.push(out.r.unwrap_or_else(S::zero));
            aux.g.push(out.g);
            aux.one_minus_g.push(out.one_minus_g);
        }
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Effective gate output: `g` for refine, `f` otherwise.
    pub fn effective(&self) -> &[S] {
        match &self.aux {
            Some(a) => &a.g,
            None => &self.fs,
        }
    }

    /// `1 - g` for refine, `1 - f` otherwise.
    pub fn effective_one_minus(&self) -> &[S] {
        match &self.aux {
            Some(a) => &a.one_minus_g,
            None => &self.one_minus_fs,
        }
    }

    /// `1 - f_eff` at the recorded point closest to `tau` in log scale.
    pub fn one_minus_at(&self, tau: S) -> Option<S> {
        let target = tau.ln();
        self.taus
            .iter()
            .zip(self.effective_one_minus())
            .filter(|(t, _)| **t > S::zero())
            .min_by(|a, b| {
                let da = (a.0.ln() - target).abs();
                let db = (b.0.ln() - target).abs();
                da.partial_cmp(&db).unwrap()
            })
            .map(|(_, q)| *q)
    }

    /// Linear interpolation of the effective `1 - f` in `(ln tau, ln q)`.
    pub fn one_minus_interp(&self, tau: S) -> Option<S> {
        let q = self.effective_one_minus();
        let i = self.taus.iter().position(|&t| t >= tau)?;
        if self.taus[i] == tau {
            return Some(q[i]);
        }
        if i == 0 || self.taus[i - 1] <= S::zero() {
            return None;
        }
        let (t0, t1) = (self.taus[i - 1].ln(), self.taus[i].ln());
        let w = (tau.ln() - t0) / (t1 - t0);
        Some((q[i - 1].ln() * (S::one() - w) + q[i].ln() * w).exp())
    }
}
