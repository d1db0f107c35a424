//! Bounded gate functions and their saturation behaviour.
//!
//! Every [`GateKind`] maps the real line onto `(0, 1)`, is strictly
//! increasing and satisfies `phi(-z) = 1 - phi(z)`. The sigmoid-based
//! kinds are written as `sigma(alpha(z))` for an odd inner map `alpha`
//! (`z`, `sinh z`, `sinh(sinh z)`), so their complement `1 - phi(z)` is
//! evaluated as `sigma(-alpha(z))` without cancellation.
//!
//! Inner arguments are clamped to `+-S::EXP_LIMIT` (700 for `f64`) before
//! exponentiation: beyond that point the value and its complement pin to
//! the representable extremes and the evaluation is flagged as saturated.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GateError {
    #[error("gate pre-activation must be finite, got {0}")]
    NonFiniteInput(f64),
    #[error("gate output must lie strictly inside (0, 1), got {0}")]
    OutOfUnitInterval(f64),
    #[error("unknown gate `{0}` (expected one of: sigmoid, softsign, fast, iterfast)")]
    UnknownGate(String),
}

/// The forget-gate activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    #[serde(rename = "sigmoid")]
    Sigmoid,
    /// `(softsign(z/2) + 1) / 2`.
    #[serde(rename = "softsign")]
    NormalizedSoftsign,
    /// `sigma(sinh z)`.
    #[serde(rename = "fast")]
    Fast,
    /// `sigma(sinh(sinh z))`.
    #[serde(rename = "iterfast")]
    IteratedFast,
}

/// Result of evaluating a gate at one pre-activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateEval<S> {
    pub z: S,
    pub f: S,
    pub df_dz: S,
    /// `1 - f`, evaluated independently of `f`.
    pub one_minus_f: S,
    /// The inner argument hit the exponential clamp.
    pub saturated: bool,
}

/// Complement `1 - phi(z)` together with the saturation flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneMinus<S> {
    pub value: S,
    pub saturated: bool,
}

#[inline]
fn clamp_arg<S: Scalar>(x: S) -> (S, bool) {
    let lim = S::lit(S::EXP_LIMIT);
    if x > lim {
        (lim, true)
    } else if x < -lim {
        (-lim, true)
    } else {
        (x, false)
    }
}

/// Logistic function, stable on both tails.
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    let (x, _) = clamp_arg(x);
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln cosh x` without overflow.
#[inline]
fn ln_cosh<S: Scalar>(x: S) -> S {
    let a = x.abs();
    a + (S::lit(-2.0) * a).exp().ln_1p() - S::LN_2()
}

#[inline]
fn logit<S: Scalar>(f: S) -> S {
    // 1 - f is exact for f >= 1/2 (Sterbenz), so no precision is lost near 1.
    f.ln() - (S::one() - f).ln()
}

fn check_unit<S: Scalar>(f: S) -> Result<(), GateError> {
    if f.is_finite() && f > S::zero() && f < S::one() {
        Ok(())
    } else {
        Err(GateError::OutOfUnitInterval(f.to_f64_lossy()))
    }
}

fn check_finite<S: Scalar>(z: S) -> Result<(), GateError> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(GateError::NonFiniteInput(z.to_f64_lossy()))
    }
}

impl GateKind {
    pub const ALL: [GateKind; 4] = [
        GateKind::Sigmoid,
        GateKind::NormalizedSoftsign,
        GateKind::Fast,
        GateKind::IteratedFast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Sigmoid => "sigmoid",
            GateKind::NormalizedSoftsign => "softsign",
            GateKind::Fast => "fast",
            GateKind::IteratedFast => "iterfast",
        }
    }

    /// Unclamped inner argument `alpha(z)` for the sigmoid-based kinds.
    #[inline]
    fn alpha<S: Scalar>(self, z: S) -> S {
        match self {
            GateKind::Sigmoid => z,
            GateKind::Fast => z.sinh(),
            GateKind::IteratedFast => {
                let (s, _) = clamp_arg(z.sinh());
                s.sinh()
            }
            GateKind::NormalizedSoftsign => unreachable!("softsign is not sigmoid-based"),
        }
    }

    /// Gate value, assuming a finite pre-activation.
    #[inline]
    pub fn value<S: Scalar>(self, z: S) -> S {
        match self {
            GateKind::NormalizedSoftsign => {
                if z >= S::zero() {
                    S::one() - S::one() / (z + S::lit(2.0))
                } else {
                    S::one() / (S::lit(2.0) - z)
                }
            }
            _ => sigmoid(self.alpha(z)),
        }
    }

    /// `1 - phi(z)` without cancellation.
    #[inline]
    pub fn one_minus<S: Scalar>(self, z: S) -> OneMinus<S> {
        match self {
            GateKind::NormalizedSoftsign => {
                let value = if z >= S::zero() {
                    S::one() / (z + S::lit(2.0))
                } else {
                    S::one() - S::one() / (S::lit(2.0) - z)
                };
                OneMinus {
                    value: value.max(S::min_positive_value()),
                    saturated: value < S::min_positive_value(),
                }
            }
            _ => {
                let (s, saturated) = clamp_arg(self.alpha(z));
                let value = sigmoid(-s);
                OneMinus {
                    value: value.max(S::min_positive_value()),
                    saturated: saturated || value < S::min_positive_value(),
                }
            }
        }
    }

    /// Derivative `phi'(z)`, assuming a finite pre-activation.
    ///
    /// Inside the clamp this is the product `f (1 - f) alpha'(z)`. Past it
    /// the exact value is formed in log space and floored at the smallest
    /// positive normal number, so the result is always strictly positive.
    #[inline]
    pub fn derivative<S: Scalar>(self, z: S) -> S {
        match self {
            GateKind::NormalizedSoftsign => {
                let d = if z >= S::zero() {
                    let q = S::one() / (z + S::lit(2.0));
                    q * q
                } else {
                    let f = S::one() / (S::lit(2.0) - z);
                    f * f
                };
                d.max(S::min_positive_value())
            }
            _ => {
                let s = self.alpha(z);
                let lim = S::lit(S::EXP_LIMIT);
                if s.abs() <= lim {
                    let f = sigmoid(s);
                    let q = sigmoid(-s);
                    let d = f * q * self.alpha_prime(z);
                    d.max(S::min_positive_value())
                } else {
                    self.log_derivative(z).exp().max(S::min_positive_value())
                }
            }
        }
    }

    #[inline]
    fn alpha_prime<S: Scalar>(self, z: S) -> S {
        match self {
            GateKind::Sigmoid => S::one(),
            GateKind::Fast => z.cosh(),
            GateKind::IteratedFast => z.sinh().cosh() * z.cosh(),
            GateKind::NormalizedSoftsign => unreachable!(),
        }
    }

    /// `ln phi'(z)` evaluated without under- or overflow where the
    /// inner argument is representable; `-inf` once it is not.
    pub fn log_derivative<S: Scalar>(self, z: S) -> S {
        match self {
            GateKind::NormalizedSoftsign => {
                let q = if z >= S::zero() {
                    S::one() / (z + S::lit(2.0))
                } else {
                    S::one() / (S::lit(2.0) - z)
                };
                S::lit(2.0) * q.ln()
            }
            _ => {
                let s = match self {
                    GateKind::IteratedFast => z.sinh().sinh(),
                    _ => self.alpha(z),
                };
                if !s.is_finite() {
                    return S::neg_infinity();
                }
                let base = -softplus(s) - softplus(-s);
                let chain = match self {
                    GateKind::Sigmoid => S::zero(),
                    GateKind::Fast => ln_cosh(z),
                    GateKind::IteratedFast => ln_cosh(z.sinh()) + ln_cosh(z),
                    GateKind::NormalizedSoftsign => unreachable!(),
                };
                base + chain
            }
        }
    }

    /// Inverse `phi^{-1}(f)` for `f` strictly inside `(0, 1)`.
    #[inline]
    pub fn inverse_unchecked<S: Scalar>(self, f: S) -> S {
        match self {
            GateKind::Sigmoid => logit(f),
            GateKind::Fast => logit(f).asinh(),
            GateKind::IteratedFast => logit(f).asinh().asinh(),
            GateKind::NormalizedSoftsign => {
                if f >= S::lit(0.5) {
                    S::one() / (S::one() - f) - S::lit(2.0)
                } else {
                    S::lit(2.0) - S::one() / f
                }
            }
        }
    }

    /// Pre-activation `z` with `1 - phi(z) = q`. Uses the symmetry
    /// `phi(-z) = 1 - phi(z)`.
    pub fn inverse_complement<S: Scalar>(self, q: S) -> Result<S, GateError> {
        check_unit(q)?;
        Ok(-self.inverse_unchecked(q))
    }

    /// Recovers `z` from an evaluation, reading whichever of `f` and
    /// `1 - f` carries more precision.
    pub fn invert_eval<S: Scalar>(self, eval: &GateEval<S>) -> Result<S, GateError> {
        if eval.f <= S::lit(0.5) {
            gate_inverse(self, eval.f)
        } else {
            self.inverse_complement(eval.one_minus_f)
        }
    }

    /// `g_phi(f) = phi'(phi^{-1}(f))` by closed form.
    #[inline]
    pub fn output_gradient_factor_unchecked<S: Scalar>(self, f: S) -> S {
        let q = S::one() - f;
        match self {
            GateKind::Sigmoid => f * q,
            GateKind::NormalizedSoftsign => {
                let m = f.min(q);
                m * m
            }
            GateKind::Fast => {
                let u = logit(f);
                f * q * (S::one() + u * u).sqrt()
            }
            GateKind::IteratedFast => {
                let u = logit(f);
                let v = u.asinh();
                f * q * (S::one() + u * u).sqrt() * (S::one() + v * v).sqrt()
            }
        }
    }

    /// `(phi(z), 1 - phi(z), phi'(z))` sharing one evaluation of the inner
    /// argument. Agrees with [`value`](Self::value),
    /// [`one_minus`](Self::one_minus) and [`derivative`](Self::derivative)
    /// up to rounding.
    #[inline]
    pub fn value_complement_derivative<S: Scalar>(self, z: S) -> (S, S, S) {
        let tiny = S::min_positive_value();
        let sh;
        let s = match self {
            GateKind::NormalizedSoftsign => {
                let (f, q) = if z >= S::zero() {
                    let q = S::one() / (z + S::lit(2.0));
                    (S::one() - q, q)
                } else {
                    let f = S::one() / (S::lit(2.0) - z);
                    (f, S::one() - f)
                };
                let m = f.min(q);
                return (f, q.max(tiny), (m * m).max(tiny));
            }
            GateKind::Sigmoid => {
                sh = S::zero();
                z
            }
            GateKind::Fast => {
                sh = z.sinh();
                sh
            }
            GateKind::IteratedFast => {
                sh = z.sinh();
                clamp_arg(sh).0.sinh()
            }
        };
        let lim = S::lit(S::EXP_LIMIT);
        if !(s.abs() <= lim) {
            return (self.value(z), self.one_minus(z).value, self.derivative(z));
        }
        let e = (-s.abs()).exp();
        let big = S::one() / (S::one() + e);
        let small = e / (S::one() + e);
        let (f, q) = if s >= S::zero() {
            (big, small)
        } else {
            (small, big)
        };
        let chain = match self {
            GateKind::Sigmoid => S::one(),
            GateKind::Fast => (S::one() + sh * sh).sqrt(),
            _ => (S::one() + s * s).sqrt() * (S::one() + sh * sh).sqrt(),
        };
        (f, q.max(tiny), (f * q * chain).max(tiny))
    }

    pub fn eval<S: Scalar>(self, z: S) -> Result<GateEval<S>, GateError> {
        check_finite(z)?;
        let om = self.one_minus(z);
        Ok(GateEval {
            z,
            f: self.value(z),
            df_dz: self.derivative(z),
            one_minus_f: om.value,
            saturated: om.saturated,
        })
    }

    /// Order of saturation and toy-problem convergence rate, when tabulated.
    pub fn saturation_order(self) -> Option<SaturationOrder> {
        GateTag::Gate(self).saturation_order()
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateKind {
    type Err = GateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigmoid" => Ok(GateKind::Sigmoid),
            "softsign" => Ok(GateKind::NormalizedSoftsign),
            "fast" => Ok(GateKind::Fast),
            "iterfast" => Ok(GateKind::IteratedFast),
            other => Err(GateError::UnknownGate(other.to_string())),
        }
    }
}

pub fn gate_value<S: Scalar>(kind: GateKind, z: S) -> Result<S, GateError> {
    check_finite(z)?;
    Ok(kind.value(z))
}

pub fn gate_derivative<S: Scalar>(kind: GateKind, z: S) -> Result<S, GateError> {
    check_finite(z)?;
    Ok(kind.derivative(z))
}

pub fn gate_inverse<S: Scalar>(kind: GateKind, f: S) -> Result<S, GateError> {
    check_unit(f)?;
    Ok(kind.inverse_unchecked(f))
}

pub fn output_gradient_factor<S: Scalar>(kind: GateKind, f: S) -> Result<S, GateError> {
    check_unit(f)?;
    Ok(kind.output_gradient_factor_unchecked(f))
}

pub fn one_minus_gate<S: Scalar>(kind: GateKind, z: S) -> Result<OneMinus<S>, GateError> {
    check_finite(z)?;
    Ok(kind.one_minus(z))
}

/// Forget-gate bias giving activation `p`; the usual target is `sigma(1)`.
pub fn bias_for_activation<S: Scalar>(kind: GateKind, p: S) -> Result<S, GateError> {
    gate_inverse(kind, p)
}

/// Default forget-gate activation at initialisation, `sigma(1)`.
pub fn default_forget_activation<S: Scalar>() -> S {
    sigmoid(S::one())
}

/// Effective gate of the refine construction and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineGate<S> {
    pub f: S,
    pub r: S,
    /// `g = 2 r f + (1 - 2r) f^2`.
    pub g: S,
    pub one_minus_g: S,
    pub dg_df: S,
    pub dg_dr: S,
    /// Derivative through `f = sigma(z)`.
    pub dg_dz: S,
    /// Derivative through `r = sigma(z_aux)`.
    pub dg_dz_aux: S,
}

impl<S: Scalar> RefineGate<S> {
    /// Builds the refine gate from `f`, `r` and their complements.
    #[inline]
    pub fn compose(f: S, q_f: S, r: S, q_r: S) -> Self {
        let two = S::lit(2.0);
        let g = two * r * f + (S::one() - two * r) * f * f;
        // 1 - g = q (2 (1 - r) + q (2r - 1)) with q = 1 - f.
        let one_minus_g = q_f * (two * q_r + q_f * (two * r - S::one()));
        let dg_df = two * (r + (S::one() - two * r) * f);
        let dg_dr = two * f * q_f;
        RefineGate {
            f,
            r,
            g,
            one_minus_g,
            dg_df,
            dg_dr,
            dg_dz: two * f * q_f * (r + (S::one() - two * r) * f),
            dg_dz_aux: two * f * r * q_r - two * f * f * r * q_r,
        }
    }
}

pub fn refine_compose<S: Scalar>(f: S, r: S) -> Result<RefineGate<S>, GateError> {
    check_unit(f)?;
    check_unit(r)?;
    Ok(RefineGate::compose(f, S::one() - f, r, S::one() - r))
}

/// A gate as used by the toy problem: a plain kind or the refine
/// construction over a base kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum GateTag {
    Gate(GateKind),
    Refine(GateKind),
}

impl GateTag {
    pub const REFINE: GateTag = GateTag::Refine(GateKind::Sigmoid);

    pub fn base(self) -> GateKind {
        match self {
            GateTag::Gate(k) | GateTag::Refine(k) => k,
        }
    }

    pub fn is_refine(self) -> bool {
        matches!(self, GateTag::Refine(_))
    }

    pub fn saturation_order(self) -> Option<SaturationOrder> {
        use ConvergenceRate::*;
        use SaturationOrderLabel::*;
        let (order, rate) = match self {
            GateTag::Gate(GateKind::NormalizedSoftsign) => (PolyInverse, TauCubeRoot),
            GateTag::Gate(GateKind::Sigmoid) => (Exponential, TauInverse),
            GateTag::Refine(GateKind::Sigmoid) => (Exponential2x, TauInverse),
            GateTag::Gate(GateKind::Fast) => (DoublyExponential, LambertSquared),
            _ => return None,
        };
        Some(SaturationOrder {
            gate: self,
            order,
            rate,
        })
    }
}

impl fmt::Display for GateTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateTag::Gate(k) => f.write_str(k.name()),
            GateTag::Refine(GateKind::Sigmoid) => f.write_str("refine"),
            GateTag::Refine(k) => write!(f, "refine-{}", k.name()),
        }
    }
}

impl FromStr for GateTag {
    type Err = GateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "refine" {
            return Ok(GateTag::REFINE);
        }
        if let Some(base) = s.strip_prefix("refine-") {
            return Ok(GateTag::Refine(base.parse()?));
        }
        s.parse()
            .map(GateTag::Gate)
            .map_err(|_| GateError::UnknownGate(format!("{s}` (or `refine")))
    }
}

impl From<GateTag> for String {
    fn from(t: GateTag) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for GateTag {
    type Error = GateError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<GateKind> for GateTag {
    fn from(k: GateKind) -> Self {
        GateTag::Gate(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaturationOrderLabel {
    /// `O(z^-1)`
    PolyInverse,
    /// `O(e^-z)`
    Exponential,
    /// `O(e^-2z)`
    Exponential2x,
    /// `O(e^-e^z)`
    DoublyExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceRate {
    /// `O(tau^-1/3)`
    TauCubeRoot,
    /// `O(tau^-1)`
    TauInverse,
    /// `O(W^2(c tau^-1/2))`
    LambertSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaturationOrder {
    pub gate: GateTag,
    pub order: SaturationOrderLabel,
    pub rate: ConvergenceRate,
}
