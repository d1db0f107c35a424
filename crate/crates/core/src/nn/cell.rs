use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};
use crate::gates::{bias_for_activation, default_forget_activation, gate_inverse, GateKind};
use crate::scalar::Scalar;
use crate::tasks::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    /// LSTM with `i = 1 - f`.
    #[serde(rename = "tied-lstm")]
    TiedLstm,
    #[serde(rename = "lstm")]
    FullLstm,
    #[serde(rename = "gru")]
    Gru,
    /// Forget gate only: `c = f c + (1 - f) tanh(.)`, `h = c`.
    #[serde(rename = "janet")]
    Janet,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [
        CellKind::TiedLstm,
        CellKind::FullLstm,
        CellKind::Gru,
        CellKind::Janet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::TiedLstm => "tied-lstm",
            CellKind::FullLstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::Janet => "janet",
        }
    }

    /// Whether the cell carries a memory state separate from `h`.
    pub fn has_cell_state(self) -> bool {
        matches!(self, CellKind::TiedLstm | CellKind::FullLstm)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| NnError::UnknownCell(s.to_string()))
    }
}

/// Gate slots of a cell. `Reset` is the GRU reset gate, `Refine` the
/// auxiliary gate of the refine construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateId {
    Forget,
    Input,
    Candidate,
    Output,
    Reset,
    Refine,
}

impl GateId {
    pub fn suffix(self) -> char {
        match self {
            GateId::Forget => 'f',
            GateId::Input => 'i',
            GateId::Candidate => 'c',
            GateId::Output => 'o',
            GateId::Reset => 's',
            GateId::Refine => 'r',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub forget_gate: GateKind,
    #[serde(default)]
    pub refine: bool,
}

impl CellSpec {
    pub fn new(kind: CellKind, input_dim: usize, hidden_dim: usize, forget_gate: GateKind) -> Self {
        CellSpec {
            kind,
            input_dim,
            hidden_dim,
            forget_gate,
            refine: false,
        }
    }

    pub fn with_refine(mut self, refine: bool) -> Self {
        self.refine = refine;
        self
    }

    pub fn gates(&self) -> Vec<GateId> {
        use GateId::*;
        let mut g = match self.kind {
            CellKind::FullLstm => vec![Forget, Input, Candidate, Output],
            CellKind::TiedLstm => vec![Forget, Candidate, Output],
            CellKind::Gru => vec![Forget, Reset, Candidate],
            CellKind::Janet => vec![Forget, Candidate],
        };
        if self.refine {
            g.push(Refine);
        }
        g
    }

    /// Parameters per gate, `H (D + H + 1)`.
    pub fn params_per_gate(&self) -> usize {
        self.hidden_dim * (self.input_dim + self.hidden_dim + 1)
    }

    /// Recurrent-cell parameter count (readout excluded).
    pub fn param_count(&self) -> usize {
        self.gates().len() * self.params_per_gate()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(NnError::InvalidSpec(
                "input_dim and hidden_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReadoutMode {
    /// Affine map of the last hidden state.
    #[serde(rename = "final")]
    Final,
    /// Affine map of every hidden state.
    #[serde(rename = "every-step")]
    EveryStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadoutSpec {
    pub output_dim: usize,
    pub mode: ReadoutMode,
}

/// Cell and readout parameters as an ordered list of tensors:
/// `W_g, U_g, b_g` for every gate of the cell spec, then `W_y, b_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub spec: CellSpec,
    pub readout: ReadoutSpec,
    tensors: Vec<Tensor<S>>,
    gates: Vec<GateId>,
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<S> {
    tensors: Vec<Tensor<S>>,
    names: Vec<String>,
}

fn layout(spec: &CellSpec, readout: &ReadoutSpec) -> (Vec<String>, Vec<(usize, usize)>) {
    let (d, h) = (spec.input_dim, spec.hidden_dim);
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    for g in spec.gates() {
        let s = g.suffix();
        names.extend([format!("W_{s}"), format!("U_{s}"), format!("b_{s}")]);
        shapes.extend([(h, d), (h, h), (1, h)]);
    }
    names.extend(["W_y".to_string(), "b_y".to_string()]);
    shapes.extend([(readout.output_dim, h), (1, readout.output_dim)]);
    (names, shapes)
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(spec: CellSpec, readout: ReadoutSpec) -> Self {
        let (_, shapes) = layout(&spec, &readout);
        ModelParams {
            spec,
            readout,
            tensors: shapes
                .into_iter()
                .map(|(r, c)| Tensor::zeros(r, c))
                .collect(),
            gates: spec.gates(),
        }
    }

    /// Builds from named tensors; every name of the layout must be present
    /// with the right shape.
    pub fn from_named(
        spec: CellSpec,
        readout: ReadoutSpec,
        mut named: Vec<(String, Tensor<S>)>,
    ) -> Result<Self, NnError> {
        spec.validate()?;
        let (names, shapes) = layout(&spec, &readout);
        let mut tensors = Vec::with_capacity(names.len());
        for (name, (r, c)) in names.iter().zip(shapes) {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| NnError::MissingParam(name.clone()))?;
            let (_, t) = named.swap_remove(pos);
            t.expect_shape(name, r, c)?;
            tensors.push(t);
        }
        if let Some((extra, _)) = named.first() {
            return Err(NnError::MissingParam(format!(
                "unexpected parameter `{extra}`"
            )));
        }
        Ok(ModelParams {
            spec,
            readout,
            tensors,
            gates: spec.gates(),
        })
    }

    pub fn names(&self) -> Vec<String> {
        layout(&self.spec, &self.readout).0
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (String, &Tensor<S>)> {
        self.names().into_iter().zip(self.tensors.iter())
    }

    pub fn slot(&self, gate: GateId) -> Option<usize> {
        self.gates.iter().position(|&g| g == gate)
    }

    fn gate_index(&self, gate: GateId) -> usize {
        self.slot(gate)
            .unwrap_or_else(|| panic!("cell {} has no {gate:?} gate", self.spec.kind))
    }

    pub fn w(&self, gate: GateId) -> &Tensor<S> {
        &self.tensors[3 * self.gate_index(gate)]
    }

    pub fn u(&self, gate: GateId) -> &Tensor<S> {
        &self.tensors[3 * self.gate_index(gate) + 1]
    }

    pub fn b(&self, gate: GateId) -> &Tensor<S> {
        &self.tensors[3 * self.gate_index(gate) + 2]
    }

    pub fn w_mut(&mut self, gate: GateId) -> &mut Tensor<S> {
        let i = self.gate_index(gate);
        &mut self.tensors[3 * i]
    }

    pub fn u_mut(&mut self, gate: GateId) -> &mut Tensor<S> {
        let i = self.gate_index(gate);
        &mut self.tensors[3 * i + 1]
    }

    pub fn b_mut(&mut self, gate: GateId) -> &mut Tensor<S> {
        let i = self.gate_index(gate);
        &mut self.tensors[3 * i + 2]
    }

    pub fn readout_w(&self) -> &Tensor<S> {
        &self.tensors[self.tensors.len() - 2]
    }

    pub fn readout_b(&self) -> &Tensor<S> {
        &self.tensors[self.tensors.len() - 1]
    }

    /// Forget-gate bias as a flat slice, one entry per unit.
    pub fn forget_bias(&self) -> &[S] {
        self.b(GateId::Forget).data()
    }

    pub fn zero_grad(&self) -> GradientSet<S> {
        GradientSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
            names: self.names(),
        }
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }
}

impl<S: Scalar> GradientSet<S> {
    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub(crate) fn slot_mut(&mut self, i: usize) -> &mut Tensor<S> {
        &mut self.tensors[i]
    }

    pub fn norm(&self) -> S {
        self.tensors.iter().map(|t| t.sum_sq()).sum::<S>().sqrt()
    }

    pub fn scale(&mut self, k: S) {
        for t in &mut self.tensors {
            t.scale(k);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data().iter().all(|v| *v == S::zero()))
    }
}

/// Forget-gate bias initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum InitScheme {
    /// `phi(b_f) = sigma(1)` for every unit.
    Default,
    /// Per-unit time scale `d ~ U[1, t_max]`, `b_f = phi^{-1}(exp(-1/d))`.
    Chrono { t_max: f64 },
}

/// Uniform `(-1/sqrt(H), 1/sqrt(H))` weights, zero biases except `b_f`.
pub fn init_params<S: Scalar>(
    spec: CellSpec,
    readout: ReadoutSpec,
    rng: &mut SeededRng,
    scheme: InitScheme,
) -> Result<ModelParams<S>, NnError> {
    spec.validate()?;
    let mut p = ModelParams::<S>::zeros(spec, readout);
    let s = 1.0 / (spec.hidden_dim as f64).sqrt();
    let n = p.tensors.len();
    for (i, t) in p.tensors.iter_mut().enumerate() {
        let is_bias = i % 3 == 2 && i < n - 2 || i == n - 1;
        if !is_bias {
            for v in t.data_mut() {
                *v = S::lit(rng.uniform_in(-s, s));
            }
        }
    }
    let kind = spec.forget_gate;
    let bias = match scheme {
        InitScheme::Default => {
            let b = bias_for_activation(kind, default_forget_activation::<f64>())?;
            vec![S::lit(b); spec.hidden_dim]
        }
        InitScheme::Chrono { t_max } => {
            if !(t_max >= 1.0 && t_max.is_finite()) {
                return Err(NnError::InvalidSpec(format!(
                    "chrono t_max must be >= 1, got {t_max}"
                )));
            }
            let mut out = Vec::with_capacity(spec.hidden_dim);
            for _ in 0..spec.hidden_dim {
                let d = rng.uniform_in(1.0, t_max);
                out.push(S::lit(chrono_bias(kind, d)?));
            }
            out
        }
    };
    p.b_mut(GateId::Forget).data_mut().copy_from_slice(&bias);
    Ok(p)
}

/// Bias giving the unit time scale `d`: `phi(b) = exp(-1/d)`.
///
/// For `d > 1` the target is above 1/2, so it is inverted through its
/// complement `-expm1(-1/d)` to keep full precision for long time scales.
pub fn chrono_bias(kind: GateKind, d: f64) -> Result<f64, NnError> {
    let q = -(-1.0 / d).exp_m1();
    if q < 0.5 {
        Ok(kind.inverse_complement(q)?)
    } else {
        Ok(gate_inverse(kind, (-1.0 / d).exp())?)
    }
}
