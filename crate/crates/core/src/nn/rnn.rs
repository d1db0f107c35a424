use super::cell::{CellKind, GateId, GradientSet, ModelParams, ReadoutMode};
use super::tensor::{Op, Tensor};
use super::NnError;
use crate::gates::{sigmoid, GateKind, RefineGate};
use crate::scalar::Scalar;

/// Recurrent state. `c` is the LSTM memory cell; for GRU and JANET it
/// mirrors `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct State<S> {
    pub h: Tensor<S>,
    pub c: Tensor<S>,
}

impl<S: Scalar> State<S> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        State {
            h: Tensor::zeros(batch, hidden),
            c: Tensor::zeros(batch, hidden),
        }
    }
}

#[derive(Debug, Clone)]
struct RefineCache<S> {
    r: Tensor<S>,
    q_r: Tensor<S>,
    dg_df: Tensor<S>,
    dg_dr: Tensor<S>,
}

/// Activations of one time step needed by the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache<S> {
    x: Tensor<S>,
    h_prev: Tensor<S>,
    c_prev: Tensor<S>,
    /// Forget-gate value and `phi'(a_f)`.
    f: Tensor<S>,
    df: Tensor<S>,
    refine: Option<RefineCache<S>>,
    /// Effective forget gate and complement (`f` itself without refine).
    g: Tensor<S>,
    q_g: Tensor<S>,
    i: Option<Tensor<S>>,
    o: Option<Tensor<S>>,
    /// GRU reset gate and `s * h_prev`.
    s: Option<Tensor<S>>,
    sh: Option<Tensor<S>>,
    cand: Tensor<S>,
    c: Tensor<S>,
    tanh_c: Option<Tensor<S>>,
    h: Tensor<S>,
}

impl<S: Scalar> StepCache<S> {
    pub fn h(&self) -> &Tensor<S> {
        &self.h
    }

    pub fn c(&self) -> &Tensor<S> {
        &self.c
    }

    /// Base forget-gate value.
    pub fn forget(&self) -> &Tensor<S> {
        &self.f
    }

    /// Effective forget gate after the refine adjustment.
    pub fn effective_forget(&self) -> &Tensor<S> {
        &self.g
    }

    pub fn refine_gate(&self) -> Option<&Tensor<S>> {
        self.refine.as_ref().map(|r| &r.r)
    }

    pub fn input_gate(&self) -> Option<&Tensor<S>> {
        self.i.as_ref()
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    spec: super::CellSpec,
    readout: super::ReadoutSpec,
    batch: usize,
    pub steps: Vec<StepCache<S>>,
}

impl<S: Scalar> ForwardCache<S> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_state(&self) -> State<S> {
        let last = self.steps.last().expect("forward cache is never empty");
        State {
            h: last.h.clone(),
            c: last.c.clone(),
        }
    }
}

/// Stacks equally shaped tensors row-wise.
fn stack<'a, S: Scalar + 'a>(
    parts: impl Iterator<Item = &'a Tensor<S>>,
    rows: usize,
    cols: usize,
) -> Tensor<S> {
    let mut data = Vec::with_capacity(rows * cols);
    for t in parts {
        data.extend_from_slice(t.data());
    }
    Tensor::new(rows, cols, data).expect("stacked parts share a shape")
}

/// Input projections `x_t W_g^T + b_g` of a whole sequence, computed as one
/// product per gate: a `(T * batch) x hidden` block per gate slot.
struct InputProjection<S> {
    blocks: Vec<Tensor<S>>,
    batch: usize,
}

impl<S: Scalar> InputProjection<S> {
    fn new(p: &ModelParams<S>, inputs: &[Tensor<S>]) -> Self {
        let batch = inputs[0].rows();
        let x = stack(inputs.iter(), inputs.len() * batch, p.spec.input_dim);
        let blocks = p
            .spec
            .gates()
            .into_iter()
            .map(|g| {
                let mut a = Tensor::matmul(&x, Op::N, p.w(g), Op::T);
                a.add_row(p.b(g));
                a
            })
            .collect();
        InputProjection { blocks, batch }
    }

    fn at(&self, slot: usize, t: usize) -> Tensor<S> {
        let block = &self.blocks[slot];
        let n = self.batch * block.cols();
        Tensor::new(
            self.batch,
            block.cols(),
            block.data()[t * n..(t + 1) * n].to_vec(),
        )
        .expect("row block")
    }
}

type Pre<'a, S> = Option<(&'a InputProjection<S>, usize)>;

fn preact<S: Scalar>(
    p: &ModelParams<S>,
    gate: GateId,
    x: &Tensor<S>,
    hin: &Tensor<S>,
    pre: Pre<'_, S>,
) -> Tensor<S> {
    match pre {
        Some((proj, t)) => {
            let mut a = proj.at(p.slot(gate).expect("gate present in spec"), t);
            a.gemm_acc(S::one(), hin, Op::N, p.u(gate), Op::T, S::one());
            a
        }
        None => {
            let mut a = Tensor::matmul(x, Op::N, p.w(gate), Op::T);
            a.gemm_acc(S::one(), hin, Op::N, p.u(gate), Op::T, S::one());
            a.add_row(p.b(gate));
            a
        }
    }
}

fn check_finite<S: Scalar>(a: &Tensor<S>, gate: GateId) -> Result<(), NnError> {
    if a.is_finite() {
        Ok(())
    } else {
        Err(NnError::NonFinite(format!(
            "pre-activation of gate {}",
            gate.suffix()
        )))
    }
}

/// Gate value, complement and derivative at every entry of `a`.
fn gate_parts<S: Scalar>(kind: GateKind, a: &Tensor<S>) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let mut f = a.clone();
    let mut q = a.clone();
    let mut d = a.clone();
    for k in 0..a.data().len() {
        let (fv, qv, dv) = kind.value_complement_derivative(a.data()[k]);
        f.data_mut()[k] = fv;
        q.data_mut()[k] = qv;
        d.data_mut()[k] = dv;
    }
    (f, q, d)
}

/// `(sigma(a), 1 - sigma(a))`.
fn sigmoid_pair<S: Scalar>(a: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
    let (f, q, _) = gate_parts(GateKind::Sigmoid, a);
    (f, q)
}

/// Advances the cell by one step on a batch `x` (`batch x input_dim`).
pub fn cell_step<S: Scalar>(
    params: &ModelParams<S>,
    x: &Tensor<S>,
    state: &State<S>,
) -> Result<(State<S>, StepCache<S>), NnError> {
    step_with(params, x, state, None)
}

fn step_with<S: Scalar>(
    params: &ModelParams<S>,
    x: &Tensor<S>,
    state: &State<S>,
    pre: Pre<'_, S>,
) -> Result<(State<S>, StepCache<S>), NnError> {
    let spec = params.spec;
    let b = x.rows();
    x.expect_shape("x_t", b, spec.input_dim)?;
    state.h.expect_shape("h", b, spec.hidden_dim)?;
    state.c.expect_shape("c", b, spec.hidden_dim)?;
    let kind = spec.forget_gate;
    let h_prev = &state.h;
    let c_prev = if spec.kind.has_cell_state() {
        &state.c
    } else {
        &state.h
    };

    let a_f = preact(params, GateId::Forget, x, h_prev, pre);
    check_finite(&a_f, GateId::Forget)?;
    let (f, q_f, df) = gate_parts(kind, &a_f);

    let (refine, g, q_g) = if spec.refine {
        let a_r = preact(params, GateId::Refine, x, h_prev, pre);
        check_finite(&a_r, GateId::Refine)?;
        let (r, q_r) = sigmoid_pair(&a_r);
        let n = f.data().len();
        let (mut g, mut q_g) = (
            Tensor::zeros(b, spec.hidden_dim),
            Tensor::zeros(b, spec.hidden_dim),
        );
        let (mut dg_df, mut dg_dr) = (
            Tensor::zeros(b, spec.hidden_dim),
            Tensor::zeros(b, spec.hidden_dim),
        );
        for k in 0..n {
            let rg = RefineGate::compose(f.data()[k], q_f.data()[k], r.data()[k], q_r.data()[k]);
            g.data_mut()[k] = rg.g;
            q_g.data_mut()[k] = rg.one_minus_g;
            dg_df.data_mut()[k] = rg.dg_df;
            dg_dr.data_mut()[k] = rg.dg_dr;
        }
        (
            Some(RefineCache {
                r,
                q_r,
                dg_df,
                dg_dr,
            }),
            g,
            q_g,
        )
    } else {
        (None, f.clone(), q_f.clone())
    };

    let mut i = None;
    let mut o = None;
    let mut s = None;
    let mut sh = None;
    let cand;
    let c;
    let mut tanh_c = None;
    let h;
    match spec.kind {
        CellKind::FullLstm | CellKind::TiedLstm => {
            cand = preact(params, GateId::Candidate, x, h_prev, pre).map(|v| v.tanh());
            let a_o = preact(params, GateId::Output, x, h_prev, pre);
            let o_t = a_o.map(sigmoid);
            let keep = g.zip_map(c_prev, |gv, cv| gv * cv);
            c = if spec.kind == CellKind::FullLstm {
                let i_t = preact(params, GateId::Input, x, h_prev, pre).map(sigmoid);
                let write = i_t.zip_map(&cand, |iv, cv| iv * cv);
                i = Some(i_t);
                keep.zip_map(&write, |a, b| a + b)
            } else {
                let write = q_g.zip_map(&cand, |qv, cv| qv * cv);
                keep.zip_map(&write, |a, b| a + b)
            };
            let t = c.map(|v| v.tanh());
            h = o_t.zip_map(&t, |ov, tv| ov * tv);
            tanh_c = Some(t);
            o = Some(o_t);
        }
        CellKind::Janet => {
            cand = preact(params, GateId::Candidate, x, h_prev, pre).map(|v| v.tanh());
            let keep = g.zip_map(h_prev, |gv, hv| gv * hv);
            let write = q_g.zip_map(&cand, |qv, cv| qv * cv);
            c = keep.zip_map(&write, |a, b| a + b);
            h = c.clone();
        }
        CellKind::Gru => {
            let s_t = preact(params, GateId::Reset, x, h_prev, pre).map(sigmoid);
            let sh_t = s_t.zip_map(h_prev, |sv, hv| sv * hv);
            cand = preact(params, GateId::Candidate, x, &sh_t, pre).map(|v| v.tanh());
            let keep = g.zip_map(h_prev, |gv, hv| gv * hv);
            let write = q_g.zip_map(&cand, |qv, cv| qv * cv);
            h = keep.zip_map(&write, |a, b| a + b);
            c = h.clone();
            s = Some(s_t);
            sh = Some(sh_t);
        }
    }
    if !h.is_finite() {
        return Err(NnError::NonFinite("hidden state".into()));
    }
    let next = State {
        h: h.clone(),
        c: c.clone(),
    };
    let cache = StepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        f,
        df,
        refine,
        g,
        q_g,
        i,
        o,
        s,
        sh,
        cand,
        c,
        tanh_c,
        h,
    };
    Ok((next, cache))
}

fn readout<S: Scalar>(params: &ModelParams<S>, h: &Tensor<S>) -> Tensor<S> {
    let mut y = Tensor::matmul(h, Op::N, params.readout_w(), Op::T);
    y.add_row(params.readout_b());
    y
}

/// Runs the cell over `inputs` (one `batch x input_dim` tensor per step)
/// from `init` (zeros when `None`) and applies the readout: one output for
/// [`ReadoutMode::Final`], one per step for [`ReadoutMode::EveryStep`].
pub fn forward_sequence<S: Scalar>(
    params: &ModelParams<S>,
    inputs: &[Tensor<S>],
    init: Option<&State<S>>,
) -> Result<(Vec<Tensor<S>>, ForwardCache<S>), NnError> {
    let first = inputs.first().ok_or(NnError::EmptySequence)?;
    let batch = first.rows();
    let mut state = match init {
        Some(s) => s.clone(),
        None => State::zeros(batch, params.spec.hidden_dim),
    };
    for (t, x) in inputs.iter().enumerate() {
        x.expect_shape(&format!("x_{t}"), batch, params.spec.input_dim)?;
    }
    let proj = InputProjection::new(params, inputs);
    let mut steps = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::new();
    for (t, x) in inputs.iter().enumerate() {
        let (next, cache) = step_with(params, x, &state, Some((&proj, t)))?;
        if params.readout.mode == ReadoutMode::EveryStep {
            outputs.push(readout(params, &next.h));
        }
        steps.push(cache);
        state = next;
    }
    if params.readout.mode == ReadoutMode::Final {
        outputs.push(readout(params, &state.h));
    }
    Ok((
        outputs,
        ForwardCache {
            spec: params.spec,
            readout: params.readout,
            batch,
            steps,
        },
    ))
}

/// Pre-activation gradients of every gate over the whole sequence, one
/// `(T * batch) x hidden` block per gate slot.
struct PreactGrads<S> {
    blocks: Vec<Tensor<S>>,
    batch: usize,
}

/// Records `da`, the gradient with respect to the pre-activation of `gate`
/// at step `t`, and adds `da U` to `dhin`.
fn accumulate_gate<S: Scalar>(
    params: &ModelParams<S>,
    acc: &mut PreactGrads<S>,
    t: usize,
    gate: GateId,
    da: &Tensor<S>,
    dhin: &mut Tensor<S>,
) {
    let slot = params.slot(gate).expect("gate present in spec");
    let n = acc.batch * da.cols();
    acc.blocks[slot].data_mut()[t * n..(t + 1) * n].copy_from_slice(da.data());
    dhin.gemm_acc(S::one(), da, Op::N, params.u(gate), Op::N, S::one());
}

/// Turns the recorded pre-activation gradients into `dW = DA^T X`,
/// `dU = DA^T H_in` and `db = colsum(DA)`.
fn finish_weight_grads<S: Scalar>(
    params: &ModelParams<S>,
    cache: &ForwardCache<S>,
    acc: &PreactGrads<S>,
    grads: &mut GradientSet<S>,
) {
    let spec = params.spec;
    let rows = cache.steps.len() * cache.batch;
    let x = stack(cache.steps.iter().map(|s| &s.x), rows, spec.input_dim);
    let h_prev = stack(cache.steps.iter().map(|s| &s.h_prev), rows, spec.hidden_dim);
    let sh = (spec.kind == CellKind::Gru).then(|| {
        stack(
            cache
                .steps
                .iter()
                .map(|s| s.sh.as_ref().expect("GRU cache")),
            rows,
            spec.hidden_dim,
        )
    });
    for (slot, gate) in spec.gates().into_iter().enumerate() {
        let da = &acc.blocks[slot];
        let hin = match (&sh, gate) {
            (Some(sh), GateId::Candidate) => sh,
            _ => &h_prev,
        };
        grads
            .slot_mut(3 * slot)
            .gemm_acc(S::one(), da, Op::T, &x, Op::N, S::one());
        grads
            .slot_mut(3 * slot + 1)
            .gemm_acc(S::one(), da, Op::T, hin, Op::N, S::one());
        da.add_col_sums_into(grads.slot_mut(3 * slot + 2));
    }
}

/// Reverse-mode gradients of a scalar loss given `output_grads`, the
/// gradients with respect to the readout outputs of [`forward_sequence`].
pub fn backward_sequence<S: Scalar>(
    params: &ModelParams<S>,
    cache: &ForwardCache<S>,
    output_grads: &[Tensor<S>],
) -> Result<GradientSet<S>, NnError> {
    if cache.spec != params.spec || cache.readout != params.readout {
        return Err(NnError::CacheMismatch(
            "cache was produced with a different cell or readout spec".into(),
        ));
    }
    let t_len = cache.steps.len();
    let expected = match params.readout.mode {
        ReadoutMode::Final => 1,
        ReadoutMode::EveryStep => t_len,
    };
    if output_grads.len() != expected {
        return Err(NnError::CacheMismatch(format!(
            "expected {expected} output gradient(s), got {}",
            output_grads.len()
        )));
    }
    for dy in output_grads {
        dy.expect_shape("output gradient", cache.batch, params.readout.output_dim)?;
    }

    let spec = params.spec;
    let (bsz, hd) = (cache.batch, spec.hidden_dim);
    let mut grads = params.zero_grad();
    let n_t = grads.tensors().len();
    let mut acc = PreactGrads {
        blocks: vec![Tensor::zeros(t_len * bsz, hd); spec.gates().len()],
        batch: bsz,
    };
    let mut dh_next = Tensor::<S>::zeros(bsz, hd);
    let mut dc_next = Tensor::<S>::zeros(bsz, hd);

    for t in (0..t_len).rev() {
        let st = &cache.steps[t];
        let mut dh = dh_next;
        let dy = match params.readout.mode {
            ReadoutMode::EveryStep => Some(&output_grads[t]),
            ReadoutMode::Final if t == t_len - 1 => Some(&output_grads[0]),
            ReadoutMode::Final => None,
        };
        if let Some(dy) = dy {
            grads
                .slot_mut(n_t - 2)
                .gemm_acc(S::one(), dy, Op::T, &st.h, Op::N, S::one());
            dy.add_col_sums_into(grads.slot_mut(n_t - 1));
            dh.gemm_acc(S::one(), dy, Op::N, params.readout_w(), Op::N, S::one());
        }

        let mut dh_prev = Tensor::zeros(bsz, hd);
        let mut dc_prev = Tensor::zeros(bsz, hd);
        // Gradient with respect to the effective forget gate.
        let dg: Tensor<S>;
        match spec.kind {
            CellKind::FullLstm | CellKind::TiedLstm => {
                let o = st.o.as_ref().unwrap();
                let tc = st.tanh_c.as_ref().unwrap();
                let mut dc = dc_next;
                for k in 0..dc.data().len() {
                    let (ov, tv) = (o.data()[k], tc.data()[k]);
                    dc.data_mut()[k] += dh.data()[k] * ov * (S::one() - tv * tv);
                }
                let da_o = Tensor::from_fn(bsz, hd, |r, c| {
                    let (ov, tv) = (o.get(r, c), tc.get(r, c));
                    dh.get(r, c) * tv * ov * (S::one() - ov)
                });
                accumulate_gate(params, &mut acc, t, GateId::Output, &da_o, &mut dh_prev);

                let dcand = if spec.kind == CellKind::FullLstm {
                    let i = st.i.as_ref().unwrap();
                    let da_i = Tensor::from_fn(bsz, hd, |r, c| {
                        let iv = i.get(r, c);
                        dc.get(r, c) * st.cand.get(r, c) * iv * (S::one() - iv)
                    });
                    accumulate_gate(params, &mut acc, t, GateId::Input, &da_i, &mut dh_prev);
                    dg = dc.zip_map(&st.c_prev, |d, cp| d * cp);
                    dc.zip_map(i, |d, iv| d * iv)
                } else {
                    dg = Tensor::from_fn(bsz, hd, |r, c| {
                        dc.get(r, c) * (st.c_prev.get(r, c) - st.cand.get(r, c))
                    });
                    dc.zip_map(&st.q_g, |d, q| d * q)
                };
                let da_c = Tensor::from_fn(bsz, hd, |r, c| {
                    let cv = st.cand.get(r, c);
                    dcand.get(r, c) * (S::one() - cv * cv)
                });
                accumulate_gate(params, &mut acc, t, GateId::Candidate, &da_c, &mut dh_prev);
                dc_prev = dc.zip_map(&st.g, |d, g| d * g);
            }
            CellKind::Janet => {
                let dc = dh.zip_map(&dc_next, |a, b| a + b);
                dg = Tensor::from_fn(bsz, hd, |r, c| {
                    dc.get(r, c) * (st.h_prev.get(r, c) - st.cand.get(r, c))
                });
                let da_c = Tensor::from_fn(bsz, hd, |r, c| {
                    let cv = st.cand.get(r, c);
                    dc.get(r, c) * st.q_g.get(r, c) * (S::one() - cv * cv)
                });
                accumulate_gate(params, &mut acc, t, GateId::Candidate, &da_c, &mut dh_prev);
                dc_prev = dc.zip_map(&st.g, |d, g| d * g);
            }
            CellKind::Gru => {
                let s = st.s.as_ref().unwrap();
                dg = Tensor::from_fn(bsz, hd, |r, c| {
                    dh.get(r, c) * (st.h_prev.get(r, c) - st.cand.get(r, c))
                });
                let da_c = Tensor::from_fn(bsz, hd, |r, c| {
                    let cv = st.cand.get(r, c);
                    dh.get(r, c) * st.q_g.get(r, c) * (S::one() - cv * cv)
                });
                let mut dsh = Tensor::zeros(bsz, hd);
                accumulate_gate(params, &mut acc, t, GateId::Candidate, &da_c, &mut dsh);
                let da_s = Tensor::from_fn(bsz, hd, |r, c| {
                    let sv = s.get(r, c);
                    dsh.get(r, c) * st.h_prev.get(r, c) * sv * (S::one() - sv)
                });
                accumulate_gate(params, &mut acc, t, GateId::Reset, &da_s, &mut dh_prev);
                for k in 0..dh_prev.data().len() {
                    dh_prev.data_mut()[k] +=
                        dsh.data()[k] * s.data()[k] + dh.data()[k] * st.g.data()[k];
                }
            }
        }

        match &st.refine {
            None => {
                let da_f = dg.zip_map(&st.df, |d, df| d * df);
                accumulate_gate(params, &mut acc, t, GateId::Forget, &da_f, &mut dh_prev);
            }
            Some(rc) => {
                let da_f = Tensor::from_fn(bsz, hd, |r, c| {
                    dg.get(r, c) * rc.dg_df.get(r, c) * st.df.get(r, c)
                });
                let da_r = Tensor::from_fn(bsz, hd, |r, c| {
                    dg.get(r, c) * rc.dg_dr.get(r, c) * rc.r.get(r, c) * rc.q_r.get(r, c)
                });
                accumulate_gate(params, &mut acc, t, GateId::Forget, &da_f, &mut dh_prev);
                accumulate_gate(params, &mut acc, t, GateId::Refine, &da_r, &mut dh_prev);
            }
        }

        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    finish_weight_grads(params, cache, &acc, &mut grads);
    Ok(grads)
}
