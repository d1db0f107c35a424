mod common;

use common::*;
use fastgate::gates::GateKind;
use fastgate::nn::{forward_sequence, CellKind, CellSpec, GateId, ModelParams, Tensor};
use fastgate::tasks::SeededRng;

#[test]
fn gradients_match_finite_differences() {
    let total = check_all().unwrap();
    assert!(total > 10_000);
}

#[test]
fn tied_lstm_equals_full_lstm_with_mirrored_input_gate() {
    let tied_spec = CellSpec::new(CellKind::TiedLstm, D, H, GateKind::Sigmoid);
    let tied = model(tied_spec, 5);
    let full_spec = CellSpec::new(CellKind::FullLstm, D, H, GateKind::Sigmoid);
    let mut full = ModelParams::<f64>::zeros(full_spec, tied.readout);
    for gate in [GateId::Forget, GateId::Candidate, GateId::Output] {
        *full.w_mut(gate) = tied.w(gate).clone();
        *full.u_mut(gate) = tied.u(gate).clone();
        *full.b_mut(gate) = tied.b(gate).clone();
    }
    // sigma(-a) = 1 - sigma(a): the input gate reproduces i = 1 - f.
    *full.w_mut(GateId::Input) = tied.w(GateId::Forget).map(|v| -v);
    *full.u_mut(GateId::Input) = tied.u(GateId::Forget).map(|v| -v);
    *full.b_mut(GateId::Input) = tied.b(GateId::Forget).map(|v| -v);
    let n = full.tensors().len();
    full.tensors_mut()[n - 2] = tied.readout_w().clone();
    full.tensors_mut()[n - 1] = tied.readout_b().clone();

    let pr = problem(77);
    assert!((loss(&tied, &pr) - loss(&full, &pr)).abs() <= 1e-12);
    let gt = analytic(&tied, &pr);
    let gf = analytic(&full, &pr);
    let close = |a: &Tensor<f64>, b: &Tensor<f64>| {
        a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| (x - y).abs() <= 1e-12)
    };
    let idx = |p: &ModelParams<f64>, gate| 3 * p.slot(gate).unwrap();
    for gate in [GateId::Candidate, GateId::Output] {
        for off in 0..3 {
            assert!(
                close(
                    &gt.tensors()[idx(&tied, gate) + off],
                    &gf.tensors()[idx(&full, gate) + off]
                ),
                "{gate:?}"
            );
        }
    }
    // The tied forget gate also drives the input gate: dW_f = dW_f' - dW_i'.
    for off in 0..3 {
        let combined = gf.tensors()[idx(&full, GateId::Forget) + off]
            .zip_map(&gf.tensors()[idx(&full, GateId::Input) + off], |a, b| a - b);
        assert!(close(
            &gt.tensors()[idx(&tied, GateId::Forget) + off],
            &combined
        ));
    }
    let (nt, nf) = (gt.tensors().len(), gf.tensors().len());
    assert!(close(&gt.tensors()[nt - 2], &gf.tensors()[nf - 2]));
}

#[test]
fn hidden_states_stay_bounded() {
    for kind in CellKind::ALL {
        for gate in GateKind::ALL {
            let spec = CellSpec::new(kind, D, H, gate);
            let mut p = model(spec, 3);
            for t in p.tensors_mut() {
                t.scale(4.0);
            }
            let mut rng = SeededRng::new(8);
            let inputs: Vec<_> = (0..50)
                .map(|_| Tensor::from_fn(B, D, |_, _| rng.uniform_in(-5.0, 5.0)))
                .collect();
            let (_, cache) = forward_sequence(&p, &inputs, None).unwrap();
            for st in &cache.steps {
                assert!(
                    st.h().data().iter().all(|v| v.abs() <= 1.0),
                    "{kind} {gate}"
                );
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let spec = CellSpec::new(CellKind::Gru, D, H, GateKind::Fast).with_refine(true);
    let pr = problem(4);
    let a = model(spec, 9);
    let b = model(spec, 9);
    assert_eq!(a, b);
    assert_eq!(loss(&a, &pr).to_bits(), loss(&b, &pr).to_bits());
    assert_eq!(analytic(&a, &pr), analytic(&b, &pr));
}
