//! Shared finite-difference gradient check.
#![allow(dead_code)]

use fastgate::gates::GateKind;
use fastgate::nn::{
    backward_sequence, forward_sequence, init_params, CellKind, CellSpec, GradientSet, InitScheme,
    ModelParams, ReadoutMode, ReadoutSpec, Tensor,
};
use fastgate::tasks::SeededRng;

pub const D: usize = 3;
pub const H: usize = 8;
pub const T: usize = 12;
pub const B: usize = 4;
pub const OUT: usize = 2;

pub struct Problem {
    pub inputs: Vec<Tensor<f64>>,
    pub weights: Vec<Tensor<f64>>,
}

pub fn problem(seed: u64) -> Problem {
    let mut rng = SeededRng::new(seed);
    let inputs = (0..T)
        .map(|_| Tensor::from_fn(B, D, |_, _| rng.uniform_in(-1.0, 1.0)))
        .collect();
    let weights = (0..T)
        .map(|_| Tensor::from_fn(B, OUT, |_, _| rng.uniform_in(-1.0, 1.0)))
        .collect();
    Problem { inputs, weights }
}

pub fn model(spec: CellSpec, seed: u64) -> ModelParams<f64> {
    let readout = ReadoutSpec {
        output_dim: OUT,
        mode: ReadoutMode::EveryStep,
    };
    let mut rng = SeededRng::new(seed);
    let mut p = init_params(spec, readout, &mut rng, InitScheme::Default).unwrap();
    // Spread every bias so no gate sits at a symmetric point.
    for t in p.tensors_mut() {
        if t.rows() == 1 {
            for v in t.data_mut() {
                *v += rng.uniform_in(-0.5, 0.5);
            }
        }
    }
    p
}

/// `L = sum_t <w_t, y_t> + 0.5 |y_t|^2`.
pub fn loss(p: &ModelParams<f64>, pr: &Problem) -> f64 {
    let (ys, _) = forward_sequence(p, &pr.inputs, None).unwrap();
    ys.iter()
        .zip(&pr.weights)
        .map(|(y, w)| {
            y.data()
                .iter()
                .zip(w.data())
                .map(|(a, b)| a * b + 0.5 * a * a)
                .sum::<f64>()
        })
        .sum()
}

pub fn analytic(p: &ModelParams<f64>, pr: &Problem) -> GradientSet<f64> {
    let (ys, cache) = forward_sequence(p, &pr.inputs, None).unwrap();
    let dys: Vec<_> = ys
        .iter()
        .zip(&pr.weights)
        .map(|(y, w)| y.zip_map(w, |a, b| a + b))
        .collect();
    backward_sequence(p, &cache, &dys).unwrap()
}

/// Compares every analytic gradient entry with a central difference.
/// Returns the number of entries checked or the first mismatch.
pub fn check(spec: CellSpec, seed: u64) -> Result<usize, String> {
    let p = model(spec, seed);
    let pr = problem(seed + 1000);
    let g = analytic(&p, &pr);
    let h = 1e-5;
    let mut checked = 0;
    for (ti, name) in p.names().iter().enumerate() {
        for k in 0..p.tensors()[ti].data().len() {
            let mut up = p.clone();
            up.tensors_mut()[ti].data_mut()[k] += h;
            let mut dn = p.clone();
            dn.tensors_mut()[ti].data_mut()[k] -= h;
            let fd = (loss(&up, &pr) - loss(&dn, &pr)) / (2.0 * h);
            let an = g.tensors()[ti].data()[k];
            let err = (an - fd).abs();
            if !(err <= 1e-4 * an.abs().max(fd.abs()) || err <= 1e-7) {
                return Err(format!(
                    "{} {} refine={} {name}[{k}]: analytic {an} vs fd {fd}",
                    spec.kind, spec.forget_gate, spec.refine
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Every cell kind, gate kind and refine setting.
pub fn check_all() -> Result<usize, String> {
    let mut total = 0;
    for (ci, kind) in CellKind::ALL.into_iter().enumerate() {
        for (gi, gate) in GateKind::ALL.into_iter().enumerate() {
            for refine in [false, true] {
                let spec = CellSpec::new(kind, D, H, gate).with_refine(refine);
                total += check(spec, (ci * 10 + gi) as u64 * 2 + refine as u64)?;
            }
        }
    }
    Ok(total)
}
