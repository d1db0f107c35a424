use super::{NnError, Tensor};
use crate::scalar::Scalar;

/// Mean squared error over all entries and its gradient `2 (pred - target) / n`.
pub fn loss_mse<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<(S, Tensor<S>), NnError> {
    target.expect_shape("target", pred.rows(), pred.cols())?;
    let n = S::from_usize(pred.data().len()).unwrap();
    let diff = pred.zip_map(target, |p, t| p - t);
    let loss = diff.sum_sq() / n;
    let grad = diff.map(|d| S::lit(2.0) * d / n);
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy<S> {
    /// Mean over steps and batch rows.
    pub loss: S,
    /// Fraction of argmax predictions equal to the target.
    pub accuracy: f64,
    /// Gradient with respect to each logits tensor.
    pub grads: Vec<Tensor<S>>,
}

/// Softmax cross-entropy over `K` steps of `batch x classes` logits with
/// `targets[k][b]` the class id of row `b` at step `k`.
pub fn loss_cross_entropy<S: Scalar>(
    logits: &[Tensor<S>],
    targets: &[Vec<usize>],
) -> Result<CrossEntropy<S>, NnError> {
    if logits.is_empty() || logits.len() != targets.len() {
        return Err(NnError::CacheMismatch(format!(
            "{} logit step(s) for {} target step(s)",
            logits.len(),
            targets.len()
        )));
    }
    let (b, classes) = logits[0].shape();
    let count = logits.len() * b;
    let inv = S::one() / S::from_usize(count).unwrap();
    let mut loss = S::zero();
    let mut correct = 0usize;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, tgt) in logits.iter().zip(targets) {
        z.expect_shape("logits", b, classes)?;
        if tgt.len() != b {
            return Err(NnError::CacheMismatch(format!(
                "{} targets for batch of {b}",
                tgt.len()
            )));
        }
        let mut g = Tensor::zeros(b, classes);
        for (r, &y) in tgt.iter().enumerate() {
            if y >= classes {
                return Err(NnError::TargetOutOfRange { target: y, classes });
            }
            let row = z.row(r);
            let (mut arg, mut max) = (0, row[0]);
            for (c, &v) in row.iter().enumerate() {
                if v > max {
                    max = v;
                    arg = c;
                }
            }
            let sum: S = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[y];
            if arg == y {
                correct += 1;
            }
            for (c, &v) in row.iter().enumerate() {
                let p = (v - lse).exp();
                let ind = if c == y { S::one() } else { S::zero() };
                g.set(r, c, (p - ind) * inv);
            }
        }
        grads.push(g);
    }
    Ok(CrossEntropy {
        loss: loss * inv,
        accuracy: correct as f64 / count as f64,
        grads,
    })
}
