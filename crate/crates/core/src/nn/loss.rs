//! Softmax cross-entropy over class logits.

use ndarray::Array2;

use super::Scalar;
use crate::error::{Error, Result};

/// Outcome of one loss evaluation over a batch.
pub struct LossOut<F: Scalar> {
    /// Mean cross-entropy over the batch.
    pub loss: F,
    /// Gradient w.r.t. the logits, already divided by the batch size.
    pub dlogits: Array2<F>,
    /// Rows whose argmax equals the label (first index wins ties).
    pub correct: usize,
}

/// Numerically stable mean softmax cross-entropy with gradient.
pub fn softmax_cross_entropy<F: Scalar>(logits: &Array2<F>, labels: &[usize]) -> Result<LossOut<F>> {
    let (b, k) = logits.dim();
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!("{} labels for batch of {b}", labels.len())));
    }
    if b == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    for &l in labels {
        if l >= k {
            return Err(Error::LabelOutOfRange { label: l, classes: k });
        }
    }
    let inv_b = F::from_f64(1.0 / b as f64);
    let mut dlogits = logits.clone();
    let mut loss = F::zero();
    let mut correct = 0;
    for bi in 0..b {
        let label = labels[bi];
        let r = logits.row(bi);
        let max = r.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        let mut drow = dlogits.row_mut(bi);
        for v in drow.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        let log_z = sum.ln() + max;
        loss = loss + (log_z - r[label]) * inv_b;
        let argmax = r
            .iter()
            .enumerate()
            .fold((0usize, F::neg_infinity()), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        if argmax == label {
            correct += 1;
        }
        for (i, v) in drow.iter_mut().enumerate() {
            let p = *v / sum;
            *v = (p - if i == label { F::one() } else { F::zero() }) * inv_b;
        }
    }
    Ok(LossOut { loss, dlogits, correct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{max_rel_err, numeric_grad};
    use ndarray::arr2;

    #[test]
    fn uniform_logits_give_log_k() {
        // Frozen value: three equal logits -> loss = ln 3 = 1.0986123.
        let logits = arr2(&[[0.5f64, 0.5, 0.5]]);
        let out = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!((out.loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn worked_two_class_example() {
        // Logits (2, 0), label 0: loss = ln(1 + e^-2) = 0.126928.
        let logits = arr2(&[[2.0f64, 0.0]]);
        let out = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((out.loss - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert_eq!(out.correct, 1);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = arr2(&[[0.3f64, -1.2, 2.0, 0.1], [1.0, 1.0, -0.5, 0.0]]);
        let labels = [2usize, 0];
        let out = softmax_cross_entropy(&logits, &labels).unwrap();
        let fd = numeric_grad(&logits.clone().into_dyn(), 1e-6, |lv| {
            let lv = lv.clone().into_dimensionality().unwrap();
            softmax_cross_entropy(&lv, &labels).unwrap().loss
        });
        assert!(max_rel_err(&out.dlogits.into_dyn(), &fd) < 1e-8);
    }

    #[test]
    fn shift_invariance() {
        let a = arr2(&[[0.2f64, -0.4, 1.1]]);
        let b = a.clone() + 100.0;
        let la = softmax_cross_entropy(&a, &[2]).unwrap().loss;
        let lb = softmax_cross_entropy(&b, &[2]).unwrap().loss;
        assert!((la - lb).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_labels() {
        let logits = arr2(&[[0.0f32, 1.0]]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        assert!(softmax_cross_entropy(&logits, &[0, 1]).is_err());
    }
}
