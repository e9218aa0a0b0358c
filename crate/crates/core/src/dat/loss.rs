use crate::error::{Error, Result};
use crate::nn::{Scalar, Tape, Var, LOG_PROB_FLOOR};

/// Mean absolute error over every element.
pub fn regress_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("prediction has {} values, target {}", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Usage("regression loss needs at least one source row".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean categorical cross-entropy of `probs` (`rows x num_classes`) against
/// one-based `labels`, with probabilities floored at 1e-12 before the log.
pub fn dat_loss(probs: &[f64], labels: &[u32], num_classes: usize) -> Result<f64> {
    if labels.is_empty() || probs.len() != labels.len() * num_classes {
        return Err(Error::Shape(format!(
            "{} probabilities for {} rows of {num_classes} classes",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &label) in probs.chunks(num_classes).zip(labels) {
        if label == 0 || label as usize > num_classes {
            return Err(Error::Argument(format!("label {label} outside 1..={num_classes}")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::Argument(format!("probability row sums to {sum}")));
        }
        total -= row[label as usize - 1].max(LOG_PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Gradient reversal: identity forward, upstream gradient times `-lambda`
/// backward.
pub fn grl<F: Scalar>(tape: &mut Tape<'_, F>, f: Var, lambda: f64) -> Var {
    tape.grl(f, F::of(lambda))
}
