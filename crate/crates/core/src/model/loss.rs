use ndarray::{ArrayView2, Zip};

use crate::error::{Error, Result};

/// Residual norms below this contribute zero Euclidean-loss gradient.
pub const EPS_NORM: f64 = 1e-12;

fn check_shapes(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<()> {
    if pred.nrows() != target.nrows() {
        return Err(Error::DimensionMismatch {
            expected: target.nrows(),
            found: pred.nrows(),
        });
    }
    if pred.ncols() != target.ncols() {
        return Err(Error::DimensionMismatch {
            expected: target.ncols(),
            found: pred.ncols(),
        });
    }
    if pred.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    Ok(())
}

/// Binary cross-entropy applied per verb, averaged over verbs and then
/// over the batch. Every prediction must lie strictly inside (0, 1).
pub fn loss_logistic_onehot(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    check_shapes(pred, target)?;
    let cols = pred.ncols();
    if let Some((flat, &value)) = pred.iter().enumerate().find(|(_, &p)| !(p > 0.0 && p < 1.0)) {
        return Err(Error::ActivationContract {
            index: flat % cols,
            value,
        });
    }
    let mut total = 0.0;
    Zip::from(&pred).and(&target).for_each(|&p, &y| {
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    });
    Ok(total / (pred.len() as f64))
}

/// Same quantity as [`loss_logistic_onehot`] computed from pre-sigmoid
/// logits: `max(z, 0) - z y + ln(1 + exp(-|z|))`.
pub(crate) fn logistic_from_logits(z: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let mut total = 0.0;
    Zip::from(&z).and(&target).for_each(|&z, &y| {
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    });
    total / (z.len() as f64)
}

/// Mean over the batch of the Euclidean distance between each predicted
/// row and its target row.
pub fn loss_euclidean(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    check_shapes(pred, target)?;
    Ok(euclidean_unchecked(pred, target))
}

pub(crate) fn euclidean_unchecked(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let total: f64 = pred
        .rows()
        .into_iter()
        .zip(target.rows())
        .map(|(p, y)| {
            p.iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / pred.nrows() as f64
}
