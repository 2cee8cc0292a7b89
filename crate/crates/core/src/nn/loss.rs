use super::tensor::Tensor2;
use crate::error::{Result, ZicError};

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

fn check(pred: &Tensor2, target: &Tensor2) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(ZicError::ShapeMismatch {
            op: "bce",
            expected: format!("{:?}", target.shape()),
            got: format!("{:?}", pred.shape()),
        });
    }
    Ok(())
}

/// Binary cross-entropy summed over bits and averaged over rows.
pub fn bce_loss(pred: &Tensor2, target: &Tensor2) -> Result<f64> {
    check(pred, target)?;
    let n = pred.rows().max(1) as f64;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &s)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(s * p.ln() + (1.0 - s) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / n)
}

/// Gradient of [`bce_loss`] wrt the predictions; zero where the clamp is active.
pub fn bce_grad(pred: &Tensor2, target: &Tensor2) -> Result<Tensor2> {
    check(pred, target)?;
    let n = pred.rows().max(1) as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &s)| {
            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                0.0
            } else {
                (-s / p + (1.0 - s) / (1.0 - p)) / n
            }
        })
        .collect();
    Tensor2::new(pred.rows(), pred.cols(), data)
}
