use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Mean squared error over all elements, with its gradient
/// 2·(pred − target)/count.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mse: pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.numel() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("mse loss".into()));
    }
    Ok((loss, grad))
}
