//! Pixel-mean binary cross-entropy on probabilities.

use crate::error::Result;
use crate::tensor::{ensure_same_shape, Element, Tensor};

/// Probabilities are clamped to `[ε, 1 - ε]` before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

/// Mean over all elements of `-[t ln p + (1 - t) ln(1 - p)]`, with `p` clamped.
pub fn bce_forward<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    ensure_same_shape("bce", pred.shape(), target.shape())?;
    let n = pred.numel() as f64;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.to_f64().clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            let t = t.to_f64();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / n)
}

/// Gradient of [`bce_forward`] with respect to `pred`, scaled by the upstream
/// scalar `grad_loss`. Zero wherever the clamp is active.
pub fn bce_backward<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, grad_loss: f64) -> Result<Tensor<T>> {
    ensure_same_shape("bce_backward", pred.shape(), target.shape())?;
    let scale = grad_loss / pred.numel() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.to_f64();
            if !(BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&p) {
                return T::default();
            }
            let t = t.to_f64();
            T::from_f64(scale * (-t / p + (1.0 - t) / (1.0 - p)))
        })
        .collect();
    Tensor::from_vec(pred.shape(), data)
}
