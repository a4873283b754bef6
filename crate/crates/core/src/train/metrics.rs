use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Element, Tensor};

/// Probability at or above which a prediction counts as foreground.
pub const DICE_THRESHOLD: f64 = 0.5;

/// `2|A ∩ B| / (|A| + |B|)`, with both masks binarized at `threshold`; 1.0
/// when both are empty.
pub fn dice_at<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, threshold: f64) -> Result<f64> {
    ensure_same_shape("dice", pred.shape(), target.shape())?;
    let (mut inter, mut total) = (0u64, 0u64);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let a = p.to_f64() >= threshold;
        let b = t.to_f64() >= threshold;
        inter += u64::from(a && b);
        total += u64::from(a) + u64::from(b);
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

pub fn dice<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    dice_at(pred, target, DICE_THRESHOLD)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub dice: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single image.
    pub std: f64,
    pub threshold: f64,
}

impl EvalReport {
    pub fn from_dice(dice: Vec<f64>, threshold: f64) -> Result<Self> {
        if dice.is_empty() {
            return Err(Error::Empty("evaluation set".into()));
        }
        let n = dice.len() as f64;
        let mean = dice.iter().sum::<f64>() / n;
        let std = if dice.len() > 1 {
            (dice.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(EvalReport {
            dice,
            mean,
            std,
            threshold,
        })
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "dice {:.4} ± {:.4} over {} images (threshold {})",
            self.mean,
            self.std,
            self.dice.len(),
            self.threshold
        )
    }
}
