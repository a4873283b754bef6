//! ReLU, sigmoid and addition.
//!
//! Backward functions take the forward *output* where that is enough
//! (`y > 0` iff `x > 0` for ReLU, `σ' = y (1 - y)` for sigmoid), so the tape
//! never has to keep pre-activation tensors alive for them.

use rayon::prelude::*;

use crate::error::Result;
use crate::tensor::{ensure_same_shape, Element, Tensor};

const CHUNK: usize = 1 << 14;

fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T + Sync) -> Tensor<T> {
    let mut out = Tensor::zeros(a.shape());
    out.data_mut()
        .par_chunks_mut(CHUNK)
        .zip(a.data().par_chunks(CHUNK).zip(b.data().par_chunks(CHUNK)))
        .for_each(|(o, (a, b))| {
            for ((o, &a), &b) in o.iter_mut().zip(a).zip(b) {
                *o = f(a, b);
            }
        });
    out
}

fn par_map<T: Element>(a: &Tensor<T>, f: impl Fn(T) -> T + Sync) -> Tensor<T> {
    let mut out = Tensor::zeros(a.shape());
    out.data_mut()
        .par_chunks_mut(CHUNK)
        .zip(a.data().par_chunks(CHUNK))
        .for_each(|(o, a)| {
            for (o, &a) in o.iter_mut().zip(a) {
                *o = f(a);
            }
        });
    out
}

pub fn relu_forward<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let zero = T::default();
    par_map(x, |v| if v > zero { v } else { zero })
}

/// Passes `grad_out` where the forward output was positive. The derivative at
/// exactly zero is taken to be 0.
pub fn relu_backward<T: Element>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_same_shape("relu_backward", y.shape(), grad_out.shape())?;
    let zero = T::default();
    Ok(zip_map(y, grad_out, |y, g| if y > zero { g } else { zero }))
}

/// Logistic function, evaluated through `e^x / (1 + e^x)` for negative `x`
/// so that `e^{-x}` never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    par_map(x, |v| T::from_f64(sigmoid(v.to_f64())))
}

pub fn sigmoid_backward<T: Element>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_same_shape("sigmoid_backward", y.shape(), grad_out.shape())?;
    Ok(zip_map(y, grad_out, |y, g| {
        let y = y.to_f64();
        T::from_f64(g.to_f64() * y * (1.0 - y))
    }))
}

pub fn add_forward<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_same_shape("add", a.shape(), b.shape())?;
    Ok(zip_map(a, b, |a, b| T::from_f64(a.to_f64() + b.to_f64())))
}

/// Both summands receive `grad_out` unchanged.
pub fn add_backward<T: Element>(grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (grad_out.clone(), grad_out.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn vec1(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()).unwrap(), v.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
        let y = sigmoid_forward(&vec1(&[0.0]));
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!(sigmoid(-30.0) > 0.0);
        let a = sigmoid(-3.0);
        let b = 1.0 - sigmoid(3.0);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn relu_gradient_is_gated() {
        let x = vec1(&[-1.0, 1.0, 0.0]);
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 1.0, 0.0]);
        let g = relu_backward(&y, &vec1(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0, 0.0]);
    }

    #[test]
    fn add_requires_equal_shapes() {
        assert!(add_forward(&vec1(&[1.0, 2.0]), &vec1(&[1.0])).is_err());
        let s = add_forward(&vec1(&[1.0, 2.0]), &vec1(&[3.0, 4.0])).unwrap();
        assert_eq!(s.data(), &[4.0, 6.0]);
    }
}
