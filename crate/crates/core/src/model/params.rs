use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Activation, ArchSpec};
use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Element, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Element = f32> {
    pub layers: Vec<LayerParams<T>>,
    pub seed: u64,
}

impl<T: Element> ModelParams<T> {
    /// Checks tensor shapes against `arch` and that every value is finite.
    pub fn check(&self, arch: &ArchSpec) -> Result<()> {
        if self.layers.len() != arch.layers.len() {
            return Err(Error::InvalidArch(format!(
                "{} parameter sets for {} layers",
                self.layers.len(),
                arch.layers.len()
            )));
        }
        for (i, (p, l)) in self.layers.iter().zip(&arch.layers).enumerate() {
            ensure_same_shape("layer weights", l.conv.weight_shape(), p.weight.shape())?;
            match (&p.bias, l.conv.has_bias) {
                (Some(b), true) => ensure_same_shape("layer bias", l.conv.bias_shape(), b.shape())?,
                (None, false) => {}
                _ => return Err(Error::InvalidArch(format!("layer {i}: bias presence differs from spec"))),
            }
            if !p.weight.all_finite() || !p.bias.as_ref().is_none_or(|b| b.all_finite()) {
                return Err(Error::InvalidArch(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.numel() + l.bias.as_ref().map_or(0, |b| b.numel()))
            .sum()
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.cast(),
                    bias: l.bias.as_ref().map(|b| b.cast()),
                })
                .collect(),
            seed: self.seed,
        }
    }
}

/// Number of kernel taps that reach one output element of this layer.
fn fan_in(arch: &ArchSpec, layer: usize) -> f64 {
    let c = &arch.layers[layer].conv;
    let taps = if c.transposed {
        c.kernel_h.div_ceil(c.stride) * c.kernel_w.div_ceil(c.stride)
    } else {
        c.kernel_h * c.kernel_w
    };
    (c.in_channels * taps) as f64
}

fn fan_out(arch: &ArchSpec, layer: usize) -> f64 {
    let c = &arch.layers[layer].conv;
    (c.out_channels * c.kernel_h * c.kernel_w) as f64
}

/// He-normal weights for ReLU layers, Glorot-normal for the sigmoid head,
/// zero biases. Weights are drawn in `f64` from a ChaCha8 stream seeded by
/// `seed` and rounded to `T`, so `f32` and `f64` models from one seed agree
/// up to rounding.
pub fn init_params<T: Element>(arch: &ArchSpec, seed: u64) -> ModelParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let var = match l.activation {
                Activation::Relu => 2.0 / fan_in(arch, i),
                Activation::Sigmoid => 2.0 / (fan_in(arch, i) + fan_out(arch, i)),
            };
            let normal = Normal::new(0.0, var.sqrt()).expect("finite positive std");
            let shape = l.conv.weight_shape();
            let data = (0..shape.numel()).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
            LayerParams {
                weight: Tensor::from_vec(shape, data).expect("sized from shape"),
                bias: l.conv.has_bias.then(|| Tensor::zeros(l.conv.bias_shape())),
            }
        })
        .collect();
    ModelParams { layers, seed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let arch = ArchSpec::pinned();
        let a = init_params::<f32>(&arch, 7);
        let b = init_params::<f32>(&arch, 7);
        assert_eq!(a, b);
        assert_ne!(a, init_params::<f32>(&arch, 8));
        assert_eq!(a.count(), 4492);
        a.check(&arch).unwrap();
    }

    #[test]
    fn biases_start_at_zero() {
        let p = init_params::<f64>(&ArchSpec::pinned(), 1);
        for l in &p.layers {
            if let Some(b) = &l.bias {
                assert!(b.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn he_variance_matches_target() {
        // Layer 1 (8x8, 4 -> 5) has 1280 weights; pool several seeds for
        // a tighter estimate than a single draw gives.
        let arch = ArchSpec::pinned();
        let target = 2.0 / fan_in(&arch, 1);
        let mut draws = Vec::new();
        for seed in 0..4 {
            let p = init_params::<f64>(&arch, seed);
            draws.extend_from_slice(p.layers[1].weight.data());
        }
        assert!(draws.len() >= 1000);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / target - 1.0).abs() < 0.2, "var {var} vs {target}");
    }

    #[test]
    fn shape_check_catches_mismatch() {
        let arch = ArchSpec::pinned();
        let mut p = init_params::<f32>(&arch, 0);
        p.layers[2].bias = None;
        assert!(p.check(&arch).is_err());
    }
}
