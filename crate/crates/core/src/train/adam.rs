use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchSpec, LayerParams, ModelParams};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// First and second moments, shaped like the parameters, plus the number of
/// updates applied so far.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub step: u64,
    pub m: Vec<LayerParams<T>>,
    pub v: Vec<LayerParams<T>>,
}

fn zeros_like<T: Element>(arch: &ArchSpec) -> Vec<LayerParams<T>> {
    arch.layers
        .iter()
        .map(|l| LayerParams {
            weight: Tensor::zeros(l.conv.weight_shape()),
            bias: l.conv.has_bias.then(|| Tensor::zeros(l.conv.bias_shape())),
        })
        .collect()
}

impl<T: Element> AdamState<T> {
    pub fn new(arch: &ArchSpec) -> Self {
        AdamState {
            step: 0,
            m: zeros_like(arch),
            v: zeros_like(arch),
        }
    }
}

fn check_finite<T: Element>(grads: &[LayerParams<T>]) -> Result<()> {
    for (layer, g) in grads.iter().enumerate() {
        if !g.weight.all_finite() {
            return Err(Error::NonFiniteGradient { layer, tensor: "weight" });
        }
        if g.bias.as_ref().is_some_and(|b| !b.all_finite()) {
            return Err(Error::NonFiniteGradient { layer, tensor: "bias" });
        }
    }
    Ok(())
}

fn update<T: Element>(p: &mut Tensor<T>, g: &Tensor<T>, m: &mut Tensor<T>, v: &mut Tensor<T>, c: &AdamConfig, t: f64) {
    let bc1 = 1.0 - c.beta1.powf(t);
    let bc2 = 1.0 - c.beta2.powf(t);
    let it = p
        .data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
    for ((p, &g), (m, v)) in it {
        let g = g.to_f64();
        let mt = c.beta1 * m.to_f64() + (1.0 - c.beta1) * g;
        let vt = c.beta2 * v.to_f64() + (1.0 - c.beta2) * g * g;
        let m_hat = mt / bc1;
        let v_hat = vt / bc2;
        *p = T::from_f64(p.to_f64() - c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon));
        *m = T::from_f64(mt);
        *v = T::from_f64(vt);
    }
}

/// One bias-corrected Adam update. All gradients are checked before any
/// parameter changes, so a failed step leaves everything untouched.
pub fn adam_step<T: Element>(
    params: &mut ModelParams<T>,
    grads: &[LayerParams<T>],
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.layers.len() || state.m.len() != params.layers.len() {
        return Err(Error::InvalidArch("gradient or moment layer count differs from the model".into()));
    }
    check_finite(grads)?;
    state.step += 1;
    let t = state.step as f64;
    for (((p, g), m), v) in params.layers.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        update(&mut p.weight, &g.weight, &mut m.weight, &mut v.weight, config, t);
        if let (Some(pb), Some(gb), Some(mb), Some(vb)) = (&mut p.bias, &g.bias, &mut m.bias, &mut v.bias) {
            update(pb, gb, mb, vb, config, t);
        }
    }
    Ok(())
}
