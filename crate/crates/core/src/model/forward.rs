use std::collections::{BTreeMap, HashMap};

use super::{Activation, ArchSpec, LayerParams, ModelParams};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Element, Tensor};

fn check_input<T: Element>(arch: &ArchSpec, image: &Tensor<T>) -> Result<()> {
    let s = image.shape();
    if s.channels != arch.input_channels {
        return Err(Error::ShapeMismatch {
            op: "forward",
            dim: "channels",
            expected: arch.input_channels,
            actual: s.channels,
        });
    }
    arch.layer_shapes(s)?;
    Ok(())
}

/// Inference forward pass. Intermediate tensors are dropped as soon as no
/// later layer needs them; only skip sources are kept until consumed.
pub fn forward<T: Element>(arch: &ArchSpec, params: &ModelParams<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    check_input(arch, image)?;
    params.check(arch)?;
    let mut kept: HashMap<usize, Tensor<T>> = HashMap::new();
    let mut cur: Option<Tensor<T>> = None;
    for (i, (layer, p)) in arch.layers.iter().zip(&params.layers).enumerate() {
        let x = cur.as_ref().unwrap_or(image);
        let bias = p.bias.as_ref().map(|b| b.data());
        let mut z = if layer.conv.transposed {
            ops::tconv2d_forward(x, &p.weight, bias, &layer.conv)?
        } else {
            ops::conv2d_forward(x, &p.weight, bias, &layer.conv)?
        };
        for &src in &layer.skip_from {
            let s = kept.get(&src).expect("skip source kept");
            z.accumulate(s)?;
        }
        let a = match layer.activation {
            Activation::Relu => ops::relu_forward(&z),
            Activation::Sigmoid => ops::sigmoid_forward(&z),
        };
        drop(z);
        kept.retain(|&src, _| arch.layers[i + 1..].iter().any(|l| l.skip_from.contains(&src)));
        if arch.is_skip_source(i) {
            kept.insert(i, a.clone());
        }
        cur = Some(a);
    }
    Ok(cur.expect("at least one layer"))
}

/// Node ids produced by [`forward_on_tape`].
#[derive(Clone, Debug)]
pub struct TapeForward {
    pub input: NodeId,
    /// `(weight, bias)` parameter nodes per layer.
    pub params: Vec<(NodeId, Option<NodeId>)>,
    /// Post-activation output node per layer.
    pub layer_outputs: Vec<NodeId>,
    pub output: NodeId,
}

impl TapeForward {
    /// Pulls per-layer tensors (parameter values or their gradients) out of
    /// a map keyed by parameter node.
    pub fn gather<T: Element>(&self, map: &mut BTreeMap<NodeId, Tensor<T>>) -> Result<Vec<LayerParams<T>>> {
        let mut take = |id: NodeId| {
            map.remove(&id)
                .ok_or_else(|| Error::Tape(format!("no tensor for parameter node {id}")))
        };
        self.params
            .iter()
            .map(|&(w, b)| {
                Ok(LayerParams {
                    weight: take(w)?,
                    bias: b.map(&mut take).transpose()?,
                })
            })
            .collect()
    }
}

/// Records the forward pass on `tape`, moving the parameters onto it. Node
/// order: the image, then per layer its weight, its bias (if any), the
/// convolution, one addition per skip source, and the activation.
pub fn forward_on_tape<T: Element>(
    tape: &mut Tape<T>,
    arch: &ArchSpec,
    params: ModelParams<T>,
    image: Tensor<T>,
) -> Result<TapeForward> {
    check_input(arch, &image)?;
    params.check(arch)?;
    let input = tape.input(image);
    let mut x = input;
    let mut param_ids = Vec::with_capacity(arch.layers.len());
    let mut outs: Vec<NodeId> = Vec::with_capacity(arch.layers.len());
    for (layer, p) in arch.layers.iter().zip(params.layers) {
        let w = tape.param(p.weight);
        let b = p.bias.map(|b| tape.param(b));
        let mut z = if layer.conv.transposed {
            tape.tconv(x, w, b, layer.conv)?
        } else {
            tape.conv(x, w, b, layer.conv)?
        };
        for &src in &layer.skip_from {
            z = tape.add(z, outs[src])?;
        }
        let a = match layer.activation {
            Activation::Relu => tape.relu(z)?,
            Activation::Sigmoid => tape.sigmoid(z)?,
        };
        param_ids.push((w, b));
        outs.push(a);
        x = a;
    }
    Ok(TapeForward {
        input,
        params: param_ids,
        output: x,
        layer_outputs: outs,
    })
}
