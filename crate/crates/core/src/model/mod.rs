//! The additive-skip U-Net family.
//!
//! An [`ArchSpec`] is an ordered chain of convolution layers. Layer `i`
//! consumes the output of layer `i - 1` (the image for layer 0), adds the
//! outputs of its skip sources to its pre-activation, then applies its
//! activation:
//!
//! ```text
//! out[i] = act_i( conv_i(out[i-1]) + sum_{s in skips_i} out[s] )
//! ```

mod forward;
mod params;
mod search;
mod text;

use serde::{Deserialize, Serialize};

pub use forward::{forward, forward_on_tape, TapeForward};
pub use params::{init_params, LayerParams, ModelParams};
pub use search::{search_architecture, ArchConstraints};

use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::tensor::Shape;

const PINNED: &str = include_str!("../../fixtures/arch_4492.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub conv: ConvSpec,
    pub activation: Activation,
    /// Earlier layers whose outputs are added to this layer's pre-activation.
    pub skip_from: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// The 7-layer, 4492-parameter network found by [`search_architecture`]
    /// with the default constraints, committed as a fixture so runs stay
    /// comparable across machines.
    pub fn pinned() -> ArchSpec {
        ArchSpec::parse(PINNED).expect("pinned architecture fixture is valid")
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    /// `(source, destination)` pairs of every addition skip.
    pub fn skips(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(dst, l)| l.skip_from.iter().map(move |&src| (src, dst)))
            .collect()
    }

    /// Indices of layers whose output feeds a later skip.
    pub fn is_skip_source(&self, layer: usize) -> bool {
        self.layers.iter().any(|l| l.skip_from.contains(&layer))
    }

    /// Product of forward-convolution strides.
    pub fn downsampling(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| !l.conv.transposed)
            .map(|l| l.conv.stride)
            .product()
    }

    /// Product of transposed-convolution strides.
    pub fn upsampling(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.conv.transposed)
            .map(|l| l.conv.stride)
            .product()
    }

    /// Structural checks that do not depend on an input size: channel
    /// chaining, skip wiring, and a single-channel sigmoid head.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArch(msg));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        if self.input_channels == 0 {
            return bad("input channels must be at least 1".into());
        }
        let mut prev = self.input_channels;
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .conv
                .validate()
                .map_err(|e| Error::InvalidArch(format!("layer {i}: {e}")))?;
            if layer.conv.in_channels != prev {
                return bad(format!(
                    "layer {i} takes {} channels but receives {prev}",
                    layer.conv.in_channels
                ));
            }
            for &src in &layer.skip_from {
                if src >= i {
                    return bad(format!("layer {i} skips from later layer {src}"));
                }
                let have = self.layers[src].conv.out_channels;
                if have != layer.conv.out_channels {
                    return bad(format!(
                        "skip {src} -> {i} adds {have} channels to {}",
                        layer.conv.out_channels
                    ));
                }
            }
            let last = i + 1 == self.layers.len();
            match (last, layer.activation) {
                (true, Activation::Sigmoid) | (false, Activation::Relu) => {}
                (true, _) => return bad("the final layer must use a sigmoid".into()),
                (false, _) => return bad(format!("hidden layer {i} must use ReLU")),
            }
            prev = layer.conv.out_channels;
        }
        if prev != 1 {
            return bad(format!("the network must emit one channel, not {prev}"));
        }
        Ok(())
    }

    /// Per-layer output shapes for `input`, checking every divisibility and
    /// skip-shape constraint along the way.
    pub fn layer_shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        self.validate()?;
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.conv.output_shape(cur)?;
            for &src in &layer.skip_from {
                if shapes[src] != cur {
                    return Err(Error::InvalidArch(format!(
                        "skip {src} -> {i}: shape {} does not match {cur}",
                        shapes[src]
                    )));
                }
            }
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        Ok(*self.layer_shapes(input)?.last().expect("validated non-empty"))
    }

    /// Whether a single-channel `height x width` image passes through the
    /// network and comes back at the same size.
    pub fn round_trips(&self, height: usize, width: usize) -> bool {
        let Ok(input) = Shape::new(1, self.input_channels, height, width) else {
            return false;
        };
        matches!(self.output_shape(input), Ok(s) if s.height == height && s.width == width)
    }
}

/// `sum over layers of kh * kw * in * out + out * [has_bias]`.
pub fn param_count(arch: &ArchSpec) -> usize {
    arch.layers.iter().map(|l| l.conv.param_count()).sum()
}
