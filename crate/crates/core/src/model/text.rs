//! Line-oriented text form of [`ArchSpec`].
//!
//! ```text
//! # comment
//! input_channels 1
//! layer 0 conv kernel=8x8 stride=8 in=1 out=4 bias=yes act=relu skip=-
//! layer 3 tconv kernel=1x1 stride=1 in=10 out=5 bias=yes act=relu skip=1
//! ```
//!
//! `skip` lists the source layers (comma separated) whose outputs are added
//! to this layer's pre-activation, or `-` for none. Layers must appear in
//! index order.

use std::collections::HashMap;
use std::fmt;

use super::{Activation, ArchSpec, LayerSpec};
use crate::error::{Error, Result};
use crate::ops::ConvSpec;

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input_channels {}", self.input_channels)?;
        for (i, l) in self.layers.iter().enumerate() {
            let c = &l.conv;
            let skip = if l.skip_from.is_empty() {
                "-".to_string()
            } else {
                l.skip_from
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            writeln!(
                f,
                "layer {i} {} kernel={}x{} stride={} in={} out={} bias={} act={} skip={skip}",
                if c.transposed { "tconv" } else { "conv" },
                c.kernel_h,
                c.kernel_w,
                c.stride,
                c.in_channels,
                c.out_channels,
                if c.has_bias { "yes" } else { "no" },
                l.activation.name(),
            )?;
        }
        Ok(())
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

fn num(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| parse_err(line, format!("`{key}` expects an integer, got `{v}`")))
}

impl ArchSpec {
    pub fn parse(text: &str) -> Result<ArchSpec> {
        let mut input_channels = None;
        let mut layers = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut words = body.split_whitespace();
            match words.next() {
                Some("input_channels") => {
                    let v = words
                        .next()
                        .ok_or_else(|| parse_err(line, "missing input channel count"))?;
                    input_channels = Some(num(line, "input_channels", v)?);
                }
                Some("layer") => {
                    let index = num(line, "layer", words.next().unwrap_or(""))?;
                    if index != layers.len() {
                        return Err(parse_err(
                            line,
                            format!("expected layer {}, found layer {index}", layers.len()),
                        ));
                    }
                    let transposed = match words.next() {
                        Some("conv") => false,
                        Some("tconv") => true,
                        other => return Err(parse_err(line, format!("unknown layer type {other:?}"))),
                    };
                    let mut kv = HashMap::new();
                    for w in words {
                        let (k, v) = w
                            .split_once('=')
                            .ok_or_else(|| parse_err(line, format!("expected key=value, got `{w}`")))?;
                        if kv.insert(k, v).is_some() {
                            return Err(parse_err(line, format!("duplicate key `{k}`")));
                        }
                    }
                    let mut take = |k: &str| {
                        kv.remove(k)
                            .ok_or_else(|| parse_err(line, format!("missing `{k}`")))
                    };
                    let kernel = take("kernel")?;
                    let (kh, kw) = kernel
                        .split_once('x')
                        .ok_or_else(|| parse_err(line, "kernel must look like 8x8"))?;
                    let conv = ConvSpec {
                        kernel_h: num(line, "kernel", kh)?,
                        kernel_w: num(line, "kernel", kw)?,
                        stride: num(line, "stride", take("stride")?)?,
                        in_channels: num(line, "in", take("in")?)?,
                        out_channels: num(line, "out", take("out")?)?,
                        transposed,
                        has_bias: match take("bias")? {
                            "yes" => true,
                            "no" => false,
                            v => return Err(parse_err(line, format!("bias must be yes or no, got `{v}`"))),
                        },
                    };
                    let activation = match take("act")? {
                        "relu" => Activation::Relu,
                        "sigmoid" => Activation::Sigmoid,
                        v => return Err(parse_err(line, format!("unknown activation `{v}`"))),
                    };
                    let skip_from = match take("skip")? {
                        "-" => Vec::new(),
                        list => list
                            .split(',')
                            .map(|s| num(line, "skip", s))
                            .collect::<Result<Vec<_>>>()?,
                    };
                    if let Some(k) = kv.keys().next() {
                        return Err(parse_err(line, format!("unknown key `{k}`")));
                    }
                    layers.push(LayerSpec {
                        conv,
                        activation,
                        skip_from,
                    });
                }
                Some(other) => return Err(parse_err(line, format!("unknown record `{other}`"))),
                None => unreachable!(),
            }
        }
        let arch = ArchSpec {
            input_channels: input_channels.ok_or_else(|| parse_err(0, "missing input_channels"))?,
            layers,
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let arch = ArchSpec::pinned();
        let text = arch.to_string();
        assert_eq!(ArchSpec::parse(&text).unwrap(), arch);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "input_channels 1\nlayer 0 conv kernel=3x3 stride=1 in=1 out=1 bias=maybe act=sigmoid skip=-\n";
        match ArchSpec::parse(text) {
            Err(Error::Parse { line: 2, reason }) => assert!(reason.contains("bias")),
            other => panic!("unexpected {other:?}"),
        }
        let text = "input_channels 1\nlayer 0 conv kernel=3x3 stride=1 in=1 out=1 bias=no act=sigmoid skip=- colour=red\n";
        assert!(matches!(ArchSpec::parse(text), Err(Error::Parse { line: 2, .. })));
    }
}
