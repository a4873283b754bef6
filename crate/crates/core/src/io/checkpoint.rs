//! Checkpoint files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic       8 bytes  "GSCKPT\0\0"
//! version     u32      1
//! arch_len    u32      byte length of the architecture text
//! arch        arch_len bytes of UTF-8 (the `ArchSpec` text form)
//! step        u64
//! init_seed   u64
//! val_loss    f64
//! has_adam    u8       0 or 1
//! params      per layer: weight (storage order), then bias if the layer has one; f32
//! adam        if has_adam: u64 step, then first moments, then second moments,
//!             each laid out like params
//! ```
//!
//! Payload sizes follow from the architecture alone.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ArchSpec, LayerParams, ModelParams};
use crate::tensor::{Element, Tensor};
use crate::train::AdamState;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"GSCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub params: ModelParams<f32>,
    pub step: u64,
    pub val_loss: f64,
    pub adam: Option<AdamState<f32>>,
}

/// Bytes of one params-shaped block for `arch`.
pub fn params_block_bytes(arch: &ArchSpec) -> u64 {
    arch.param_count() as u64 * 4
}

/// Exact file size of a checkpoint of `arch`.
pub fn checkpoint_len(arch: &ArchSpec, with_adam: bool) -> u64 {
    let text = arch.to_string().len() as u64;
    let fixed = 8 + 4 + 4 + text + 8 + 8 + 8 + 1;
    let adam = if with_adam { 8 + 2 * params_block_bytes(arch) } else { 0 };
    fixed + params_block_bytes(arch) + adam
}

fn put_layers(out: &mut Vec<u8>, layers: &[LayerParams<f32>]) {
    for l in layers {
        for &v in l.weight.data() {
            v.write_le(out);
        }
        if let Some(b) = &l.bias {
            for &v in b.data() {
                v.write_le(out);
            }
        }
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    ck.params.check(&ck.arch)?;
    let text = ck.arch.to_string();
    let mut out = Vec::with_capacity(checkpoint_len(&ck.arch, ck.adam.is_some()) as usize);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&ck.step.to_le_bytes());
    out.extend_from_slice(&ck.params.seed.to_le_bytes());
    out.extend_from_slice(&ck.val_loss.to_le_bytes());
    out.push(u8::from(ck.adam.is_some()));
    put_layers(&mut out, &ck.params.layers);
    if let Some(a) = &ck.adam {
        out.extend_from_slice(&a.step.to_le_bytes());
        put_layers(&mut out, &a.m);
        put_layers(&mut out, &a.v);
    }
    Ok(out)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, expected_total: u64) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.into(),
                expected: expected_total,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, total: u64) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, total)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self, shape: crate::tensor::Shape, total: u64) -> Result<Tensor<f32>> {
        let raw = self.take(shape.numel() * 4, total)?;
        Tensor::from_vec(shape, raw.chunks_exact(4).map(f32::read_le).collect())
    }

    fn layers(&mut self, arch: &ArchSpec, total: u64) -> Result<Vec<LayerParams<f32>>> {
        arch.layers
            .iter()
            .map(|l| {
                let weight = self.tensor(l.conv.weight_shape(), total)?;
                let bias = if l.conv.has_bias {
                    Some(self.tensor(l.conv.bias_shape(), total)?)
                } else {
                    None
                };
                Ok(LayerParams { weight, bias })
            })
            .collect()
    }
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: 16,
            actual: bytes.len() as u64,
        });
    }
    if bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let text_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let mut cur = Cursor { path, bytes, pos: 16 };
    let text = cur.take(text_len, 16 + text_len as u64)?;
    let text = std::str::from_utf8(text).map_err(|_| Error::format(path, "architecture text is not UTF-8"))?;
    let arch = ArchSpec::parse(text).map_err(|e| Error::format(path, format!("architecture: {e}")))?;
    let has_adam_at = 16 + text_len + 24;
    let has_adam = match bytes.get(has_adam_at) {
        Some(0) => false,
        Some(1) => true,
        Some(v) => return Err(Error::format(path, format!("bad adam flag {v}"))),
        None => false,
    };
    let total = checkpoint_len(&arch, has_adam);
    let step = cur.u64(total)?;
    let seed = cur.u64(total)?;
    let val_loss = f64::from_bits(cur.u64(total)?);
    cur.take(1, total)?;
    let layers = cur.layers(&arch, total)?;
    let adam = if has_adam {
        let step = cur.u64(total)?;
        let m = cur.layers(&arch, total)?;
        let v = cur.layers(&arch, total)?;
        Some(AdamState { step, m, v })
    } else {
        None
    };
    if cur.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after the payload", bytes.len() - cur.pos),
        ));
    }
    Ok(Checkpoint {
        arch,
        params: ModelParams { layers, seed },
        step,
        val_loss,
        adam,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ck)?;
    // Write then rename so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("ckpt.partial");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes)
}
