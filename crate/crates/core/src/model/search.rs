//! Exhaustive search of the symmetric additive-skip U-Net family.
//!
//! A family member with `L = 2n + 1` layers has `n` encoder levels. Level `l`
//! is a forward convolution `(k_l, s_l)` taking `c_{l-1}` to `c_l` channels
//! (`c_0` is the input channel count), mirrored by a transposed convolution
//! with the same kernel and stride on the way back up. The deepest decoder
//! layer restores `c_{n-1}` channels, the next `c_{n-2}`, and so on, except
//! the last decoder layer, which emits a free width `d`. A final
//! stride-1 convolution maps `d` channels to one sigmoid output. An addition
//! skip at level `l` (`1 <= l < n`) adds encoder output `l` to the decoder
//! output at the same resolution.
//!
//! Enumeration order, outermost first:
//!
//! 1. encoder `(kernel, stride)` per level, each level iterating strides
//!    high to low and, within a stride, kernels small to large; strides must
//!    not increase with depth and their product must reach
//!    `min_total_stride`;
//! 2. final kernel, small to large;
//! 3. channel widths `(c_1, ..., c_n, d)` with `c_1 <= ... <= c_n`, ordered by
//!    their maximum, then lexicographically;
//! 4. skip level sets, larger sets first, then lexicographically;
//! 5. final bias, present before absent.
//!
//! Candidates whose encoder does not tile, or whose output size differs from
//! the input, for any reference size are discarded. The first candidate with
//! exactly `target_params` parameters is returned.

use serde::{Deserialize, Serialize};

use super::{Activation, ArchSpec, LayerSpec};
use crate::error::{Error, Result};
use crate::ops::{conv_out_size, tconv_out_size, ConvSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConstraints {
    pub layer_count: usize,
    pub target_params: usize,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub channel_min: usize,
    pub channel_max: usize,
    pub skip_min: usize,
    pub skip_max: usize,
    pub min_total_stride: usize,
    pub input_channels: usize,
    /// `(height, width)` sizes every candidate must round-trip exactly.
    pub reference_dims: Vec<[usize; 2]>,
}

impl Default for ArchConstraints {
    fn default() -> Self {
        ArchConstraints {
            layer_count: 7,
            target_params: 4492,
            kernels: vec![1, 3, 5, 8, 16],
            strides: vec![1, 2, 4, 8],
            channel_min: 1,
            channel_max: 32,
            skip_min: 1,
            skip_max: 2,
            min_total_stride: 8,
            input_channels: 1,
            reference_dims: vec![[16000, 64000], [2000, 8000], [512, 2048], [64, 256]],
        }
    }
}

impl ArchConstraints {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: &str| Err(Error::config(format!("arch.{field}"), reason));
        if self.layer_count == 0 || self.layer_count % 2 == 0 {
            return fail("layer_count", "the symmetric family has an odd number of layers");
        }
        if self.target_params == 0 {
            return fail("target_params", "must be positive");
        }
        if self.kernels.is_empty() || self.kernels.contains(&0) {
            return fail("kernels", "must be a non-empty set of positive sizes");
        }
        if self.strides.is_empty() || self.strides.contains(&0) {
            return fail("strides", "must be a non-empty set of positive strides");
        }
        if self.channel_min == 0 || self.channel_min > self.channel_max {
            return fail("channel_min", "channel range must satisfy 1 <= min <= max");
        }
        if self.skip_min > self.skip_max {
            return fail("skip_min", "must not exceed skip_max");
        }
        if self.input_channels == 0 {
            return fail("input_channels", "must be at least 1");
        }
        if self.reference_dims.iter().any(|d| d[0] == 0 || d[1] == 0) {
            return fail("reference_dims", "sizes must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Level {
    kernel: usize,
    stride: usize,
}

/// Extent after the encoder, or `None` if some level does not tile `n`.
fn encode(mut n: usize, levels: &[Level]) -> Option<usize> {
    for l in levels {
        n = conv_out_size(n, l.kernel, l.stride)?;
    }
    Some(n)
}

fn round_trips(n: usize, levels: &[Level], final_kernel: usize) -> bool {
    let Some(mut m) = encode(n, levels) else {
        return false;
    };
    for l in levels.iter().rev() {
        m = tconv_out_size(m, l.kernel, l.stride);
    }
    conv_out_size(m, final_kernel, 1) == Some(n)
}

/// Encoder level tuples in enumeration order.
fn level_tuples(c: &ArchConstraints, depth: usize) -> Vec<Vec<Level>> {
    let mut strides = c.strides.clone();
    strides.sort_unstable_by(|a, b| b.cmp(a));
    strides.dedup();
    let mut kernels = c.kernels.clone();
    kernels.sort_unstable();
    kernels.dedup();
    let pairs: Vec<Level> = strides
        .iter()
        .flat_map(|&stride| {
            kernels
                .iter()
                .filter(move |&&k| k >= stride)
                .map(move |&kernel| Level { kernel, stride })
        })
        .collect();

    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(depth);
    fn rec(pairs: &[Level], depth: usize, cur: &mut Vec<Level>, out: &mut Vec<Vec<Level>>) {
        if cur.len() == depth {
            out.push(cur.clone());
            return;
        }
        for &p in pairs {
            if let Some(prev) = cur.last() {
                if p.stride > prev.stride {
                    continue;
                }
            }
            cur.push(p);
            rec(pairs, depth, cur, out);
            cur.pop();
        }
    }
    rec(&pairs, depth, &mut cur, &mut out);
    out.retain(|levels| levels.iter().map(|l| l.stride).product::<usize>() >= c.min_total_stride);
    out
}

/// `(c_1..c_n, d)` tuples in enumeration order. Empty tuple when `depth == 0`.
fn channel_tuples(c: &ArchConstraints, depth: usize) -> Vec<Vec<usize>> {
    if depth == 0 {
        return vec![Vec::new()];
    }
    let range: Vec<usize> = (c.channel_min..=c.channel_max).collect();
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(depth + 1);
    fn rec(range: &[usize], depth: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == depth + 1 {
            out.push(cur.clone());
            return;
        }
        for &v in range {
            // encoder widths never shrink; d is free
            if cur.len() < depth && cur.last().is_some_and(|&p| v < p) {
                continue;
            }
            cur.push(v);
            rec(range, depth, cur, out);
            cur.pop();
        }
    }
    rec(&range, depth, &mut cur, &mut out);
    out.sort_by(|a, b| {
        let ma = a.iter().max();
        let mb = b.iter().max();
        ma.cmp(&mb).then_with(|| a.cmp(b))
    });
    out
}

/// Subsets of skip levels `1..depth` in enumeration order.
fn skip_sets(c: &ArchConstraints, depth: usize) -> Vec<Vec<usize>> {
    let levels: Vec<usize> = (1..depth).collect();
    let mut sets: Vec<Vec<usize>> = (0u32..(1 << levels.len()))
        .map(|mask| {
            levels
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &l)| l)
                .collect()
        })
        .filter(|s: &Vec<usize>| (c.skip_min..=c.skip_max).contains(&s.len()))
        .collect();
    sets.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    sets
}

fn count(input: usize, levels: &[Level], channels: &[usize], final_kernel: usize, final_bias: bool) -> usize {
    let depth = levels.len();
    let mut total = 0;
    let head_in = if depth == 0 { input } else { channels[depth] };
    for (l, lv) in levels.iter().enumerate() {
        let cin = if l == 0 { input } else { channels[l - 1] };
        let cout = channels[l];
        let kk = lv.kernel * lv.kernel;
        // encoder layer
        total += kk * cin * cout + cout;
        // mirrored decoder layer: channels[l] -> channels[l - 1], or d for l == 0
        let dec_out = if l == 0 { channels[depth] } else { channels[l - 1] };
        total += kk * cout * dec_out + dec_out;
    }
    total + final_kernel * final_kernel * head_in + usize::from(final_bias)
}

fn build(
    input: usize,
    levels: &[Level],
    channels: &[usize],
    skips: &[usize],
    final_kernel: usize,
    final_bias: bool,
) -> ArchSpec {
    let depth = levels.len();
    let mut layers = Vec::with_capacity(2 * depth + 1);
    for (l, lv) in levels.iter().enumerate() {
        let cin = if l == 0 { input } else { channels[l - 1] };
        layers.push(LayerSpec {
            conv: ConvSpec::conv(lv.kernel, lv.stride, cin, channels[l]),
            activation: Activation::Relu,
            skip_from: Vec::new(),
        });
    }
    for l in (0..depth).rev() {
        let lv = levels[l];
        let dec_out = if l == 0 { channels[depth] } else { channels[l - 1] };
        // This decoder layer emits at the resolution of encoder layer l - 1's
        // output, which is skip level l.
        let skip_from = if l > 0 && skips.contains(&l) {
            vec![l - 1]
        } else {
            Vec::new()
        };
        layers.push(LayerSpec {
            conv: ConvSpec::tconv(lv.kernel, lv.stride, channels[l], dec_out),
            activation: Activation::Relu,
            skip_from,
        });
    }
    let head_in = if depth == 0 { input } else { channels[depth] };
    let mut head = ConvSpec::conv(final_kernel, 1, head_in, 1);
    head.has_bias = final_bias;
    layers.push(LayerSpec {
        conv: head,
        activation: Activation::Sigmoid,
        skip_from: Vec::new(),
    });
    ArchSpec {
        input_channels: input,
        layers,
    }
}

/// Returns the first family member, in the documented order, with exactly
/// `target_params` parameters. On failure the error reports the nearest
/// achievable counts on either side of the target.
pub fn search_architecture(c: &ArchConstraints) -> Result<ArchSpec> {
    c.validate()?;
    let depth = (c.layer_count - 1) / 2;
    let mut kernels = c.kernels.clone();
    kernels.sort_unstable();
    kernels.dedup();
    let channel_sets = channel_tuples(c, depth);
    let skip_choices = skip_sets(c, depth);
    let mut below: Option<usize> = None;
    let mut above: Option<usize> = None;

    if skip_choices.is_empty() {
        return Err(Error::NoSolution {
            target: c.target_params,
            below,
            above,
        });
    }

    for levels in level_tuples(c, depth) {
        let tiles = c
            .reference_dims
            .iter()
            .all(|d| encode(d[0], &levels).is_some() && encode(d[1], &levels).is_some());
        if !tiles {
            continue;
        }
        for &fk in &kernels {
            let shape_ok = c
                .reference_dims
                .iter()
                .all(|d| round_trips(d[0], &levels, fk) && round_trips(d[1], &levels, fk));
            if !shape_ok {
                continue;
            }
            for channels in &channel_sets {
                for bias in [true, false] {
                    let p = count(c.input_channels, &levels, channels, fk, bias);
                    if p == c.target_params {
                        let arch = build(c.input_channels, &levels, channels, &skip_choices[0], fk, bias);
                        debug_assert_eq!(arch.param_count(), p);
                        return Ok(arch);
                    } else if p < c.target_params {
                        below = Some(below.map_or(p, |b| b.max(p)));
                    } else {
                        above = Some(above.map_or(p, |a| a.min(p)));
                    }
                }
            }
        }
    }
    Err(Error::NoSolution {
        target: c.target_params,
        below,
        above,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(target: usize) -> ArchConstraints {
        ArchConstraints {
            layer_count: 1,
            target_params: target,
            kernels: vec![3],
            strides: vec![1],
            channel_min: 1,
            channel_max: 1,
            skip_min: 0,
            skip_max: 0,
            min_total_stride: 1,
            input_channels: 1,
            reference_dims: vec![],
        }
    }

    #[test]
    fn single_layer_witness() {
        let arch = search_architecture(&toy(10)).unwrap();
        assert_eq!(arch.layers.len(), 1);
        let c = arch.layers[0].conv;
        assert_eq!((c.kernel_h, c.kernel_w, c.in_channels, c.out_channels), (3, 3, 1, 1));
        assert!(c.has_bias);
        assert_eq!(arch.param_count(), 10);
    }

    #[test]
    fn unsatisfiable_reports_nearest_counts() {
        match search_architecture(&toy(11)) {
            Err(Error::NoSolution { target: 11, below, above }) => {
                assert_eq!(below, Some(10));
                assert_eq!(above, None);
            }
            other => panic!("unexpected {other:?}"),
        }
        match search_architecture(&toy(5)) {
            Err(Error::NoSolution { below, above, .. }) => {
                assert_eq!(below, None);
                assert_eq!(above, Some(9));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn default_search_finds_pinned_fixture() {
        let arch = search_architecture(&ArchConstraints::default()).unwrap();
        assert_eq!(arch.param_count(), 4492);
        assert_eq!(arch.layers.len(), 7);
        assert_eq!(arch, ArchSpec::pinned());
    }

    #[test]
    fn count_formula_matches_built_spec() {
        let c = ArchConstraints::default();
        let levels = [Level { kernel: 5, stride: 4 }, Level { kernel: 3, stride: 2 }, Level { kernel: 1, stride: 1 }];
        for ch in [[1, 2, 3, 4], [7, 7, 9, 2], [3, 8, 8, 31]] {
            for bias in [true, false] {
                let spec = build(1, &levels, &ch, &[1, 2], 1, bias);
                spec.validate().unwrap();
                assert_eq!(spec.param_count(), count(1, &levels, &ch, 1, bias));
            }
        }
        assert!(c.validate().is_ok());
    }

    #[test]
    fn channel_order_is_by_maximum() {
        let c = ArchConstraints {
            channel_max: 3,
            ..ArchConstraints::default()
        };
        let t = channel_tuples(&c, 1);
        assert_eq!(t[0], vec![1, 1]);
        let maxes: Vec<usize> = t.iter().map(|v| *v.iter().max().unwrap()).collect();
        assert!(maxes.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn even_layer_count_rejected() {
        let c = ArchConstraints {
            layer_count: 6,
            ..ArchConstraints::default()
        };
        assert!(matches!(search_architecture(&c), Err(Error::InvalidConfig { .. })));
    }
}
