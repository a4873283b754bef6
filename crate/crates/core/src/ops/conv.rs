//! Valid (unpadded) strided convolution and its adjoint, the transposed
//! convolution, with hand-written backward passes.
//!
//! Weight layouts follow the usual convention:
//!
//! * convolution weights are `(out_channels, in_channels, kernel_h, kernel_w)`;
//! * transposed convolution weights are `(in_channels, out_channels, kernel_h, kernel_w)`,
//!   so a transposed convolution with weights `W` is exactly the adjoint of a
//!   convolution with the same `W`.
//!
//! Every output element is produced by a single task that sums its terms in a
//! fixed order with an `f64` accumulator. Results are therefore bit-identical
//! across runs and thread counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub transposed: bool,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn conv(kernel: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            in_channels,
            out_channels,
            transposed: false,
            has_bias: true,
        }
    }

    pub fn tconv(kernel: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            transposed: true,
            ..ConvSpec::conv(kernel, stride, in_channels, out_channels)
        }
    }

    pub fn without_bias(self) -> Self {
        ConvSpec {
            has_bias: false,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidSpec("stride must be at least 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidSpec("channel counts must be at least 1".into()));
        }
        if self.kernel_h < self.stride || self.kernel_w < self.stride {
            return Err(Error::InvalidSpec(format!(
                "kernel {}x{} is smaller than stride {}; inputs would be skipped",
                self.kernel_h, self.kernel_w, self.stride
            )));
        }
        Ok(())
    }

    /// Shape of the weight tensor for this layer.
    pub fn weight_shape(&self) -> Shape {
        let (a, b) = if self.transposed {
            (self.in_channels, self.out_channels)
        } else {
            (self.out_channels, self.in_channels)
        };
        Shape {
            batch: a,
            channels: b,
            height: self.kernel_h,
            width: self.kernel_w,
        }
    }

    /// Shape of the bias tensor, `(1, out_channels, 1, 1)`.
    pub fn bias_shape(&self) -> Shape {
        Shape {
            batch: 1,
            channels: self.out_channels,
            height: 1,
            width: 1,
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels * self.out_channels
            + if self.has_bias { self.out_channels } else { 0 }
    }

    /// Output shape for `input`, checking channels and, for forward
    /// convolutions, that each window tiles the input exactly.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        let op = if self.transposed { "tconv2d" } else { "conv2d" };
        if input.channels != self.in_channels {
            return Err(Error::ShapeMismatch {
                op,
                dim: "channels",
                expected: self.in_channels,
                actual: input.channels,
            });
        }
        let (height, width) = if self.transposed {
            (
                tconv_out_size(input.height, self.kernel_h, self.stride),
                tconv_out_size(input.width, self.kernel_w, self.stride),
            )
        } else {
            (
                checked_conv_out(op, "height", input.height, self.kernel_h, self.stride)?,
                checked_conv_out(op, "width", input.width, self.kernel_w, self.stride)?,
            )
        };
        Ok(Shape {
            batch: input.batch,
            channels: self.out_channels,
            height,
            width,
        })
    }
}

/// `(n - k) / s + 1` when the windows tile `n` exactly, else `None`.
pub fn conv_out_size(n: usize, k: usize, s: usize) -> Option<usize> {
    if s == 0 || n < k || (n - k) % s != 0 {
        None
    } else {
        Some((n - k) / s + 1)
    }
}

/// `(n - 1) * s + k`.
pub fn tconv_out_size(n: usize, k: usize, s: usize) -> usize {
    (n - 1) * s + k
}

fn checked_conv_out(op: &'static str, dim: &'static str, n: usize, k: usize, s: usize) -> Result<usize> {
    if n < k {
        return Err(Error::KernelTooLarge {
            op,
            dim,
            extent: n,
            kernel: k,
        });
    }
    conv_out_size(n, k, s).ok_or(Error::Indivisible {
        op,
        dim,
        extent: n,
        kernel: k,
        stride: s,
    })
}

fn check_weights<T: Element>(
    op: &'static str,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<()> {
    ensure_same_shape(op, spec.weight_shape(), weights.shape())?;
    match (spec.has_bias, bias) {
        (true, Some(b)) if b.len() != spec.out_channels => Err(Error::ShapeMismatch {
            op,
            dim: "bias length",
            expected: spec.out_channels,
            actual: b.len(),
        }),
        (true, None) => Err(Error::InvalidSpec(format!("{op}: spec has a bias but none was given"))),
        (false, Some(_)) => Err(Error::InvalidSpec(format!("{op}: bias given but spec has none"))),
        _ => Ok(()),
    }
}

pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    if spec.transposed {
        return Err(Error::InvalidSpec("conv2d_forward called with a transposed spec".into()));
    }
    let out_shape = spec.output_shape(input.shape())?;
    check_weights("conv2d", spec, weights, bias)?;
    Ok(correlate(input, weights.data(), out_shape, spec.kernel_h, spec.kernel_w, spec.stride, bias))
}

/// Gradients of [`conv2d_forward`]: `(grad_input, grad_weights, grad_bias)`.
/// `grad_bias` is empty when the spec has no bias.
pub fn conv2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let grad_input = conv2d_backward_input(grad_out, input.shape(), weights, spec)?;
    let (grad_weights, grad_bias) = conv2d_backward_params(grad_out, input, spec)?;
    Ok((grad_input, grad_weights, grad_bias))
}

/// Input gradient of [`conv2d_forward`]; the input values themselves are not needed.
pub fn conv2d_backward_input<T: Element>(
    grad_out: &Tensor<T>,
    input_shape: Shape,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let expected = spec.output_shape(input_shape)?;
    ensure_same_shape("conv2d_backward", expected, grad_out.shape())?;
    ensure_same_shape("conv2d_backward", spec.weight_shape(), weights.shape())?;
    Ok(scatter_transposed(grad_out, weights.data(), input_shape, spec.kernel_h, spec.kernel_w, spec.stride, None))
}

/// Weight and bias gradients of [`conv2d_forward`].
pub fn conv2d_backward_params<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Vec<T>)> {
    let expected = spec.output_shape(input.shape())?;
    ensure_same_shape("conv2d_backward", expected, grad_out.shape())?;
    let gw = weight_grad(grad_out, input, spec.kernel_h, spec.kernel_w, spec.stride);
    let grad_weights = Tensor::from_vec(spec.weight_shape(), gw)?;
    let grad_bias = if spec.has_bias { channel_sums(grad_out) } else { Vec::new() };
    Ok((grad_weights, grad_bias))
}

pub fn tconv2d_forward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    if !spec.transposed {
        return Err(Error::InvalidSpec("tconv2d_forward requires a transposed spec".into()));
    }
    let out_shape = spec.output_shape(input.shape())?;
    check_weights("tconv2d", spec, weights, bias)?;
    Ok(scatter_transposed(input, weights.data(), out_shape, spec.kernel_h, spec.kernel_w, spec.stride, bias))
}

/// Gradients of [`tconv2d_forward`]: `(grad_input, grad_weights, grad_bias)`.
pub fn tconv2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let grad_input = tconv2d_backward_input(grad_out, input.shape(), weights, spec)?;
    let (grad_weights, grad_bias) = tconv2d_backward_params(grad_out, input, spec)?;
    Ok((grad_input, grad_weights, grad_bias))
}

pub fn tconv2d_backward_input<T: Element>(
    grad_out: &Tensor<T>,
    input_shape: Shape,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let expected = spec.output_shape(input_shape)?;
    ensure_same_shape("tconv2d_backward", expected, grad_out.shape())?;
    ensure_same_shape("tconv2d_backward", spec.weight_shape(), weights.shape())?;
    // The (in, out, kh, kw) transposed layout read as (out, in, kh, kw) of a
    // forward convolution mapping out -> in.
    Ok(correlate(grad_out, weights.data(), input_shape, spec.kernel_h, spec.kernel_w, spec.stride, None))
}

pub fn tconv2d_backward_params<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Vec<T>)> {
    let expected = spec.output_shape(input.shape())?;
    ensure_same_shape("tconv2d_backward", expected, grad_out.shape())?;
    // dW[i, o, ky, kx] = sum x[i, y, x] * g[o, y*s + ky, x*s + kx], which is the
    // forward-convolution weight gradient with the roles of the two tensors swapped.
    let gw = weight_grad(input, grad_out, spec.kernel_h, spec.kernel_w, spec.stride);
    let grad_weights = Tensor::from_vec(spec.weight_shape(), gw)?;
    let grad_bias = if spec.has_bias { channel_sums(grad_out) } else { Vec::new() };
    Ok((grad_weights, grad_bias))
}

/// Valid strided cross-correlation with weights laid out `(out, in, kh, kw)`.
///
/// Each output element sums `in_channel`, `ky`, `kx` in ascending order, then
/// adds the bias.
fn correlate<T: Element>(
    input: &Tensor<T>,
    w: &[T],
    out_shape: Shape,
    kh: usize,
    kw: usize,
    s: usize,
    bias: Option<&[T]>,
) -> Tensor<T> {
    let in_shape = input.shape();
    let cin = in_shape.channels;
    let (ow, oc, oh) = (out_shape.width, out_shape.channels, out_shape.height);
    let src = input.data();
    let wf: Vec<f64> = w.iter().map(|v| v.to_f64()).collect();
    let mut out = Tensor::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(ow)
        .enumerate()
        .for_each_init(
            || vec![0f64; ow],
            |acc, (row, dst)| {
                let y = row % oh;
                let o = (row / oh) % oc;
                let b = row / (oh * oc);
                acc.iter_mut().for_each(|a| *a = 0.0);
                for i in 0..cin {
                    for ky in 0..kh {
                        let src_row = &src[in_shape.offset(b, i, y * s + ky, 0)..][..in_shape.width];
                        let wrow = &wf[((o * cin + i) * kh + ky) * kw..][..kw];
                        for (kx, &wv) in wrow.iter().enumerate() {
                            for (x, a) in acc.iter_mut().enumerate() {
                                *a += wv * src_row[x * s + kx].to_f64();
                            }
                        }
                    }
                }
                let bv = bias.map_or(0.0, |b| b[o].to_f64());
                for (d, a) in dst.iter_mut().zip(acc.iter()) {
                    *d = T::from_f64(*a + bv);
                }
            },
        );
    out
}

/// Transposed convolution with weights laid out `(in, out, kh, kw)`: every
/// input pixel scatters a weighted kernel into the output. Each task owns one
/// output row, so scatter targets never race.
fn scatter_transposed<T: Element>(
    input: &Tensor<T>,
    w: &[T],
    out_shape: Shape,
    kh: usize,
    kw: usize,
    s: usize,
    bias: Option<&[T]>,
) -> Tensor<T> {
    let in_shape = input.shape();
    let (cin, ih, iw) = (in_shape.channels, in_shape.height, in_shape.width);
    let (ow, oc, oh) = (out_shape.width, out_shape.channels, out_shape.height);
    let src = input.data();
    let wf: Vec<f64> = w.iter().map(|v| v.to_f64()).collect();
    let mut out = Tensor::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(ow)
        .enumerate()
        .for_each_init(
            || vec![0f64; ow],
            |acc, (row, dst)| {
                let yo = row % oh;
                let o = (row / oh) % oc;
                let b = row / (oh * oc);
                acc.iter_mut().for_each(|a| *a = 0.0);
                for i in 0..cin {
                    for ky in 0..kh {
                        if yo < ky || (yo - ky) % s != 0 {
                            continue;
                        }
                        let yi = (yo - ky) / s;
                        if yi >= ih {
                            continue;
                        }
                        let src_row = &src[in_shape.offset(b, i, yi, 0)..][..iw];
                        let wrow = &wf[((i * oc + o) * kh + ky) * kw..][..kw];
                        for (x, v) in src_row.iter().enumerate() {
                            let v = v.to_f64();
                            let window = &mut acc[x * s..x * s + kw];
                            for (a, wv) in window.iter_mut().zip(wrow) {
                                *a += v * wv;
                            }
                        }
                    }
                }
                let bv = bias.map_or(0.0, |b| b[o].to_f64());
                for (d, a) in dst.iter_mut().zip(acc.iter()) {
                    *d = T::from_f64(*a + bv);
                }
            },
        );
    out
}

/// `dW[o, i, ky, kx] = sum_{b, y, x} g[b, o, y, x] * input[b, i, y*s + ky, x*s + kx]`,
/// returned in `(o, i, kh, kw)` order. One task per `(o, i, ky)`.
fn weight_grad<T: Element>(g: &Tensor<T>, input: &Tensor<T>, kh: usize, kw: usize, s: usize) -> Vec<T> {
    let gs = g.shape();
    let is = input.shape();
    let (oc, ic) = (gs.channels, is.channels);
    let tasks: Vec<(usize, usize, usize)> = (0..oc)
        .flat_map(|o| (0..ic).flat_map(move |i| (0..kh).map(move |ky| (o, i, ky))))
        .collect();
    let rows: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(o, i, ky)| {
            let mut acc = vec![0f64; kw];
            for b in 0..gs.batch {
                for y in 0..gs.height {
                    let grow = &g.data()[gs.offset(b, o, y, 0)..][..gs.width];
                    let irow = &input.data()[is.offset(b, i, y * s + ky, 0)..][..is.width];
                    for (x, gv) in grow.iter().enumerate() {
                        let gv = gv.to_f64();
                        let window = &irow[x * s..x * s + kw];
                        for (a, v) in acc.iter_mut().zip(window) {
                            *a += gv * v.to_f64();
                        }
                    }
                }
            }
            acc
        })
        .collect();
    rows.into_iter().flatten().map(T::from_f64).collect()
}

pub(crate) fn channel_sums<T: Element>(g: &Tensor<T>) -> Vec<T> {
    let s = g.shape();
    (0..s.channels)
        .map(|c| {
            let mut acc = 0f64;
            for b in 0..s.batch {
                acc += g.plane(b, c).iter().map(|v| v.to_f64()).sum::<f64>();
            }
            T::from_f64(acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(b: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(b, c, h, w).unwrap()
    }

    #[test]
    fn ones_window_sums_to_nine() {
        let x = Tensor::<f32>::full(shape(1, 1, 3, 3), 1.0);
        let w = Tensor::<f32>::full(shape(1, 1, 3, 3), 1.0);
        let spec = ConvSpec::conv(3, 1, 1, 1);
        let y = conv2d_forward(&x, &w, Some(&[0.0]), &spec).unwrap();
        assert_eq!(y.shape(), shape(1, 1, 1, 1));
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn gigapixel_output_sizes() {
        let input = shape(1, 1, 16000, 64000);
        let down = ConvSpec::conv(8, 8, 1, 4).output_shape(input).unwrap();
        assert_eq!(down, shape(1, 4, 2000, 8000));
        let up = ConvSpec::tconv(8, 8, 4, 2).output_shape(down).unwrap();
        assert_eq!(up, shape(1, 2, 16000, 64000));
    }

    #[test]
    fn indivisible_extent_is_rejected() {
        let spec = ConvSpec::conv(5, 4, 1, 1);
        let err = spec.output_shape(shape(1, 1, 64, 65)).unwrap_err();
        assert!(matches!(err, Error::Indivisible { dim: "height", .. }), "{err}");
        let err = spec.output_shape(shape(1, 1, 65, 64)).unwrap_err();
        assert!(matches!(err, Error::Indivisible { dim: "width", .. }), "{err}");
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let spec = ConvSpec::conv(3, 1, 2, 1);
        let err = spec.output_shape(shape(1, 3, 8, 8)).unwrap_err();
        assert!(matches!(
            err,
            Error::ShapeMismatch { dim: "channels", expected: 2, actual: 3, .. }
        ));
    }

    #[test]
    fn kernel_smaller_than_stride_is_invalid() {
        assert!(ConvSpec::conv(2, 4, 1, 1).validate().is_err());
        assert!(ConvSpec::conv(1, 0, 1, 1).validate().is_err());
    }

    #[test]
    fn single_window_tconv_is_scaled_kernel() {
        let x = Tensor::<f64>::scalar(2.5);
        let k = Tensor::<f64>::from_fn(shape(1, 1, 3, 3), |_, _, y, x| (y * 3 + x) as f64 - 4.0);
        let spec = ConvSpec::tconv(3, 1, 1, 1);
        let y = tconv2d_forward(&x, &k, Some(&[0.0]), &spec).unwrap();
        let expect: Vec<f64> = k.data().iter().map(|v| v * 2.5).collect();
        assert_eq!(y.data(), &expect[..]);
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let spec = ConvSpec::conv(3, 2, 2, 3);
        let x = Tensor::<f64>::from_fn(shape(1, 2, 9, 7), |_, c, y, x| (c + y * x) as f64 * 0.1);
        let w = Tensor::<f64>::full(spec.weight_shape(), 0.3);
        let g = Tensor::<f64>::zeros(spec.output_shape(x.shape()).unwrap());
        let (gi, gw, gb) = conv2d_backward(&g, &x, &w, &spec).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));
        assert!(gb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_overlapping_windows_route_one_term_per_input() {
        // 4x4 input, 2x2 kernel, stride 2: every input pixel lies in exactly one window.
        let spec = ConvSpec::conv(2, 2, 1, 1);
        let x = Tensor::<f64>::zeros(shape(1, 1, 4, 4));
        let w = Tensor::<f64>::from_vec(shape(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = Tensor::<f64>::from_vec(shape(1, 1, 2, 2), vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let (gi, _, gb) = conv2d_backward(&g, &x, &w, &spec).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let gout = g.get(0, 0, y / 2, x / 2);
                let wv = w.get(0, 0, y % 2, x % 2);
                assert_eq!(gi.get(0, 0, y, x), gout * wv);
            }
        }
        assert_eq!(gb, vec![100.0]);
    }

    #[test]
    fn bias_presence_must_match_spec() {
        let spec = ConvSpec::conv(1, 1, 1, 1).without_bias();
        let x = Tensor::<f32>::zeros(shape(1, 1, 2, 2));
        let w = Tensor::<f32>::zeros(spec.weight_shape());
        assert!(conv2d_forward(&x, &w, Some(&[0.0]), &spec).is_err());
        assert!(conv2d_forward(&x, &w, None, &spec).is_ok());
        let with_bias = ConvSpec::conv(1, 1, 1, 1);
        assert!(conv2d_forward(&x, &w, None, &with_bias).is_err());
    }

    #[test]
    fn round_trip_sizes() {
        for (n, k, s) in [(64, 8, 8), (66, 4, 2), (17, 3, 2), (2000, 8, 8), (250, 8, 2)] {
            let m = conv_out_size(n, k, s).unwrap();
            assert_eq!(tconv_out_size(m, k, s), n);
        }
        assert_eq!(conv_out_size(7, 8, 8), None);
    }
}
