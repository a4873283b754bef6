//! Rank-4 tensors.
//!
//! Elements are stored contiguously in batch-major order: batch, then
//! channel, then row, then column. Serialized tensors use the same order, so
//! a tensor written on one machine reads back bit-identically on any other.

use std::fmt;

use crate::error::{Error, Result};

/// Storage element of a [`Tensor`].
///
/// `f32` is the training default; `f64` is used for gradient checking.
/// Reductions inside kernels always accumulate in `f64` regardless of the
/// storage type.
pub trait Element: Copy + Default + PartialOrd + Send + Sync + fmt::Debug + 'static {
    /// Bytes per element.
    const WIDTH: usize;
    /// Short type name used in file headers (`f32`, `f64`).
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    /// Decodes one element from exactly `WIDTH` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const WIDTH: usize = 4;
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const WIDTH: usize = 8;
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// (batch, channels, height, width); every entry is at least 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let dims = [batch, channels, height, width];
        if dims.contains(&0) {
            return Err(Error::InvalidShape(dims));
        }
        Ok(Shape {
            batch,
            channels,
            height,
            width,
        })
    }

    /// The 1×1×1×1 shape of a scalar.
    pub const SCALAR: Shape = Shape {
        batch: 1,
        channels: 1,
        height: 1,
        width: 1,
    };

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    /// Flat offset of element (b, c, y, x).
    #[inline]
    pub fn offset(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.channels + c) * self.height + y) * self.width + x
    }

    pub fn is_scalar(&self) -> bool {
        *self == Shape::SCALAR
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &T::NAME)
            .field("head", &preview)
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::default(); shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::SCALAR,
            data: vec![value],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ElementCount {
                shape: shape.dims(),
                expected: shape.numel(),
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor by evaluating `f(b, c, y, x)` in storage order.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Bytes held by the element buffer.
    pub fn bytes(&self) -> usize {
        self.data.len() * T::WIDTH
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.offset(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.shape.offset(b, c, y, x);
        self.data[i] = v;
    }

    /// One (batch, channel) plane in row-major order.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Sum of all elements, accumulated in `f64` in storage order.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    /// Inner product with a tensor of the same shape.
    pub fn dot(&self, other: &Tensor<T>) -> Result<f64> {
        ensure_same_shape("dot", self.shape, other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.to_f64() * b.to_f64())
            .sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        ensure_same_shape("max_abs_diff", self.shape, other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Adds `other` elementwise into `self`, summing in `f64`.
    pub fn accumulate(&mut self, other: &Tensor<T>) -> Result<()> {
        ensure_same_shape("accumulate", self.shape, other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = T::from_f64(a.to_f64() + b.to_f64());
        }
        Ok(())
    }
}

pub(crate) fn ensure_same_shape(op: &'static str, expected: Shape, actual: Shape) -> Result<()> {
    let names = ["batch", "channels", "height", "width"];
    for ((e, a), dim) in expected.dims().into_iter().zip(actual.dims()).zip(names) {
        if e != a {
            return Err(Error::ShapeMismatch {
                op,
                dim,
                expected: e,
                actual: a,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            Shape::new(1, 0, 4, 4),
            Err(Error::InvalidShape([1, 0, 4, 4]))
        ));
    }

    #[test]
    fn element_count_checked() {
        let shape = Shape::new(1, 2, 3, 4).unwrap();
        assert_eq!(shape.numel(), 24);
        assert!(Tensor::<f32>::from_vec(shape, vec![0.0; 23]).is_err());
        assert!(Tensor::<f32>::from_vec(shape, vec![0.0; 24]).is_ok());
    }

    #[test]
    fn storage_order_is_batch_channel_row_column() {
        let shape = Shape::new(2, 3, 4, 5).unwrap();
        let t = Tensor::<f64>::from_fn(shape, |b, c, y, x| {
            (b * 1000 + c * 100 + y * 10 + x) as f64
        });
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[5], 10.0);
        assert_eq!(t.data()[20], 100.0);
        assert_eq!(t.data()[60], 1000.0);
        assert_eq!(t.get(1, 2, 3, 4), 1234.0);
        assert_eq!(t.plane(1, 2)[0], 1200.0);
    }

    #[test]
    fn bytes_track_element_width() {
        let shape = Shape::new(1, 1, 16, 16).unwrap();
        assert_eq!(Tensor::<f32>::zeros(shape).bytes(), 1024);
        assert_eq!(Tensor::<f64>::zeros(shape).bytes(), 2048);
    }

    #[test]
    fn shape_mismatch_names_dimension() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 4).unwrap());
        let b = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 5).unwrap());
        match a.dot(&b) {
            Err(Error::ShapeMismatch { dim, .. }) => assert_eq!(dim, "width"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
