//! Minimal NCHW tensor plumbing shared by the network layers.
//!
//! Training runs in f32; gradient checking re-runs the same layer code in
//! f64, so everything numeric is generic over [`Scalar`].

use crate::error::{Error, Result};
use crate::grid::TactileImage;

/// Element type for network math: f32 in production, f64 under the
/// finite-difference oracle.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn mul_add(self, a: Self, b: Self) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn zero() -> Self {
                0.0
            }
            fn one() -> Self {
                1.0
            }
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn mul_add(self, a: Self, b: Self) -> Self {
                <$t>::mul_add(self, a, b)
            }
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense batch tensor, laid out sample-major then channel, row, column.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor { n, c, h, w, data: vec![T::zero(); n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::InvalidArgument(format!(
                "tensor data length {} does not match {n}x{c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Tensor { n, c, h, w, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// One channel plane of one sample.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.h * self.w;
        let base = (n * self.c + c) * hw;
        &self.data[base..base + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.h * self.w;
        let base = (n * self.c + c) * hw;
        &mut self.data[base..base + hw]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Normalized pixel coordinates, the two extra input channels: channel 0
/// runs −1 → 1 left to right, channel 1 runs −1 → 1 top to bottom. A
/// single-pixel axis sits at the lower bound −1.
pub fn coordinate_embedding(rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let axis = |i: usize, len: usize| -> f64 {
        if len <= 1 {
            -1.0
        } else {
            2.0 * i as f64 / (len - 1) as f64 - 1.0
        }
    };
    let mut x = Vec::with_capacity(rows * cols);
    let mut y = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            x.push(axis(c, cols));
            y.push(axis(r, rows));
        }
    }
    (x, y)
}

/// Stacks images into the 5-channel network input: RGB scaled to [0, 1]
/// plus the coordinate embedding.
pub fn assemble_input<T: Scalar>(images: &[&TactileImage]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return Err(Error::InvalidArgument("input batch is empty".into()));
    };
    let (h, w) = (first.rows, first.cols);
    let (ex, ey) = coordinate_embedding(h, w);
    let mut t = Tensor::zeros(images.len(), 5, h, w);
    for (i, img) in images.iter().enumerate() {
        if img.rows != h || img.cols != w {
            return Err(Error::InvalidArgument(format!(
                "image {i} is {}x{} but the batch started {h}x{w}",
                img.rows, img.cols
            )));
        }
        for ch in 0..3 {
            let plane = t.plane_mut(i, ch);
            for (p, px) in plane.iter_mut().zip(img.pixels.chunks_exact(3)) {
                *p = T::from_f64(f64::from(px[ch]) / 255.0);
            }
        }
        for (p, &v) in t.plane_mut(i, 3).iter_mut().zip(&ex) {
            *p = T::from_f64(v);
        }
        for (p, &v) in t.plane_mut(i, 4).iter_mut().zip(&ey) {
            *p = T::from_f64(v);
        }
    }
    Ok(t)
}
