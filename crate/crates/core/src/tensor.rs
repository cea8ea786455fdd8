use std::fmt::{self, Debug};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type of an [`ActivationTensor`].
///
/// `f32` is the working precision; `f64` is used by the training simulator
/// and by oracle checks.
pub trait Real: Float + Debug + Default + Send + Sync + 'static {
    /// Tensor-file dtype tag.
    const DTYPE: u8;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: u8 = 0;
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn as_f32(self) -> f32 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const DTYPE: u8 = 1;
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Batch × sequence × channel dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub seq: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(batch: usize, seq: usize, channels: usize) -> Self {
        Self {
            batch,
            seq,
            channels,
        }
    }

    pub fn tokens(&self) -> usize {
        self.batch * self.seq
    }

    pub fn numel(&self) -> usize {
        self.batch * self.seq * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.seq == 0 || self.channels == 0 {
            return Err(Error::Shape(format!("all dimensions must be >= 1, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.batch, self.seq, self.channels)
    }
}

/// Dense row-major `B × S × C` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor<T: Real = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> ActivationTensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::new(shape, vec![T::zero(); shape.numel()])
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.batch {
            for s in 0..shape.seq {
                for c in 0..shape.channels {
                    data.push(f(b, s, c));
                }
            }
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, b: usize, s: usize, c: usize) -> T {
        self.data[(b * self.shape.seq + s) * self.shape.channels + c]
    }

    /// Channel vector of the token at flat index `token = b * S + s`.
    pub fn token(&self, token: usize) -> &[T] {
        let c = self.shape.channels;
        &self.data[token * c..(token + 1) * c]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.shape.channels)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::InvalidInput(format!("non-finite value at flat index {i}"))),
            None => Ok(()),
        }
    }

    pub fn cast<U: Real>(&self) -> ActivationTensor<U> {
        ActivationTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Euclidean norm, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `‖self − other‖₂ / ‖self‖₂`, or the absolute error when `self` is zero.
    pub fn relative_l2_error(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{} vs {}", self.shape, other.shape)));
        }
        let diff = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum::<f64>()
            .sqrt();
        let norm = self.l2_norm();
        Ok(if norm > 0.0 { diff / norm } else { diff })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dimension() {
        assert!(ActivationTensor::<f32>::zeros(Shape::new(0, 1, 1)).is_err());
        assert!(ActivationTensor::<f32>::new(Shape::new(1, 1, 2), vec![1.0]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = ActivationTensor::<f32>::from_fn(Shape::new(2, 3, 4), |b, s, c| {
            (b * 100 + s * 10 + c) as f32
        })
        .unwrap();
        assert_eq!(t.get(1, 2, 3), 123.0);
        assert_eq!(t.token(5), &[120.0, 121.0, 122.0, 123.0]);
    }

    #[test]
    fn detects_non_finite() {
        let t = ActivationTensor::<f32>::new(Shape::new(1, 1, 2), vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(t.ensure_finite(), Err(Error::InvalidInput(_))));
    }
}
