//! Channel-first image tensors.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// A `(channels, height, width)` array of finite reals, stored row-major
/// per channel.
///
/// Data images live nominally in `[-1, 1]`; noised latents are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::range("grid dimensions must be positive"));
        }
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "grid values",
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid values"));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    values.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, values)
    }

    /// Unit Gaussian noise of the given shape.
    pub fn gaussian(channels: usize, height: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        let values = rng::normal_vec(rng, channels * height * width, 1.0);
        Self::new(channels, height, width, values)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    pub fn ensure_same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    pub fn ensure_shape(&self, shape: (usize, usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                got: self.shape(),
            });
        }
        Ok(())
    }

    /// Builds a grid from values produced by crate-internal arithmetic on
    /// already-validated grids. Finite-ness is re-checked.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.channels, self.height, self.width, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v.clamp(lo, hi)).collect(),
            ..self.clone()
        }
    }

    pub fn mean_squared_difference(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let sum: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sum / self.values.len() as f64)
    }

    pub fn max_abs_difference(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_non_finite() {
        assert!(matches!(
            ImageGrid::new(1, 2, 2, vec![0.0; 3]),
            Err(Error::DimensionMismatch { expected: 4, got: 3, .. })
        ));
        assert_eq!(ImageGrid::new(1, 1, 2, vec![0.0, f64::NAN]), Err(Error::NonFinite("grid values")));
        assert!(ImageGrid::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn indexing_is_channel_first() {
        let g = ImageGrid::from_fn(2, 2, 3, |c, y, x| (c * 100 + y * 10 + x) as f64).unwrap();
        assert_eq!(g.get(1, 1, 2), 112.0);
        assert_eq!(g.values()[3], 10.0);
    }
}
