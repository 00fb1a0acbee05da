//! Image, mask and salience arrays, bilinear resizing with its exact adjoint,
//! and lossless persistence.
//!
//! All spatial arrays are row-major. Multi-channel data is channel-interleaved,
//! so element `(row, col, ch)` of an `H×W×C` array lives at
//! `(row * W + col) * C + ch`.

mod io;
mod resize;

pub use io::{
    load_mask_png, load_png, load_salience_raw, save_delta_png, save_mask_png, save_png,
    save_salience_png, save_salience_raw,
};
pub use resize::{resize_bilinear, resize_bilinear_adjoint, resize_tensor};

use crate::error::{Error, Result};

/// An unconstrained `H×W×C` array of reals.
///
/// Used for gradients, perturbations and noisy model inputs, which may leave
/// the `[0,1]` intensity range.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Mirrors the array left to right.
    pub fn flip_horizontal(&self) -> Tensor {
        let mut out = Tensor::zeros(self.height, self.width, self.channels);
        let c = self.channels;
        for row in 0..self.height {
            for col in 0..self.width {
                let src = self.index(row, self.width - 1 - col, 0);
                let dst = self.index(row, col, 0);
                out.data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        out
    }

    /// Clamps every element into `[0,1]`.
    pub fn clamp_to_image(&self) -> Image {
        Image {
            inner: Tensor {
                height: self.height,
                width: self.width,
                channels: self.channels,
                data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            },
        }
    }
}

/// An `H×W×C` image with every intensity in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    inner: Tensor,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        let inner = Tensor::from_vec(height, width, channels, data)?;
        if let Some(bad) = inner.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {bad} outside [0,1]")));
        }
        Ok(Self { inner })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.inner
    }

    pub fn into_tensor(self) -> Tensor {
        self.inner
    }

    pub fn height(&self) -> usize {
        self.inner.height
    }

    pub fn width(&self) -> usize {
        self.inner.width
    }

    pub fn channels(&self) -> usize {
        self.inner.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.inner.get(row, col, ch)
    }
}

/// A binary `H×W` mask of perturbable pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "mask length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True if `self` sets every pixel `other` sets.
    pub fn contains(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| a || !b)
    }
}

/// A non-negative `H×W` per-pixel sensitivity map.
#[derive(Debug, Clone, PartialEq)]
pub struct SalienceMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SalienceMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "salience length {} does not match {height}x{width}",
                data.len()
            )));
        }
        // `!(v >= 0)` also rejects NaN.
        if let Some(bad) = data.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::invalid(format!("negative salience value {bad}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Collapses a gradient to one value per pixel: the largest absolute value
    /// across channels.
    pub fn from_gradient(grad: &Tensor) -> Self {
        let c = grad.channels();
        let data = grad
            .data()
            .chunks_exact(c)
            .map(|px| px.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .collect();
        Self {
            height: grad.height(),
            width: grad.width(),
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range_and_bad_lengths() {
        assert!(Image::new(1, 2, 1, vec![0.0, 1.5]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.0]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn salience_rejects_negative_and_nan() {
        assert!(SalienceMap::new(1, 1, vec![-1e-9]).is_err());
        assert!(SalienceMap::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn channel_reduction_takes_max_abs() {
        let g = Tensor::from_vec(1, 2, 3, vec![0.1, -0.7, 0.3, 0.0, 0.0, -0.0]).unwrap();
        let s = SalienceMap::from_gradient(&g);
        assert_eq!(s.data(), &[0.7, 0.0]);
    }

    #[test]
    fn flip_is_an_involution() {
        let t = Tensor::from_vec(2, 3, 1, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let f = t.flip_horizontal();
        assert_eq!(f.data(), &[3., 2., 1., 6., 5., 4.]);
        assert_eq!(f.flip_horizontal(), t);
    }
}
