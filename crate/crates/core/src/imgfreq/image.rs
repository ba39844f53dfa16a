use crate::error::{Error, Result};

/// A planar floating-point image: `channels` planes of `height x width`
/// values, each plane stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite pixel value at index {pos}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty image");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds an image from a function of `(channel, row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty image");
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub(crate) fn from_raw_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
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

    /// `(height, width, channels)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ImageTensor) -> Result<ImageTensor> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &ImageTensor) -> Result<ImageTensor> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &ImageTensor, f: impl Fn(f64, f64) -> f64) -> Result<ImageTensor> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "image dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_raw_unchecked(
            self.height,
            self.width,
            self.channels,
            data,
        ))
    }

    /// Sum of absolute differences between horizontally and vertically
    /// adjacent pixels, over all channels.
    pub fn total_variation(&self) -> f64 {
        let mut tv = 0.0;
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    let v = self.get(c, y, x);
                    if x + 1 < self.width {
                        tv += (self.get(c, y, x + 1) - v).abs();
                    }
                    if y + 1 < self.height {
                        tv += (self.get(c, y + 1, x) - v).abs();
                    }
                }
            }
        }
        tv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_nan() {
        assert!(ImageTensor::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ImageTensor::new(0, 2, 1, vec![]).is_err());
        assert!(ImageTensor::new(1, 2, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn planar_indexing() {
        let img = ImageTensor::from_fn(2, 3, 2, |c, y, x| (c * 100 + y * 10 + x) as f64);
        assert_eq!(img.get(1, 1, 2), 112.0);
        assert_eq!(img.plane(1)[0], 100.0);
    }
}
