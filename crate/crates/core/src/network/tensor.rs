use crate::error::{Error, Result};
use crate::imaging::ImagePlane;

/// Dense `height x width x channels` array, stored channel-planar
/// (`c`, then `y`, then `x`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(
            channels > 0 && height > 0 && width > 0,
            "tensor dimensions must be positive: {channels}x{height}x{width}"
        );
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "tensor dimensions must be positive: {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Single-channel tensor from a 2-D row-major grid.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(1, h, w, rows.concat())
    }

    pub fn from_plane(plane: &ImagePlane) -> Self {
        Self {
            channels: 1,
            height: plane.height(),
            width: plane.width(),
            data: plane.values().to_vec(),
        }
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

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Feature vector across channels at one spatial position.
    pub fn column(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }

    /// Spatial sub-window `[y0, y0+h) x [x0, x0+w)` over all channels.
    pub fn window(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "window {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                let src = (c * self.height + y0 + y) * self.width + x0;
                let dst = (c * h + y) * w;
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        Ok(out)
    }

    /// Zero-pads `p` cells on every spatial side.
    pub fn zero_pad(&self, p: usize) -> Tensor {
        if p == 0 {
            return self.clone();
        }
        let (h, w) = (self.height + 2 * p, self.width + 2 * p);
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..self.height {
                let src = (c * self.height + y) * self.width;
                let dst = (c * h + y + p) * w + p;
                out.data[dst..dst + self.width]
                    .copy_from_slice(&self.data[src..src + self.width]);
            }
        }
        out
    }

    /// Inverse of [`Tensor::zero_pad`]: drops `p` cells on every side.
    pub fn crop_border(&self, p: usize) -> Result<Tensor> {
        if p == 0 {
            return Ok(self.clone());
        }
        if self.height <= 2 * p || self.width <= 2 * p {
            return Err(Error::Geometry(format!(
                "cannot crop {p} cells from a {}x{} map",
                self.height, self.width
            )));
        }
        self.window(p, p, self.height - 2 * p, self.width - 2 * p)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_then_crop_is_identity() {
        let t = Tensor::from_vec(2, 2, 3, (0..12).map(f64::from).collect()).unwrap();
        let padded = t.zero_pad(2);
        assert_eq!(padded.shape(), (2, 6, 7));
        assert_eq!(padded.get(1, 2, 2), t.get(1, 0, 0));
        assert_eq!(padded.get(1, 0, 0), 0.0);
        assert_eq!(padded.crop_border(2).unwrap(), t);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::from_vec(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(0, 2, 2, vec![]).is_err());
        assert!(Tensor::from_rows(&[&[1.0, 2.0], &[3.0]]).is_err());
    }
}
