//! Explicit operator matrices of single-channel convolution layers.
//!
//! Vectorization is row-major (`vec(x)[y * W + x] = x[y][x]`). The matrices
//! are assembled from index arithmetic alone and serve as a reference for
//! the forward passes; they are only practical for small sizes.

use super::layers::{ConvKind, ConvLayer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self
            .data
            .chunks(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `(row, col)` positions of the structurally nonzero entries.
    pub fn nonzero_pattern(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) != 0.0 {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// Operator matrix of a single-channel layer acting on an
/// `input_h x input_w` map: the convolution matrix `C` (output rows, input
/// columns) or the transposed-convolution matrix `H`.
pub fn as_matrix(layer: &ConvLayer, input_h: usize, input_w: usize) -> Result<DenseMatrix> {
    if layer.in_channels != 1 || layer.out_channels != 1 {
        return Err(Error::Unsupported(format!(
            "operator matrix of a {}->{} channel layer",
            layer.in_channels, layer.out_channels
        )));
    }
    let (k, s, p) = (layer.kernel, layer.stride, layer.padding as isize);
    let oh = layer.output_size(input_h)?;
    let ow = layer.output_size(input_w)?;
    let mut m = DenseMatrix::zeros(oh * ow, input_h * input_w);
    let weight = |ky: usize, kx: usize| layer.weights[ky * k + kx];
    match layer.kind {
        ConvKind::Conv => {
            // output (oy, ox) reads input (oy*s + ky - p, ox*s + kx - p)
            for oy in 0..oh {
                for ox in 0..ow {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as isize - p;
                            let ix = (ox * s + kx) as isize - p;
                            if (0..input_h as isize).contains(&iy) && (0..input_w as isize).contains(&ix) {
                                m.add(oy * ow + ox, iy as usize * input_w + ix as usize, weight(ky, kx));
                            }
                        }
                    }
                }
            }
        }
        ConvKind::Deconv => {
            // input (iy, ix) writes output (iy*s + ky - p, ix*s + kx - p)
            for iy in 0..input_h {
                for ix in 0..input_w {
                    for ky in 0..k {
                        for kx in 0..k {
                            let oy = (iy * s + ky) as isize - p;
                            let ox = (ix * s + kx) as isize - p;
                            if (0..oh as isize).contains(&oy) && (0..ow as isize).contains(&ox) {
                                m.add(oy as usize * ow + ox as usize, iy * input_w + ix, weight(ky, kx));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_2x2_on_3x3_has_the_banded_layout() {
        let layer = ConvLayer::single_channel(ConvKind::Conv, &[11.0, 12.0, 21.0, 22.0], 1, 0).unwrap();
        let c = as_matrix(&layer, 3, 3).unwrap();
        assert_eq!((c.rows, c.cols), (4, 9));
        #[rustfmt::skip]
        let expected = [
            11.0, 12.0, 0.0, 21.0, 22.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 11.0, 12.0, 0.0, 21.0, 22.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 11.0, 12.0, 0.0, 21.0, 22.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 11.0, 12.0, 0.0, 21.0, 22.0,
        ];
        assert_eq!(c.data, expected);
    }

    #[test]
    fn deconv_matrix_is_conv_transpose() {
        let kernel = [1.0, 2.0, 3.0, 4.0];
        let conv = ConvLayer::single_channel(ConvKind::Conv, &kernel, 1, 0).unwrap();
        let deconv = ConvLayer::single_channel(ConvKind::Deconv, &kernel, 1, 0).unwrap();
        let h = as_matrix(&deconv, 2, 2).unwrap();
        assert_eq!((h.rows, h.cols), (9, 4));
        assert_eq!(h, as_matrix(&conv, 3, 3).unwrap().transpose());
    }

    #[test]
    fn zero_kernel_gives_zero_matrix() {
        let layer = ConvLayer::single_channel(ConvKind::Deconv, &[0.0; 9], 1, 0).unwrap();
        assert!(as_matrix(&layer, 3, 3).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn multichannel_is_unsupported() {
        let layer = ConvLayer::new(ConvKind::Conv, 2, 1, 0, 2, 1, false).unwrap();
        assert!(matches!(as_matrix(&layer, 3, 3), Err(Error::Unsupported(_))));
    }
}
