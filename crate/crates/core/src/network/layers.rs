//! Convolution, transposed convolution, batch normalization and ReLU,
//! forward and backward.
//!
//! Convolution weights are stored `(out, in, row, col)` for both kinds.
//! The transposed convolution is the adjoint of the valid cross-correlation
//! with the same weights, stride and padding, so its operator matrix is the
//! transpose of the matching convolution's matrix.

use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Output size of a convolution: `(I - k + 2p) / s + 1`.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Geometry(format!(
            "kernel ({kernel}) and stride ({stride}) must be positive"
        )));
    }
    let span = (input + 2 * padding) as i64 - kernel as i64;
    if span < 0 {
        return Err(Error::Geometry(format!(
            "kernel {kernel} does not fit input {input} with padding {padding}"
        )));
    }
    if span as usize % stride != 0 {
        return Err(Error::Geometry(format!(
            "(I - k + 2p) / s = ({input} - {kernel} + {}) / {stride} is not integral",
            2 * padding
        )));
    }
    Ok(span as usize / stride + 1)
}

/// Output size of a transposed convolution: `s (I - 1) - 2p + k`.
pub fn deconv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 || input == 0 {
        return Err(Error::Geometry(format!(
            "kernel ({kernel}), stride ({stride}) and input ({input}) must be positive"
        )));
    }
    let size = (stride * (input - 1) + kernel) as i64 - 2 * padding as i64;
    if size <= 0 {
        return Err(Error::Geometry(format!(
            "transposed convolution of size {input} with k={kernel}, s={stride}, p={padding} is empty"
        )));
    }
    Ok(size as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Conv,
    Deconv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kind: ConvKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(out, in, row, col)` row-major.
    pub weights: Vec<f64>,
    /// Absent when batch normalization follows.
    pub bias: Option<Vec<f64>>,
}

impl ConvLayer {
    pub fn new(
        kind: ConvKind,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
        with_bias: bool,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidInput(format!(
                "layer needs k, s, channels >= 1 (k={kernel}, s={stride}, in={in_channels}, out={out_channels})"
            )));
        }
        Ok(Self {
            kind,
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: with_bias.then(|| vec![0.0; out_channels]),
        })
    }

    /// Single-channel layer with the given `k x k` kernel and no bias.
    pub fn single_channel(kind: ConvKind, kernel: &[f64], stride: usize, padding: usize) -> Result<Self> {
        let k = (kernel.len() as f64).sqrt() as usize;
        if k * k != kernel.len() || k == 0 {
            return Err(Error::Shape(format!(
                "{} kernel values do not form a square",
                kernel.len()
            )));
        }
        let mut layer = Self::new(kind, k, stride, padding, 1, 1, false)?;
        layer.weights.copy_from_slice(kernel);
        Ok(layer)
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        let k = self.kernel;
        self.weights[((o * self.in_channels + i) * k + ky) * k + kx]
    }

    pub fn output_size(&self, input: usize) -> Result<usize> {
        match self.kind {
            ConvKind::Conv => conv_output_size(input, self.kernel, self.stride, self.padding),
            ConvKind::Deconv => deconv_output_size(input, self.kernel, self.stride, self.padding),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "layer expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self.kind {
            ConvKind::Conv => conv_forward(x, self),
            ConvKind::Deconv => deconv_forward(x, self),
        }
    }

    /// Gradients w.r.t. the layer input, weights and bias given the
    /// upstream gradient `dy` and the forward input `x`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Result<ConvGrads> {
        match self.kind {
            ConvKind::Conv => conv_backward(x, self, dy),
            ConvKind::Deconv => deconv_backward(x, self, dy),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// Patch matrix of `src`: row `(c, ky, kx)`, column `(oy, ox)` holds
/// `src[c, oy*s + ky, ox*s + kx]`.
fn im2col(src: &Tensor, k: usize, stride: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (ch, _, iw) = src.shape();
    let (p, kk) = (oh * ow, k * k);
    let mut cols = vec![0.0; ch * kk * p];
    cols.par_chunks_mut(p).enumerate().for_each(|(row, dst)| {
        let (c, r) = (row / kk, row % kk);
        let (ky, kx) = (r / k, r % k);
        let plane = src.plane(c);
        for oy in 0..oh {
            let s_row = &plane[(oy * stride + ky) * iw..];
            let d = &mut dst[oy * ow..][..ow];
            if stride == 1 {
                d.copy_from_slice(&s_row[kx..kx + ow]);
            } else {
                for (ox, v) in d.iter_mut().enumerate() {
                    *v = s_row[ox * stride + kx];
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix onto a `ch x h x w`
/// grid.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], ch: usize, h: usize, w: usize, k: usize, stride: usize, oh: usize, ow: usize) -> Tensor {
    let (p, kk) = (oh * ow, k * k);
    let mut out = Tensor::zeros(ch, h, w);
    out.data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(c, plane)| {
            for r in 0..kk {
                let (ky, kx) = (r / k, r % k);
                let src = &cols[(c * kk + r) * p..][..p];
                for oy in 0..oh {
                    let d = &mut plane[(oy * stride + ky) * w..];
                    let s = &src[oy * ow..][..ow];
                    if stride == 1 {
                        for (a, b) in d[kx..kx + ow].iter_mut().zip(s) {
                            *a += b;
                        }
                    } else {
                        for (ox, b) in s.iter().enumerate() {
                            d[ox * stride + kx] += b;
                        }
                    }
                }
            }
        });
    out
}

/// Strided read-only matrix view: element `(r, c)` is `data[r*rs + c*cs]`.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    fn new(data: &'a [f64], rs: usize, cs: usize) -> Self {
        Self { data, rs, cs }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0 || cols == 0 || (rows - 1) * self.rs + (cols - 1) * self.cs < self.data.len()
    }
}

/// `c = a · b + beta c` with `a: m x n_inner`, `b: n_inner x n`, and `c`
/// row-major `m x n`.
fn gemm(m: usize, inner: usize, n: usize, a: View, b: View, beta: f64, c: &mut [f64]) {
    assert!(a.fits(m, inner) && b.fits(inner, n) && c.len() >= m * n, "gemm operands out of bounds");
    // SAFETY: the assertion above keeps every strided access inside the
    // borrowed slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            inner,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_bias(out: &mut Tensor, bias: Option<&Vec<f64>>) {
    if let Some(bias) = bias {
        let n = out.height() * out.width();
        for (plane, b) in out.data_mut().chunks_mut(n).zip(bias) {
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad(dy: &Tensor, layer: &ConvLayer) -> Option<Vec<f64>> {
    layer.bias.as_ref().map(|_| {
        let n = dy.height() * dy.width();
        dy.data().chunks(n).map(|p| p.iter().sum()).collect()
    })
}

/// Valid cross-correlation with zero padding `p` and stride `s`.
pub fn conv_forward(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    layer.check_input(x)?;
    let (s, k) = (layer.stride, layer.kernel);
    let oh = conv_output_size(x.height(), k, s, layer.padding)?;
    let ow = conv_output_size(x.width(), k, s, layer.padding)?;
    let padded = x.zero_pad(layer.padding);
    let cols = im2col(&padded, k, s, oh, ow);
    let (p, inner) = (oh * ow, layer.in_channels * k * k);
    let mut out = Tensor::zeros(layer.out_channels, oh, ow);
    gemm(
        layer.out_channels,
        inner,
        p,
        View::new(&layer.weights, inner, 1),
        View::new(&cols, p, 1),
        0.0,
        out.data_mut(),
    );
    add_bias(&mut out, layer.bias.as_ref());
    Ok(out)
}

/// Per-output-channel patch matrices of a transposed convolution:
/// block `o` (`k*k x P`) holds `W(o, ., ky, kx) · x`.
fn deconv_columns(x: &Tensor, layer: &ConvLayer) -> Vec<f64> {
    let (cin, kk) = (layer.in_channels, layer.kernel * layer.kernel);
    let p = x.height() * x.width();
    let mut cols = vec![0.0; layer.out_channels * kk * p];
    cols.par_chunks_mut(kk * p).enumerate().for_each(|(o, block)| {
        let a = View::new(&layer.weights[o * cin * kk..][..cin * kk], 1, kk);
        gemm(kk, cin, p, a, View::new(x.data(), p, 1), 0.0, block);
    });
    cols
}

/// Transposed convolution: output size `s (I - 1) - 2p + k` per axis.
pub fn deconv_forward(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    layer.check_input(x)?;
    let oh = deconv_output_size(x.height(), layer.kernel, layer.stride, layer.padding)?;
    let ow = deconv_output_size(x.width(), layer.kernel, layer.stride, layer.padding)?;
    let (s, k) = (layer.stride, layer.kernel);
    let full_h = s * (x.height() - 1) + k;
    let full_w = s * (x.width() - 1) + k;
    let cols = deconv_columns(x, layer);
    let full = col2im(&cols, layer.out_channels, full_h, full_w, k, s, x.height(), x.width());
    let mut out = full.crop_border(layer.padding)?;
    debug_assert_eq!((out.height(), out.width()), (oh, ow));
    add_bias(&mut out, layer.bias.as_ref());
    Ok(out)
}

fn check_grad_shape(dy: &Tensor, expected: (usize, usize, usize)) -> Result<()> {
    if dy.shape() != expected {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match layer output {:?}",
            dy.shape(),
            expected
        )));
    }
    Ok(())
}

fn conv_backward(x: &Tensor, layer: &ConvLayer, dy: &Tensor) -> Result<ConvGrads> {
    layer.check_input(x)?;
    let (s, k, p) = (layer.stride, layer.kernel, layer.padding);
    let oh = conv_output_size(x.height(), k, s, p)?;
    let ow = conv_output_size(x.width(), k, s, p)?;
    check_grad_shape(dy, (layer.out_channels, oh, ow))?;
    let padded = x.zero_pad(p);
    let cols = im2col(&padded, k, s, oh, ow);
    let (np, inner, cout) = (oh * ow, layer.in_channels * k * k, layer.out_channels);

    let mut weights = vec![0.0; cout * inner];
    gemm(cout, np, inner, View::new(dy.data(), np, 1), View::new(&cols, 1, np), 0.0, &mut weights);

    let mut d_cols = vec![0.0; inner * np];
    gemm(inner, cout, np, View::new(&layer.weights, 1, inner), View::new(dy.data(), np, 1), 0.0, &mut d_cols);
    let d_padded = col2im(&d_cols, layer.in_channels, padded.height(), padded.width(), k, s, oh, ow);
    Ok(ConvGrads {
        input: d_padded.crop_border(p)?,
        weights,
        bias: bias_grad(dy, layer),
    })
}

fn deconv_backward(x: &Tensor, layer: &ConvLayer, dy: &Tensor) -> Result<ConvGrads> {
    layer.check_input(x)?;
    let (s, k, p) = (layer.stride, layer.kernel, layer.padding);
    let oh = deconv_output_size(x.height(), k, s, p)?;
    let ow = deconv_output_size(x.width(), k, s, p)?;
    check_grad_shape(dy, (layer.out_channels, oh, ow))?;
    let dy_full = dy.zero_pad(p);
    let (ih, iw) = (x.height(), x.width());
    let (np, kk, cin) = (ih * iw, k * k, layer.in_channels);
    let d_cols = im2col(&dy_full, k, s, ih, iw);

    let mut input = Tensor::zeros(cin, ih, iw);
    let mut weights = vec![0.0; layer.weights.len()];
    for o in 0..layer.out_channels {
        let block = &d_cols[o * kk * np..][..kk * np];
        let w_o = &layer.weights[o * cin * kk..][..cin * kk];
        gemm(cin, kk, np, View::new(w_o, kk, 1), View::new(block, np, 1), 1.0, input.data_mut());
        let g_o = &mut weights[o * cin * kk..][..cin * kk];
        gemm(cin, np, kk, View::new(x.data(), np, 1), View::new(block, 1, np), 0.0, g_o);
    }
    Ok(ConvGrads {
        input,
        weights,
        bias: bias_grad(dy, layer),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm over {} channels got {}",
                self.channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    /// Inference mode: normalizes with the running statistics.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.clone();
        let n = x.height() * x.width();
        for (c, plane) in out.data_mut().chunks_mut(n).enumerate() {
            let scale = self.gamma[c] / (self.running_var[c] + self.eps).sqrt();
            let shift = self.beta[c] - self.running_mean[c] * scale;
            plane.iter_mut().for_each(|v| *v = *v * scale + shift);
        }
        Ok(out)
    }

    /// Training mode: normalizes every channel with the statistics of the
    /// whole batch (all samples and spatial positions).
    pub fn forward_train(&self, batch: &[Tensor]) -> Result<(Vec<Tensor>, BatchNormTrace)> {
        let first = batch
            .first()
            .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        for x in batch {
            self.check(x)?;
            if x.shape() != first.shape() {
                return Err(Error::Shape("batch members differ in shape".into()));
            }
        }
        let channels = self.channels();
        let n = first.height() * first.width();
        let count = (n * batch.len()) as f64;
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for c in 0..channels {
            let m = batch.iter().map(|x| x.plane(c).iter().sum::<f64>()).sum::<f64>() / count;
            let v = batch
                .iter()
                .map(|x| x.plane(c).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                .sum::<f64>()
                / count;
            mean[c] = m;
            var[c] = v;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut normalized = Vec::with_capacity(batch.len());
        let mut outputs = Vec::with_capacity(batch.len());
        for x in batch {
            let mut xh = x.clone();
            for (c, plane) in xh.data_mut().chunks_mut(n).enumerate() {
                plane.iter_mut().for_each(|v| *v = (*v - mean[c]) * inv_std[c]);
            }
            let mut y = xh.clone();
            for (c, plane) in y.data_mut().chunks_mut(n).enumerate() {
                plane
                    .iter_mut()
                    .for_each(|v| *v = *v * self.gamma[c] + self.beta[c]);
            }
            normalized.push(xh);
            outputs.push(y);
        }
        Ok((
            outputs,
            BatchNormTrace {
                normalized,
                inv_std,
                mean,
                var,
                count: count as usize,
            },
        ))
    }

    /// Folds batch statistics into the running estimates
    /// (`running = momentum * running + (1 - momentum) * batch`, unbiased variance).
    pub fn update_running(&mut self, trace: &BatchNormTrace) {
        let m = self.momentum;
        let unbias = if trace.count > 1 {
            trace.count as f64 / (trace.count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.channels() {
            self.running_mean[c] = m * self.running_mean[c] + (1.0 - m) * trace.mean[c];
            self.running_var[c] = m * self.running_var[c] + (1.0 - m) * trace.var[c] * unbias;
        }
    }

    /// Returns (input gradients, dgamma, dbeta).
    pub fn backward(
        &self,
        trace: &BatchNormTrace,
        dy: &[Tensor],
    ) -> Result<(Vec<Tensor>, Vec<f64>, Vec<f64>)> {
        if dy.len() != trace.normalized.len() {
            return Err(Error::Shape("gradient batch size mismatch".into()));
        }
        let channels = self.channels();
        let count = trace.count as f64;
        let mut dgamma = vec![0.0; channels];
        let mut dbeta = vec![0.0; channels];
        for (g, xh) in dy.iter().zip(&trace.normalized) {
            for c in 0..channels {
                let (gp, xp) = (g.plane(c), xh.plane(c));
                dbeta[c] += gp.iter().sum::<f64>();
                dgamma[c] += gp.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let mut dx = Vec::with_capacity(dy.len());
        for (g, xh) in dy.iter().zip(&trace.normalized) {
            let mut out = g.clone();
            let n = g.height() * g.width();
            for (c, plane) in out.data_mut().chunks_mut(n).enumerate() {
                let scale = self.gamma[c] * trace.inv_std[c];
                let mean_dy = dbeta[c] / count;
                let mean_dy_xh = dgamma[c] / count;
                let xp = xh.plane(c);
                for (v, xhv) in plane.iter_mut().zip(xp) {
                    *v = scale * (*v - mean_dy - xhv * mean_dy_xh);
                }
            }
            dx.push(out);
        }
        Ok((dx, dgamma, dbeta))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormTrace {
    normalized: Vec<Tensor>,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    count: usize,
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient through ReLU given its forward output.
pub fn relu_backward(output: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (g, y) in dx.data_mut().iter_mut().zip(output.data()) {
        if *y <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}


#[cfg(test)]
mod linear_oracle {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_ints(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-4..=4) as f64).collect()
    }

    /// Direct-loop forward pass; both layer kinds are written as scatters
    /// or gathers over explicit coordinates.
    fn direct(x: &Tensor, l: &ConvLayer) -> Tensor {
        let (k, s, p) = (l.kernel, l.stride, l.padding as i64);
        let oh = l.output_size(x.height()).unwrap();
        let ow = l.output_size(x.width()).unwrap();
        let mut out = Tensor::zeros(l.out_channels, oh, ow);
        for o in 0..l.out_channels {
            for i in 0..l.in_channels {
                for ky in 0..k {
                    for kx in 0..k {
                        let w = l.weight(o, i, ky, kx);
                        match l.kind {
                            ConvKind::Conv => {
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let iy = (oy * s + ky) as i64 - p;
                                        let ix = (ox * s + kx) as i64 - p;
                                        if iy >= 0 && ix >= 0 && (iy as usize) < x.height() && (ix as usize) < x.width() {
                                            let v = out.get(o, oy, ox) + w * x.get(i, iy as usize, ix as usize);
                                            out.set(o, oy, ox, v);
                                        }
                                    }
                                }
                            }
                            ConvKind::Deconv => {
                                for iy in 0..x.height() {
                                    for ix in 0..x.width() {
                                        let oy = (iy * s + ky) as i64 - p;
                                        let ox = (ix * s + kx) as i64 - p;
                                        if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                            let (oy, ox) = (oy as usize, ox as usize);
                                            out.set(o, oy, ox, out.get(o, oy, ox) + w * x.get(i, iy, ix));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum()
    }

    #[test]
    fn forward_and_backward_match_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..40 {
            let kind = if case % 2 == 0 { ConvKind::Conv } else { ConvKind::Deconv };
            let k = rng.random_range(1..=3);
            let s = rng.random_range(1..=2);
            let p = rng.random_range(0..=1);
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let mut layer = ConvLayer::new(kind, k, s, p, cin, cout, false).unwrap();
            layer.weights = small_ints(layer.weights.len(), &mut rng);
            let side = match kind {
                ConvKind::Conv => s * rng.random_range(1..=3) + k,
                ConvKind::Deconv => rng.random_range(2..=4),
            };
            let Ok(oh) = layer.output_size(side) else { continue };
            let x = Tensor::from_vec(cin, side, side, small_ints(cin * side * side, &mut rng)).unwrap();
            let y = layer.forward(&x).unwrap();
            assert_eq!(y, direct(&x, &layer), "forward case {case}");

            let dy = Tensor::from_vec(cout, oh, oh, small_ints(cout * oh * oh, &mut rng)).unwrap();
            let g = layer.backward(&x, &dy).unwrap();
            // the loss <f(x), dy> is linear, so unit perturbations are exact
            let base = dot(&y, &dy);
            for j in 0..x.data().len() {
                let mut xp = x.clone();
                xp.data_mut()[j] += 1.0;
                assert_eq!(g.input.data()[j], dot(&direct(&xp, &layer), &dy) - base, "input case {case}");
            }
            for j in 0..layer.weights.len() {
                let mut lp = layer.clone();
                lp.weights[j] += 1.0;
                assert_eq!(g.weights[j], dot(&direct(&x, &lp), &dy) - base, "weight case {case}");
            }
        }
    }
}
