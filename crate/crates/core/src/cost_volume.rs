//! Disparity space image (DSI): matching cost per `(row, col, disparity)`.
//!
//! Lower cost means a better match. Cells whose correspondence falls outside
//! the other image hold [`INVALID`], which compares greater than every
//! finite cost.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::ImagePlane;
use crate::network::{FeatureExtractor, Tensor};

pub const INVALID: f64 = f64::INFINITY;

/// Default largest disparity searched at inference time.
pub const DEFAULT_MAX_DISPARITY: usize = 127;

#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    rows: usize,
    cols: usize,
    levels: usize,
    data: Vec<f64>,
}

impl CostVolume {
    pub fn new(rows: usize, cols: usize, levels: usize, fill: f64) -> Self {
        Self {
            rows,
            cols,
            levels,
            data: vec![fill; rows * cols * levels],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, levels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * levels {
            return Err(Error::Shape(format!(
                "{} costs for a {rows}x{cols}x{levels} volume",
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::InvalidInput("costs must be finite or INVALID".into()));
        }
        Ok(Self {
            rows,
            cols,
            levels,
            data,
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        levels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(rows * cols * levels);
        for y in 0..rows {
            for x in 0..cols {
                for d in 0..levels {
                    data.push(f(y, x, d));
                }
            }
        }
        Self {
            rows,
            cols,
            levels,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of disparity levels (`d_max + 1`).
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn max_disparity(&self) -> usize {
        self.levels.saturating_sub(1)
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, d: usize) -> usize {
        (y * self.cols + x) * self.levels + d
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, d: usize) -> f64 {
        self.data[self.index(y, x, d)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, d: usize, v: f64) {
        let i = self.index(y, x, d);
        self.data[i] = v;
    }

    #[inline]
    pub fn is_invalid(&self, y: usize, x: usize, d: usize) -> bool {
        self.get(y, x, d) == INVALID
    }

    /// All disparity levels at one pixel.
    #[inline]
    pub fn costs(&self, y: usize, x: usize) -> &[f64] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.levels]
    }

    #[inline]
    pub fn costs_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let i = self.index(y, x, 0);
        &mut self.data[i..i + self.levels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row slices (`cols * levels` each), for row-parallel construction.
    pub(crate) fn rows_mut(&mut self) -> impl IndexedParallelIterator<Item = (usize, &mut [f64])> {
        let n = self.cols * self.levels;
        self.data.par_chunks_mut(n.max(1)).enumerate()
    }
}

fn check_pair(left: &ImagePlane, right: &ImagePlane) -> Result<()> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::Shape(format!(
            "left {}x{} and right {}x{} images differ in size",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    Ok(())
}

/// Features as `[y][x][c]` for contiguous per-pixel dot products.
fn interleave(features: &Tensor) -> Vec<f64> {
    let (c, h, w) = features.shape();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for (i, v) in features.plane(ch).iter().enumerate() {
            out[i * c + ch] = *v;
        }
    }
    out
}

/// Learned cost: negated dot product of the two views' feature vectors,
/// `Cost(x, y, d) = -<f_L(x, y), f_R(x - d, y)>`.
///
/// Both images are run through the extractor once (fully convolutional);
/// the result covers the interior grid, shrunk by the network's receptive
/// field (`patch - 1` in each direction).
pub fn build_dsi_learned(
    left: &ImagePlane,
    right: &ImagePlane,
    extractor: &FeatureExtractor,
    max_disparity: usize,
) -> Result<CostVolume> {
    check_pair(left, right)?;
    let margin = extractor.margin()?;
    if left.width() <= margin || left.height() <= margin {
        return Err(Error::Geometry(format!(
            "{}x{} image is smaller than the {}-pixel patch",
            left.width(),
            left.height(),
            extractor.patch_size()
        )));
    }
    let (fl, fr) = rayon::join(
        || extractor.forward(&Tensor::from_plane(left)),
        || extractor.forward(&Tensor::from_plane(right)),
    );
    let (fl, fr) = (fl?, fr?);
    let (channels, rows, cols) = fl.shape();
    let (fl, fr) = (interleave(&fl), interleave(&fr));
    let levels = max_disparity + 1;
    let mut vol = CostVolume::new(rows, cols, levels, INVALID);
    vol.rows_mut().for_each(|(y, row)| {
        for x in 0..cols {
            let a = &fl[(y * cols + x) * channels..][..channels];
            for d in 0..levels.min(x + 1) {
                let b = &fr[(y * cols + x - d) * channels..][..channels];
                let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                row[x * levels + d] = -dot;
            }
        }
    });
    Ok(vol)
}

/// Largest supported census window (120 comparison bits).
pub const MAX_CENSUS_WINDOW: usize = 11;

/// Census descriptor per pixel: one bit per window neighbor, set when the
/// neighbor is darker than the center. Out-of-image neighbors are clamped
/// to the border.
pub fn census_transform(image: &ImagePlane, window: usize) -> Result<Vec<u128>> {
    check_window(image, window)?;
    if window > MAX_CENSUS_WINDOW {
        return Err(Error::Unsupported(format!(
            "census window {window} exceeds {MAX_CENSUS_WINDOW}"
        )));
    }
    let (w, h) = (image.width() as isize, image.height() as isize);
    let r = (window / 2) as isize;
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let center = image.get(x as usize, y as usize);
            let mut bits = 0u128;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = (x + dx).clamp(0, w - 1) as usize;
                    let ny = (y + dy).clamp(0, h - 1) as usize;
                    bits = (bits << 1) | u128::from(image.get(nx, ny) < center);
                }
            }
            out.push(bits);
        }
    }
    Ok(out)
}

fn check_window(image: &ImagePlane, window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidInput(format!(
            "window must be odd and at least 3, got {window}"
        )));
    }
    if window > image.width() || window > image.height() {
        return Err(Error::InvalidInput(format!(
            "window {window} is larger than the {}x{} image",
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Hamming distance between census descriptors of `(x, y)` in the left
/// view and `(x - d, y)` in the right view.
pub fn build_dsi_census(
    left: &ImagePlane,
    right: &ImagePlane,
    window: usize,
    max_disparity: usize,
) -> Result<CostVolume> {
    check_pair(left, right)?;
    let cl = census_transform(left, window)?;
    let cr = census_transform(right, window)?;
    let (rows, cols, levels) = (left.height(), left.width(), max_disparity + 1);
    let mut vol = CostVolume::new(rows, cols, levels, INVALID);
    vol.rows_mut().for_each(|(y, row)| {
        for x in 0..cols {
            let a = cl[y * cols + x];
            for d in 0..levels.min(x + 1) {
                row[x * levels + d] = (a ^ cr[y * cols + x - d]).count_ones() as f64;
            }
        }
    });
    Ok(vol)
}

/// Sum of absolute intensity differences over a square window (borders
/// clamped), intensities on the 0..255 scale.
pub fn build_dsi_sad(
    left: &ImagePlane,
    right: &ImagePlane,
    window: usize,
    max_disparity: usize,
) -> Result<CostVolume> {
    check_pair(left, right)?;
    check_window(left, window)?;
    let (rows, cols, levels) = (left.height(), left.width(), max_disparity + 1);
    let r = (window / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut vol = CostVolume::new(rows, cols, levels, INVALID);
    vol.rows_mut().for_each(|(y, row)| {
        for x in 0..cols {
            for d in 0..levels.min(x + 1) {
                let mut sum = 0.0;
                for dy in -r..=r {
                    let yy = clamp(y as isize + dy, rows);
                    for dx in -r..=r {
                        let xl = clamp(x as isize + dx, cols);
                        let xr = clamp(x as isize - d as isize + dx, cols);
                        sum += (left.get(xl, yy) - right.get(xr, yy)).abs();
                    }
                }
                row[x * levels + d] = sum * 255.0;
            }
        }
    });
    Ok(vol)
}

/// Right-view volume from the left one: `Cost_R(x, y, d) = Cost_L(x + d, y, d)`.
pub fn derive_right_dsi(left: &CostVolume) -> CostVolume {
    let (rows, cols, levels) = (left.rows, left.cols, left.levels);
    let mut vol = CostVolume::new(rows, cols, levels, INVALID);
    vol.rows_mut().for_each(|(y, row)| {
        for x in 0..cols {
            for d in 0..levels {
                if x + d < cols {
                    row[x * levels + d] = left.get(y, x + d, d);
                }
            }
        }
    });
    vol
}

/// Writes `rows, cols, levels` (u32 LE) then row-major f32 costs, with
/// [`INVALID`] as `+inf`.
pub fn write_dsi(path: impl AsRef<Path>, vol: &CostVolume) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    for dim in [vol.rows, vol.cols, vol.levels] {
        put(&(dim as u32).to_le_bytes())?;
    }
    for &v in &vol.data {
        put(&(v as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dsi(path: impl AsRef<Path>) -> Result<CostVolume> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::format(path, "truncated DSI header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (rows, cols, levels) = (dim(0), dim(1), dim(2));
    let n = rows * cols * levels;
    if bytes.len() != 12 + 4 * n {
        return Err(Error::format(
            path,
            format!("expected {} cost bytes, found {}", 4 * n, bytes.len() - 12),
        ));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    CostVolume::from_vec(rows, cols, levels, data).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ConvKind, ConvLayer, Layer};

    fn noise(w: usize, h: usize, seed: u64) -> ImagePlane {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ImagePlane::from_fn(w, h, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) % 256) as f64 / 255.0
        })
    }

    fn shift_right_view(right: &ImagePlane, d: usize, fill: f64) -> ImagePlane {
        ImagePlane::from_fn(right.width(), right.height(), |x, y| {
            if x >= d {
                right.get(x - d, y)
            } else {
                fill
            }
        })
    }

    #[test]
    fn census_identical_views_zero_plane() {
        let img = noise(20, 12, 1);
        let vol = build_dsi_census(&img, &img, 5, 6).unwrap();
        assert_eq!(vol.levels(), 7);
        for y in 0..12 {
            for x in 0..20 {
                assert_eq!(vol.get(y, x, 0), 0.0);
                for d in x + 1..7 {
                    assert!(vol.is_invalid(y, x, d));
                }
            }
        }
    }

    #[test]
    fn census_shift_matches_exactly_in_interior() {
        let right = noise(30, 14, 2);
        let left = shift_right_view(&right, 4, 0.5);
        let vol = build_dsi_census(&left, &right, 5, 8).unwrap();
        for y in 2..12 {
            for x in 4 + 2..28 {
                assert_eq!(vol.get(y, x, 4), 0.0, "({x},{y})");
            }
        }
    }

    #[test]
    fn census_costs_bounded_integers() {
        let (l, r) = (noise(16, 9, 3), noise(16, 9, 4));
        let vol = build_dsi_census(&l, &r, 3, 5).unwrap();
        for &v in vol.data() {
            assert!(v == INVALID || (v.fract() == 0.0 && (0.0..=8.0).contains(&v)));
        }
    }

    #[test]
    fn census_window_errors() {
        let img = noise(6, 6, 0);
        assert!(build_dsi_census(&img, &img, 4, 2).is_err());
        assert!(build_dsi_census(&img, &img, 1, 2).is_err());
        assert!(build_dsi_census(&img, &img, 7, 2).is_err());
        assert!(build_dsi_census(&img, &noise(5, 6, 0), 3, 2).is_err());
    }

    #[test]
    fn learned_identity_extractor_is_negated_product() {
        let conv = ConvLayer::single_channel(ConvKind::Conv, &[1.0], 1, 0).unwrap();
        let net = FeatureExtractor::new(vec![Layer::Conv(conv)], 1).unwrap();
        let (l, r) = (noise(9, 4, 5), noise(9, 4, 6));
        let vol = build_dsi_learned(&l, &r, &net, 3).unwrap();
        assert_eq!((vol.rows(), vol.cols(), vol.levels()), (4, 9, 4));
        for y in 0..4 {
            for x in 0..9 {
                for d in 0..4 {
                    let expected = if d <= x {
                        -l.get(x, y) * r.get(x - d, y)
                    } else {
                        INVALID
                    };
                    assert_eq!(vol.get(y, x, d), expected);
                }
            }
        }
    }

    #[test]
    fn learned_zero_plane_on_identical_views() {
        let net = FeatureExtractor::from_config_str("1Deconv(2)&2Conv(3)", 4, 7).unwrap();
        let img = noise(16, 10, 8);
        let vol = build_dsi_learned(&img, &img, &net, 5).unwrap();
        let margin = net.margin().unwrap();
        assert_eq!((vol.rows(), vol.cols()), (10 - margin, 16 - margin));
        let feats = net.forward(&Tensor::from_plane(&img)).unwrap();
        for y in 0..vol.rows() {
            for x in 0..vol.cols() {
                let f = feats.column(y, x);
                let norm2: f64 = f.iter().map(|v| v * v).sum();
                assert!((vol.get(y, x, 0) + norm2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn right_volume_index_arithmetic() {
        let vol = CostVolume::from_fn(5, 16, 6, |y, x, d| (y * 1000 + x * 10 + d) as f64);
        let right = derive_right_dsi(&vol);
        assert_eq!(right.get(3, 6, 4), vol.get(3, 10, 4));
        for y in 0..5 {
            for x in 0..16 {
                assert_eq!(right.get(y, x, 0), vol.get(y, x, 0));
            }
            assert!(right.is_invalid(y, 15, 5));
        }
    }

    #[test]
    fn dsi_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.dsi");
        let vol = CostVolume::from_fn(2, 3, 4, |y, x, d| if d > x { INVALID } else { (y + x + d) as f64 * 0.5 });
        write_dsi(&p, &vol).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 12 + 4 * 24);
        assert_eq!(&bytes[..4], &2u32.to_le_bytes());
        assert_eq!(read_dsi(&p).unwrap(), vol);
    }
}
