//! Image planes, disparity maps, and the KITTI 16-bit disparity codec.
//!
//! KITTI stores disparities as single-channel 16-bit PNGs where
//! `raw = round(256 * d)` and `raw == 0` marks a pixel without ground truth.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};

/// Raw single-channel 16-bit plane as stored in KITTI disparity PNGs.
pub type RawDisparity = ImageBuffer<Luma<u16>, Vec<u16>>;

const KITTI_SCALE: f64 = 256.0;

/// Real-valued intensity plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image plane must be at least 1x1, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} plane",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image plane must be at least 1x1");
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Copies the `w`x`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<ImagePlane> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::Range(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{} plane",
                self.width, self.height
            )));
        }
        Ok(ImagePlane::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }
}

/// Per-pixel disparity in pixels plus a validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    disparity: Vec<f64>,
    valid: Vec<bool>,
}

impl DisparityMap {
    /// A map with every pixel invalid.
    pub fn new_invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            disparity: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// A fully valid map filled with `value`.
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            disparity: vec![value; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        disparity: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if disparity.len() != n || valid.len() != n {
            return Err(Error::Shape(format!(
                "disparity map {width}x{height} needs {n} entries, got {} values and {} flags",
                disparity.len(),
                valid.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| valid[i] && !(disparity[i] >= 0.0)) {
            return Err(Error::Range(format!(
                "valid pixel {} has disparity {}",
                i, disparity[i]
            )));
        }
        Ok(Self {
            width,
            height,
            disparity,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Disparity at `(x, y)` or `None` if the pixel is invalid.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = self.index(x, y);
        self.valid[i].then(|| self.disparity[i])
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[self.index(x, y)]
    }

    /// Raw stored value, meaningful only for valid pixels.
    #[inline]
    pub fn raw_value(&self, x: usize, y: usize) -> f64 {
        self.disparity[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: f64) {
        debug_assert!(d >= 0.0, "negative disparity {d}");
        let i = self.index(x, y);
        self.disparity[i] = d;
        self.valid[i] = true;
    }

    #[inline]
    pub fn set_invalid(&mut self, x: usize, y: usize) {
        let i = self.index(x, y);
        self.valid[i] = false;
    }

    pub fn disparities(&self) -> &[f64] {
        &self.disparity
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// `raw / 256` for every nonzero raw value; zero marks the pixel invalid.
pub fn decode_kitti_disparity(raw: &RawDisparity) -> DisparityMap {
    let (w, h) = (raw.width() as usize, raw.height() as usize);
    let mut map = DisparityMap::new_invalid(w, h);
    for (x, y, px) in raw.enumerate_pixels() {
        let v = px.0[0];
        if v != 0 {
            map.set(x as usize, y as usize, v as f64 / KITTI_SCALE);
        }
    }
    map
}

/// Inverse of [`decode_kitti_disparity`]. Valid disparities below 1/512 are
/// written as raw 1 so they stay valid after decoding.
pub fn encode_kitti_disparity(map: &DisparityMap) -> Result<RawDisparity> {
    let max = u16::MAX as f64 + 0.5;
    let mut raw = RawDisparity::new(map.width as u32, map.height as u32);
    for y in 0..map.height {
        for x in 0..map.width {
            let Some(d) = map.get(x, y) else { continue };
            let scaled = d * KITTI_SCALE;
            if !(scaled >= 0.0 && scaled < max) {
                return Err(Error::Range(format!(
                    "disparity {d} at ({x},{y}) is outside the 16-bit KITTI range"
                )));
            }
            let v = (scaled.round() as u16).max(1);
            raw.put_pixel(x as u32, y as u32, Luma([v]));
        }
    }
    Ok(raw)
}

/// Maps 8-bit intensities onto `[0, 1]` by dividing by 255.
pub fn normalize(image: &GrayImage) -> ImagePlane {
    ImagePlane {
        width: image.width() as usize,
        height: image.height() as usize,
        values: image.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
    }
}

/// ITU-R BT.601 luma.
pub fn to_luminance(rgb: &RgbImage) -> GrayImage {
    let mut out = GrayImage::new(rgb.width(), rgb.height());
    for (x, y, px) in rgb.enumerate_pixels() {
        let [r, g, b] = px.0;
        let l = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        out.put_pixel(x, y, Luma([l.round().clamp(0.0, 255.0) as u8]));
    }
    out
}

/// Loads an 8-bit image, converting color to BT.601 luminance.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        DynamicImage::ImageRgb8(rgb) => Ok(to_luminance(&rgb)),
        DynamicImage::ImageRgba8(_) | DynamicImage::ImageLumaA8(_) => {
            Ok(to_luminance(&img.to_rgb8()))
        }
        other => Err(Error::format(
            path,
            format!("expected an 8-bit image, found {:?}", other.color()),
        )),
    }
}

pub fn save_gray(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    image.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_raw_disparity(path: impl AsRef<Path>) -> Result<RawDisparity> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    match img {
        DynamicImage::ImageLuma16(raw) => Ok(raw),
        other => Err(Error::format(
            path,
            format!(
                "KITTI disparity must be 16-bit single-channel, found {:?}",
                other.color()
            ),
        )),
    }
}

pub fn load_kitti_disparity(path: impl AsRef<Path>) -> Result<DisparityMap> {
    Ok(decode_kitti_disparity(&load_raw_disparity(path)?))
}

pub fn save_kitti_disparity(path: impl AsRef<Path>, map: &DisparityMap) -> Result<()> {
    let path = path.as_ref();
    let raw = encode_kitti_disparity(map)?;
    raw.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
