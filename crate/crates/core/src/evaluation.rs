//! Error metrics, depth from disparity, and synthetic random-dot pairs.

use std::fmt::Write as _;
use std::path::Path;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::DisparityMap;

/// Thresholds reported by default, in pixels.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [2.0, 3.0, 4.0, 5.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub threshold: f64,
    pub error_percent: f64,
    pub bad_pixels: usize,
    pub total_pixels: usize,
}

/// Share of ground-truth pixels whose estimate misses by more than each
/// threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
}

impl ErrorReport {
    pub fn percent_at(&self, threshold: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.threshold == threshold)
            .map(|r| r.error_percent)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,error_percent,bad_pixels,total_pixels\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{},{}",
                r.threshold, r.error_percent, r.bad_pixels, r.total_pixels
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Pools several reports with identical thresholds into one.
    pub fn combine(reports: &[ErrorReport]) -> Result<ErrorReport> {
        let Some(first) = reports.first() else {
            return Err(Error::InvalidInput("no reports to combine".into()));
        };
        let mut rows = first.rows.clone();
        for rep in &reports[1..] {
            if rep.rows.len() != rows.len() {
                return Err(Error::Shape("reports use different thresholds".into()));
            }
            for (acc, r) in rows.iter_mut().zip(&rep.rows) {
                if acc.threshold != r.threshold {
                    return Err(Error::Shape("reports use different thresholds".into()));
                }
                acc.bad_pixels += r.bad_pixels;
                acc.total_pixels += r.total_pixels;
            }
        }
        for r in &mut rows {
            r.error_percent = 100.0 * r.bad_pixels as f64 / r.total_pixels as f64;
        }
        Ok(ErrorReport { rows })
    }
}

/// Counts, over pixels with valid ground truth, estimates off by more than
/// each threshold. An invalid estimate at such a pixel counts as bad.
pub fn n_pixel_error(estimate: &DisparityMap, gt: &DisparityMap, thresholds: &[f64]) -> Result<ErrorReport> {
    if estimate.width() != gt.width() || estimate.height() != gt.height() {
        return Err(Error::Shape(format!(
            "estimate {}x{} vs ground truth {}x{}",
            estimate.width(),
            estimate.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut errors = Vec::with_capacity(gt.valid_count());
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if let Some(g) = gt.get(x, y) {
                errors.push(estimate.get(x, y).map_or(f64::INFINITY, |e| (e - g).abs()));
            }
        }
    }
    if errors.is_empty() {
        return Err(Error::InvalidInput("ground truth has no valid pixel".into()));
    }
    let total = errors.len();
    let rows = thresholds
        .iter()
        .map(|&t| {
            let bad = errors.iter().filter(|&&e| e > t).count();
            ErrorRow {
                threshold: t,
                error_percent: 100.0 * bad as f64 / total as f64,
                bad_pixels: bad,
                total_pixels: total,
            }
        })
        .collect();
    Ok(ErrorReport { rows })
}

/// Rectified pair geometry: baseline in meters, focal length in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraGeometry {
    baseline: f64,
    focal: f64,
}

impl CameraGeometry {
    pub fn new(baseline: f64, focal: f64) -> Result<Self> {
        if !(baseline > 0.0 && focal > 0.0) {
            return Err(Error::Domain(format!(
                "baseline {baseline} and focal length {focal} must be positive"
            )));
        }
        Ok(Self { baseline, focal })
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }
}

/// `z = B f / d`.
pub fn disparity_to_depth(d: f64, geom: &CameraGeometry) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("disparity {d} has no finite depth")));
    }
    Ok(geom.baseline * geom.focal / d)
}

/// Metric `(x, y)` of the point seen at image coordinates `(x_l, y_l)`
/// (relative to the principal point) at depth `z`.
pub fn reproject(x_l: f64, y_l: f64, z: f64, geom: &CameraGeometry) -> Result<(f64, f64)> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("depth {z} is not in front of the camera")));
    }
    Ok((z * x_l / geom.focal, z * y_l / geom.focal))
}

pub struct Stereogram {
    pub left: GrayImage,
    pub right: GrayImage,
    pub ground_truth: DisparityMap,
}

/// Random-dot pair whose left view is the right view shifted by a
/// per-pixel integer disparity field (row-major, `width * height`).
///
/// The right view is uniform 8-bit noise. Left pixels with `x < d` see
/// fresh noise and have no ground truth. When several left pixels copy the
/// same right pixel, the one with the largest disparity keeps its ground
/// truth and the others are marked occluded.
pub fn make_random_dot_stereogram(width: usize, height: usize, field: &[u32], seed: u64) -> Result<Stereogram> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("stereogram must be non-empty".into()));
    }
    if field.len() != width * height {
        return Err(Error::Shape(format!(
            "disparity field has {} entries for a {width}x{height} image",
            field.len()
        )));
    }
    if let Some(&d) = field.iter().find(|&&d| d as usize >= width) {
        return Err(Error::Range(format!("disparity {d} does not fit a {width}-pixel row")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let right = GrayImage::from_fn(width as u32, height as u32, |_, _| image::Luma([rng.random()]));
    let mut left = GrayImage::new(width as u32, height as u32);
    let mut gt = DisparityMap::new_invalid(width, height);
    for y in 0..height {
        let mut claim: Vec<Option<(u32, usize)>> = vec![None; width];
        for x in 0..width {
            let d = field[y * width + x];
            let px = if (d as usize) <= x {
                let xr = x - d as usize;
                if claim[xr].is_none_or(|(best, _)| d > best) {
                    claim[xr] = Some((d, x));
                }
                *right.get_pixel(xr as u32, y as u32)
            } else {
                image::Luma([rng.random()])
            };
            left.put_pixel(x as u32, y as u32, px);
        }
        for (d, x) in claim.into_iter().flatten() {
            gt.set(x, y, d as f64);
        }
    }
    Ok(Stereogram {
        left,
        right,
        ground_truth: gt,
    })
}

/// Disparity field of a fronto-parallel background at `back` with a
/// centered square of side `width / 2` at `front`.
pub fn two_plane_field(width: usize, height: usize, back: u32, front: u32) -> Vec<u32> {
    let (x0, y0) = (width / 4, height / 4);
    let (x1, y1) = (x0 + width / 2, y0 + height / 2);
    let mut field = vec![back; width * height];
    for y in y0..y1.min(height) {
        for x in x0..x1.min(width) {
            field[y * width + x] = front;
        }
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_estimate_scores_zero() {
        let gt = DisparityMap::constant(4, 3, 7.5);
        let rep = n_pixel_error(&gt, &gt, &DEFAULT_THRESHOLDS).unwrap();
        assert!(rep.rows.iter().all(|r| r.error_percent == 0.0 && r.total_pixels == 12));
    }

    #[test]
    fn half_wrong_is_fifty_percent() {
        let gt = DisparityMap::constant(4, 2, 20.0);
        let mut est = gt.clone();
        for x in 0..4 {
            est.set(x, 0, 30.0);
        }
        let rep = n_pixel_error(&est, &gt, &DEFAULT_THRESHOLDS).unwrap();
        for r in &rep.rows {
            assert_eq!((r.error_percent, r.bad_pixels), (50.0, 4));
        }
        assert_eq!(
            rep.to_csv().lines().next().unwrap(),
            "threshold,error_percent,bad_pixels,total_pixels"
        );
    }

    #[test]
    fn invalid_ground_truth_ignored() {
        let mut gt = DisparityMap::constant(3, 1, 1.0);
        gt.set_invalid(0, 0);
        let mut est = DisparityMap::constant(3, 1, 1.0);
        est.set(0, 0, 90.0);
        let rep = n_pixel_error(&est, &gt, &[2.0]).unwrap();
        assert_eq!((rep.rows[0].bad_pixels, rep.rows[0].total_pixels), (0, 2));
        assert!(n_pixel_error(&est, &DisparityMap::new_invalid(3, 1), &[2.0]).is_err());
    }

    #[test]
    fn report_non_increasing() {
        let gt = DisparityMap::constant(10, 1, 0.0);
        let mut est = gt.clone();
        for x in 0..10 {
            est.set(x, 0, x as f64);
        }
        let rep = n_pixel_error(&est, &gt, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(rep.rows.windows(2).all(|w| w[1].error_percent <= w[0].error_percent));
        assert_eq!(rep.percent_at(3.0), Some(60.0));
    }

    #[test]
    fn depth_and_reprojection() {
        let g = CameraGeometry::new(1.0, 1.0).unwrap();
        assert_eq!(disparity_to_depth(1.0, &g).unwrap(), 1.0);
        let g = CameraGeometry::new(0.5, 700.0).unwrap();
        let z = disparity_to_depth(35.0, &g).unwrap();
        assert!((z - 10.0).abs() < 1e-12);
        assert!(disparity_to_depth(0.0, &g).is_err());
        let (x, y) = reproject(70.0, 0.0, 10.0, &g).unwrap();
        assert!((x - 1.0).abs() < 1e-12 && y == 0.0);
        assert_eq!(reproject(33.0, 2.0, 700.0, &g).unwrap(), (33.0, 2.0));
        assert!(CameraGeometry::new(0.0, 1.0).is_err());
    }

    #[test]
    fn constant_fields() {
        let s = make_random_dot_stereogram(16, 5, &vec![0; 80], 1).unwrap();
        assert_eq!(s.left, s.right);
        assert_eq!(s.ground_truth, DisparityMap::constant(16, 5, 0.0));

        let s = make_random_dot_stereogram(16, 5, &vec![7; 80], 1).unwrap();
        for y in 0..5u32 {
            for x in 7..16u32 {
                assert_eq!(s.left.get_pixel(x, y), s.right.get_pixel(x - 7, y));
                assert_eq!(s.ground_truth.get(x as usize, y as usize), Some(7.0));
            }
            assert!(!s.ground_truth.is_valid(6, y as usize));
        }
    }

    #[test]
    fn occluded_background_invalidated() {
        let field = two_plane_field(64, 32, 0, 12);
        let s = make_random_dot_stereogram(64, 32, &field, 4).unwrap();
        let gt = &s.ground_truth;
        // background just left of the square is hidden behind it
        assert!(!gt.is_valid(16 - 1, 16));
        assert!(!gt.is_valid(16 - 12, 16));
        assert_eq!(gt.get(16 - 13, 16), Some(0.0));
        assert_eq!(gt.get(16, 16), Some(12.0));
        for y in 0..32 {
            for x in 0..64 {
                if let Some(d) = gt.get(x, y) {
                    let xr = x - d as usize;
                    assert_eq!(s.left.get_pixel(x as u32, y as u32), s.right.get_pixel(xr as u32, y as u32));
                }
            }
        }
    }

    #[test]
    fn out_of_range_field_rejected() {
        assert!(make_random_dot_stereogram(4, 1, &[0, 0, 4, 0], 0).is_err());
        assert!(make_random_dot_stereogram(4, 1, &[0, 0], 0).is_err());
    }
}
