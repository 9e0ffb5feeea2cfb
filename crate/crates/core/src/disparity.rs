//! From cost volume to disparity map: winner-take-all, subpixel
//! refinement, left/right consistency, hole filling and edge padding.

use rayon::prelude::*;

use crate::cost_volume::{CostVolume, INVALID};
use crate::error::{Error, Result};
use crate::imaging::DisparityMap;

/// Default tolerance of the left/right check, in pixels.
pub const DEFAULT_CONSISTENCY_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub fn all(width: usize, height: usize, valid: bool) -> Self {
        Self {
            width,
            height,
            valid: vec![valid; width * height],
        }
    }

    /// Mask of the pixels that carry a value in `map`.
    pub fn of(map: &DisparityMap) -> Self {
        Self {
            width: map.width(),
            height: map.height(),
            valid: map.validity().to_vec(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.valid[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.valid
    }
}

fn argmin(costs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (d, &c) in costs.iter().enumerate() {
        if c < INVALID && best.is_none_or(|b| c < costs[b]) {
            best = Some(d);
        }
    }
    best
}

/// Per-pixel minimum-cost level; ties go to the smaller disparity and
/// all-invalid pixels come out invalid.
pub fn wta(dsi: &CostVolume) -> DisparityMap {
    let (w, h) = (dsi.cols(), dsi.rows());
    let picks: Vec<Option<usize>> = (0..w * h)
        .into_par_iter()
        .map(|i| argmin(dsi.costs(i / w, i % w)))
        .collect();
    let mut map = DisparityMap::new_invalid(w, h);
    for (i, p) in picks.into_iter().enumerate() {
        if let Some(d) = p {
            map.set(i % w, i / w, d as f64);
        }
    }
    map
}

/// Vertex offset of the parabola through `(−1, c₋), (0, c₀), (1, c₊)`, or
/// `None` when the fit has no strict interior minimum.
pub fn parabola_offset(c_minus: f64, c0: f64, c_plus: f64) -> Option<f64> {
    if !(c_minus < INVALID && c0 < INVALID && c_plus < INVALID) {
        return None;
    }
    let denom = 2.0 * (c_minus - 2.0 * c0 + c_plus);
    if denom <= 0.0 {
        return None;
    }
    Some((c_minus - c_plus) / denom)
}

/// Quadratic refinement of an integer map produced by [`wta`] on `dsi`.
pub fn subpixel_refine(dsi: &CostVolume, map: &DisparityMap) -> DisparityMap {
    let mut out = map.clone();
    let top = dsi.levels() - 1;
    for y in 0..map.height() {
        for x in 0..map.width() {
            let Some(d) = map.get(x, y) else { continue };
            let d = d as usize;
            if d == 0 || d >= top {
                continue;
            }
            let c = dsi.costs(y, x);
            if let Some(off) = parabola_offset(c[d - 1], c[d], c[d + 1]) {
                out.set(x, y, d as f64 + off);
            }
        }
    }
    out
}

/// A left pixel survives when its match `x − round(d)` lies in the right
/// map and the two disparities agree within `threshold`.
pub fn consistency_check(left: &DisparityMap, right: &DisparityMap, threshold: f64) -> Result<ValidityMask> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::Shape(format!(
            "left map {}x{} vs right map {}x{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    let mut mask = ValidityMask::all(left.width(), left.height(), false);
    for y in 0..left.height() {
        for x in 0..left.width() {
            let Some(dl) = left.get(x, y) else { continue };
            let xr = x as i64 - dl.round() as i64;
            if xr < 0 || xr >= left.width() as i64 {
                continue;
            }
            if let Some(dr) = right.get(xr as usize, y) {
                mask.set(x, y, (dl - dr).abs() <= threshold);
            }
        }
    }
    Ok(mask)
}

/// Invalidates every pixel the mask rejects.
pub fn apply_mask(map: &DisparityMap, mask: &ValidityMask) -> DisparityMap {
    let mut out = map.clone();
    for y in 0..map.height() {
        for x in 0..map.width() {
            if !mask.get(x, y) {
                out.set_invalid(x, y);
            }
        }
    }
    out
}

/// Fills pixels that are invalid in `map` or rejected by `mask`.
///
/// Each hole takes the smaller of its nearest valid left and right
/// neighbors in the row. Rows with no valid pixel copy the nearest filled
/// row in each column (the smaller value on a tie).
pub fn fill_invalid(map: &DisparityMap, mask: &ValidityMask) -> Result<DisparityMap> {
    let (w, h) = (map.width(), map.height());
    if mask.width() != w || mask.height() != h {
        return Err(Error::Shape("mask and map sizes differ".into()));
    }
    let src = apply_mask(map, mask);
    if src.valid_count() == 0 {
        return Err(Error::InvalidInput("no valid disparity to fill from".into()));
    }
    let mut out = src.clone();
    let mut filled_rows = vec![false; h];
    for (y, filled) in filled_rows.iter_mut().enumerate() {
        let mut left_seen: Vec<Option<f64>> = vec![None; w];
        let mut last = None;
        for x in 0..w {
            if let Some(d) = src.get(x, y) {
                last = Some(d);
            }
            left_seen[x] = last;
        }
        if last.is_none() {
            continue;
        }
        *filled = true;
        let mut next = None;
        for x in (0..w).rev() {
            match src.get(x, y) {
                Some(d) => next = Some(d),
                None => {
                    let v = match (left_seen[x], next) {
                        (Some(a), Some(b)) => a.min(b),
                        (Some(a), None) => a,
                        (None, Some(b)) => b,
                        (None, None) => unreachable!("row has a valid pixel"),
                    };
                    out.set(x, y, v);
                }
            }
        }
    }
    for y in 0..h {
        if filled_rows[y] {
            continue;
        }
        let above = (0..y).rev().find(|&r| filled_rows[r]);
        let below = (y + 1..h).find(|&r| filled_rows[r]);
        let sources: Vec<usize> = match (above, below) {
            (Some(a), Some(b)) if y - a == b - y => vec![a, b],
            (Some(a), Some(b)) => vec![if y - a < b - y { a } else { b }],
            (Some(a), None) => vec![a],
            (None, Some(b)) => vec![b],
            (None, None) => unreachable!("some row is filled"),
        };
        for x in 0..w {
            let v = sources
                .iter()
                .map(|&r| out.raw_value(x, r))
                .fold(f64::INFINITY, f64::min);
            out.set(x, y, v);
        }
    }
    Ok(out)
}

/// Places `map` at `(x0, y0)` inside a `width x height` canvas and
/// replicates its outermost rows and columns into the border.
pub fn pad_to_full_at(map: &DisparityMap, width: usize, height: usize, x0: usize, y0: usize) -> Result<DisparityMap> {
    let (w, h) = (map.width(), map.height());
    if w == 0 || h == 0 || x0 + w > width || y0 + h > height {
        return Err(Error::Geometry(format!(
            "{w}x{h} map at ({x0},{y0}) does not fit a {width}x{height} image"
        )));
    }
    let mut out = DisparityMap::new_invalid(width, height);
    for y in 0..height {
        let sy = y.saturating_sub(y0).min(h - 1);
        for x in 0..width {
            let sx = x.saturating_sub(x0).min(w - 1);
            if let Some(d) = map.get(sx, sy) {
                out.set(x, y, d);
            }
        }
    }
    Ok(out)
}

/// Centers `map` in the full frame (extra pixel, if any, on the right or
/// bottom) and replicates edges outward.
pub fn pad_to_full(map: &DisparityMap, width: usize, height: usize) -> Result<DisparityMap> {
    if map.width() > width || map.height() > height {
        return Err(Error::Geometry(format!(
            "{}x{} map is larger than the {width}x{height} frame",
            map.width(),
            map.height()
        )));
    }
    pad_to_full_at(map, width, height, (width - map.width()) / 2, (height - map.height()) / 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_map(values: &[Option<f64>]) -> DisparityMap {
        let mut m = DisparityMap::new_invalid(values.len(), 1);
        for (x, v) in values.iter().enumerate() {
            if let Some(d) = v {
                m.set(x, 0, *d);
            }
        }
        m
    }

    #[test]
    fn wta_minimum_and_ties() {
        let costs = [[5.0, 4.0, 3.0, 1.0, 2.0], [9.0, 9.0, 0.5, 4.0, 4.0]];
        let mut tie = [7.0; 6];
        tie[2] = 1.0;
        tie[5] = 1.0;
        let vol = CostVolume::from_fn(1, 3, 6, |_, x, d| match x {
            0 => *costs[0].get(d).unwrap_or(&9.0),
            1 => tie[d],
            _ => INVALID,
        });
        let m = wta(&vol);
        assert_eq!(m.get(0, 0), Some(3.0));
        assert_eq!(m.get(1, 0), Some(2.0));
        assert_eq!(m.get(2, 0), None);
    }

    #[test]
    fn parabola_examples() {
        assert_eq!(parabola_offset(1.0, 0.0, 1.0), Some(0.0));
        let off = parabola_offset(2.0, 0.0, 1.0).unwrap();
        assert!((off - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(parabola_offset(1.0, 1.0, 1.0), None);
        assert_eq!(parabola_offset(0.0, 1.0, 0.0), None);
        assert_eq!(parabola_offset(INVALID, 0.0, 1.0), None);
    }

    #[test]
    fn refinement_skips_boundaries() {
        let vol = CostVolume::from_fn(1, 2, 4, |_, x, d| {
            let c = [[0.0, 3.0, 4.0, 5.0], [2.0, 0.0, 1.0, 8.0]];
            c[x][d]
        });
        let r = subpixel_refine(&vol, &wta(&vol));
        assert_eq!(r.get(0, 0), Some(0.0));
        assert!((r.get(1, 0).unwrap() - (1.0 + 1.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn consistency_examples() {
        let zero = DisparityMap::constant(8, 2, 0.0);
        assert_eq!(consistency_check(&zero, &zero, 1.0).unwrap().count(), 16);

        let mut left = DisparityMap::constant(10, 1, 0.0);
        left.set(6, 0, 5.0);
        let mut right = DisparityMap::constant(10, 1, 0.0);
        right.set(1, 0, 7.0);
        let mask = consistency_check(&left, &right, 1.0).unwrap();
        assert!(!mask.get(6, 0));
        assert!(consistency_check(&left, &right, 2.0).unwrap().get(6, 0));

        left.set(2, 0, 4.0);
        assert!(!consistency_check(&left, &right, 1.0).unwrap().get(2, 0));
    }

    #[test]
    fn fill_min_of_rays() {
        let m = row_map(&[Some(5.0), None, Some(9.0), None]);
        let f = fill_invalid(&m, &ValidityMask::of(&m)).unwrap();
        assert_eq!(f.disparities(), &[5.0, 5.0, 9.0, 9.0]);
        assert_eq!(f.valid_count(), 4);
        let again = fill_invalid(&f, &ValidityMask::of(&f)).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn fill_empty_row_from_column() {
        let mut m = DisparityMap::new_invalid(3, 4);
        for x in 0..3 {
            m.set(x, 0, 2.0 + x as f64);
            m.set(x, 3, 1.0);
        }
        let f = fill_invalid(&m, &ValidityMask::of(&m)).unwrap();
        assert_eq!(f.get(1, 1), Some(3.0));
        assert_eq!(f.get(1, 2), Some(1.0));
        assert!(fill_invalid(&DisparityMap::new_invalid(2, 2), &ValidityMask::all(2, 2, true)).is_err());
    }

    #[test]
    fn padding_replicates_edges() {
        let mut m = DisparityMap::new_invalid(2, 2);
        m.set(0, 0, 1.0);
        m.set(1, 0, 2.0);
        m.set(0, 1, 3.0);
        m.set(1, 1, 4.0);
        let p = pad_to_full(&m, 5, 4).unwrap();
        assert_eq!(p.get(0, 0), Some(1.0));
        assert_eq!(p.get(4, 0), Some(2.0));
        assert_eq!(p.get(0, 3), Some(3.0));
        assert_eq!(p.get(4, 3), Some(4.0));
        assert_eq!(p.get(1, 1), Some(1.0));
        assert_eq!(p.get(2, 2), Some(4.0));
        assert_eq!(pad_to_full(&m, 2, 2).unwrap(), m);
        assert!(pad_to_full(&m, 1, 4).is_err());
    }

    #[test]
    fn interior_size_from_margin() {
        let m = DisparityMap::constant(1214, 347, 3.0);
        let p = pad_to_full(&m, 1242, 375).unwrap();
        assert_eq!((p.width(), p.height()), (1242, 375));
        assert_eq!(p.valid_count(), 1242 * 375);
    }
}
