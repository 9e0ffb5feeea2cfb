//! Four-path semi-global cost aggregation.
//!
//! Along each scanline direction `r`:
//!
//! ```text
//! L(p, d) = C(p, d) + min( L(p-r, d),
//!                          L(p-r, d-1) + P1,
//!                          L(p-r, d+1) + P1,
//!                          min_k L(p-r, k) + P2 ) - min_k L(p-r, k)
//! ```
//!
//! The first pixel of a scanline takes `L = C`. Invalid cells stay invalid
//! and never win a minimum; a predecessor with no valid level restarts the
//! path.

use rayon::prelude::*;

use crate::cost_volume::{CostVolume, INVALID};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalties {
    pub p1: f64,
    pub p2: f64,
}

impl Penalties {
    pub fn new(p1: f64, p2: f64) -> Result<Self> {
        if !(p1 > 0.0 && p1 <= p2 && p2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "penalties need 0 < P1 <= P2, got P1={p1}, P2={p2}"
            )));
        }
        Ok(Self { p1, p2 })
    }
}

impl Default for Penalties {
    fn default() -> Self {
        Self { p1: 30.0, p2: 160.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::LeftToRight,
        Direction::RightToLeft,
        Direction::TopToBottom,
        Direction::BottomToTop,
    ];
}

/// One recurrence step: `out = L(p)` from `cost = C(p)` and the
/// predecessor's `L(p - r)`.
#[inline]
fn step(cost: &[f64], prev: Option<&[f64]>, out: &mut [f64], pen: Penalties) {
    let prev_min = prev.map_or(INVALID, |p| p.iter().copied().fold(INVALID, f64::min));
    let Some(prev) = prev.filter(|_| prev_min < INVALID) else {
        out.copy_from_slice(cost);
        return;
    };
    // penalties relative to the predecessor minimum, so the added term
    // lies in [0, P2] exactly
    let n = cost.len();
    for d in 0..n {
        if cost[d] == INVALID {
            out[d] = INVALID;
            continue;
        }
        let mut best = (prev[d] - prev_min).min(pen.p2);
        if d > 0 {
            best = best.min(prev[d - 1] - prev_min + pen.p1);
        }
        if d + 1 < n {
            best = best.min(prev[d + 1] - prev_min + pen.p1);
        }
        out[d] = cost[d] + best;
    }
}

fn aggregate_rows(dsi: &CostVolume, pen: Penalties, forward: bool) -> CostVolume {
    let (cols, levels) = (dsi.cols(), dsi.levels());
    let mut out = CostVolume::new(dsi.rows(), cols, levels, INVALID);
    out.rows_mut().for_each(|(y, row)| {
        let xs: Box<dyn Iterator<Item = usize>> = if forward {
            Box::new(0..cols)
        } else {
            Box::new((0..cols).rev())
        };
        let mut prev: Option<usize> = None;
        for x in xs {
            let cur = x * levels;
            match prev {
                None => row[cur..cur + levels].copy_from_slice(dsi.costs(y, x)),
                Some(p) => {
                    let (a, b) = if p < cur {
                        let (lo, hi) = row.split_at_mut(cur);
                        (&lo[p..p + levels], &mut hi[..levels])
                    } else {
                        let (lo, hi) = row.split_at_mut(p);
                        (&hi[..levels], &mut lo[cur..cur + levels])
                    };
                    step(dsi.costs(y, x), Some(a), b, pen);
                }
            }
            prev = Some(cur);
        }
    });
    out
}

fn aggregate_cols(dsi: &CostVolume, pen: Penalties, forward: bool) -> CostVolume {
    let (rows, cols, levels) = (dsi.rows(), dsi.cols(), dsi.levels());
    let mut out = CostVolume::new(rows, cols, levels, INVALID);
    let stride = cols * levels;
    let data = out.data_mut();
    let ys: Vec<usize> = if forward {
        (0..rows).collect()
    } else {
        (0..rows).rev().collect()
    };
    for (i, &y) in ys.iter().enumerate() {
        let (prev_row, cur_row): (Option<&[f64]>, &mut [f64]) = if i == 0 {
            (None, &mut data[y * stride..(y + 1) * stride])
        } else if forward {
            let (lo, hi) = data.split_at_mut(y * stride);
            (Some(&lo[(y - 1) * stride..]), &mut hi[..stride])
        } else {
            let (lo, hi) = data.split_at_mut((y + 1) * stride);
            (Some(&hi[..stride]), &mut lo[y * stride..])
        };
        cur_row
            .par_chunks_mut(levels)
            .enumerate()
            .for_each(|(x, cell)| {
                let prev = prev_row.map(|r| &r[x * levels..(x + 1) * levels]);
                step(dsi.costs(y, x), prev, cell, pen);
            });
    }
    out
}

/// Aggregated costs `L_r` along one direction.
pub fn aggregate_direction(dsi: &CostVolume, dir: Direction, pen: Penalties) -> CostVolume {
    match dir {
        Direction::LeftToRight => aggregate_rows(dsi, pen, true),
        Direction::RightToLeft => aggregate_rows(dsi, pen, false),
        Direction::TopToBottom => aggregate_cols(dsi, pen, true),
        Direction::BottomToTop => aggregate_cols(dsi, pen, false),
    }
}

/// Sum of the four directional aggregations.
pub fn aggregate_all(dsi: &CostVolume, pen: Penalties) -> CostVolume {
    let parts: Vec<CostVolume> = Direction::ALL
        .par_iter()
        .map(|&dir| aggregate_direction(dsi, dir, pen))
        .collect();
    let mut total = CostVolume::new(dsi.rows(), dsi.cols(), dsi.levels(), 0.0);
    total
        .data_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = parts.iter().map(|p| p.data()[i]).sum());
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rows: usize, cols: usize, levels: usize, seed: u64, invalid: bool) -> CostVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CostVolume::from_fn(rows, cols, levels, |_, x, d| {
            if invalid && d > x {
                INVALID
            } else {
                // multiples of 1/8 keep every sum exact
                rng.random_range(0..800) as f64 / 8.0
            }
        })
    }

    /// Plain transcription of the recurrence over explicit scan coordinates.
    fn naive(dsi: &CostVolume, dir: Direction, pen: Penalties) -> CostVolume {
        let (h, w, n) = (dsi.rows() as i64, dsi.cols() as i64, dsi.levels());
        let (dx, dy) = match dir {
            Direction::LeftToRight => (1, 0),
            Direction::RightToLeft => (-1, 0),
            Direction::TopToBottom => (0, 1),
            Direction::BottomToTop => (0, -1),
        };
        let mut out = dsi.clone();
        let order: Vec<(i64, i64)> = {
            let mut v = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    v.push((x, y));
                }
            }
            if dx < 0 || dy < 0 {
                v.reverse();
            }
            v
        };
        for (x, y) in order {
            let (px, py) = (x - dx, y - dy);
            if px < 0 || py < 0 || px >= w || py >= h {
                continue;
            }
            let prev: Vec<f64> = (0..n).map(|k| out.get(py as usize, px as usize, k)).collect();
            let m = prev.iter().cloned().fold(f64::INFINITY, f64::min);
            if m.is_infinite() {
                continue;
            }
            for d in 0..n {
                let c = dsi.get(y as usize, x as usize, d);
                if c.is_infinite() {
                    continue;
                }
                let mut cands = vec![prev[d], m + pen.p2];
                if d >= 1 {
                    cands.push(prev[d - 1] + pen.p1);
                }
                if d + 1 < n {
                    cands.push(prev[d + 1] + pen.p1);
                }
                let best = cands.into_iter().fold(f64::INFINITY, f64::min);
                out.set(y as usize, x as usize, d, c + best - m);
            }
        }
        out
    }

    #[test]
    fn matches_naive_recurrence() {
        let pen = Penalties::default();
        for seed in 0..20 {
            let vol = random_volume(1 + seed as usize % 4, 8, 5, seed, seed % 2 == 0);
            for dir in Direction::ALL {
                assert_eq!(aggregate_direction(&vol, dir, pen), naive(&vol, dir, pen), "{dir:?}");
            }
        }
    }

    #[test]
    fn growth_is_bounded_by_p2() {
        let pen = Penalties::new(7.0, 40.0).unwrap();
        let vol = random_volume(6, 12, 8, 3, true);
        for dir in Direction::ALL {
            let agg = aggregate_direction(&vol, dir, pen);
            for (a, c) in agg.data().iter().zip(vol.data()) {
                if c.is_finite() {
                    let g = a - c;
                    assert!((0.0..=pen.p2).contains(&g), "{g}");
                } else {
                    assert_eq!(*a, INVALID);
                }
            }
        }
    }

    #[test]
    fn uniform_levels_give_four_times_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<f64> = (0..5 * 7).map(|_| rng.random_range(0.0..50.0)).collect();
        let vol = CostVolume::from_fn(5, 7, 4, |y, x, _| base[y * 7 + x]);
        let total = aggregate_all(&vol, Penalties::default());
        for (t, c) in total.data().iter().zip(vol.data()) {
            assert!((t - 4.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn first_column_is_raw_cost() {
        let vol = random_volume(3, 6, 4, 9, false);
        let agg = aggregate_direction(&vol, Direction::LeftToRight, Penalties::default());
        for y in 0..3 {
            assert_eq!(agg.costs(y, 0), vol.costs(y, 0));
        }
    }

    #[test]
    fn mirrored_input_mirrors_output() {
        let vol = random_volume(4, 9, 5, 11, false);
        let mirror = |v: &CostVolume| {
            CostVolume::from_fn(v.rows(), v.cols(), v.levels(), |y, x, d| v.get(y, v.cols() - 1 - x, d))
        };
        let pen = Penalties::default();
        let a = aggregate_all(&mirror(&vol), pen);
        let b = mirror(&aggregate_all(&vol, pen));
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn penalties_validated() {
        assert!(Penalties::new(0.0, 1.0).is_err());
        assert!(Penalties::new(5.0, 4.0).is_err());
        assert!(Penalties::new(4.0, 4.0).is_ok());
    }
}
