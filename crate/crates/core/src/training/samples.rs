use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::evaluation::make_random_dot_stereogram;
use crate::imaging::{normalize, DisparityMap, ImagePlane};
use crate::network::Tensor;

/// Extra strip columns beyond the patch width.
pub const STRIP_EXTRA: usize = 200;
/// Candidate positions scored per sample.
pub const POSITIONS: usize = STRIP_EXTRA + 1;
/// Index of the true match inside the strip.
pub const CENTER: usize = STRIP_EXTRA / 2;

/// Smoothed target distribution peaked at [`CENTER`]:
/// 0.5 at the center, 0.2 one step away, 0.05 two steps away.
pub fn make_label() -> Vec<f64> {
    let mut label = vec![0.0; POSITIONS];
    label[CENTER] = 0.5;
    label[CENTER - 1] = 0.2;
    label[CENTER + 1] = 0.2;
    label[CENTER - 2] = 0.05;
    label[CENTER + 2] = 0.05;
    label
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `1 x W x W`
    pub left_patch: Tensor,
    /// `1 x W x (W + 200)`
    pub right_strip: Tensor,
    pub label: Vec<f64>,
}

/// A left pixel `(x, y)` and the right column `q` it matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSite {
    pub x: usize,
    pub y: usize,
    pub q: usize,
}

/// Sites whose left window and right strip both fit inside the images.
/// Pixels without ground truth are skipped.
pub fn patch_sites(gt: &DisparityMap, right_width: usize, patch: usize) -> Vec<PatchSite> {
    let half = patch / 2;
    let (w, h) = (gt.width(), gt.height());
    let mut sites = Vec::new();
    if patch == 0 || h < patch || w < patch {
        return sites;
    }
    for y in half..=h - (patch - half) {
        for x in half..=w - (patch - half) {
            let Some(d) = gt.get(x, y) else { continue };
            let q = x as i64 - d.round() as i64;
            let strip_start = q - (CENTER + half) as i64;
            let strip_end = strip_start + (patch + STRIP_EXTRA) as i64;
            if strip_start < 0 || strip_end > right_width as i64 {
                continue;
            }
            sites.push(PatchSite { x, y, q: q as usize });
        }
    }
    sites
}

/// Cuts the left patch centered on the site and the right strip centered
/// on its match. Images must contain both windows (see [`patch_sites`]).
pub fn cut_sample(left: &ImagePlane, right: &ImagePlane, site: PatchSite, patch: usize) -> TrainingSample {
    let half = patch / 2;
    let y0 = site.y - half;
    let left_patch = left
        .crop(site.x - half, y0, patch, patch)
        .expect("site lies inside the left image");
    let right_strip = right
        .crop(site.q - CENTER - half, y0, patch + STRIP_EXTRA, patch)
        .expect("site lies inside the right image");
    TrainingSample {
        left_patch: Tensor::from_plane(&left_patch),
        right_strip: Tensor::from_plane(&right_strip),
        label: make_label(),
    }
}

/// All training samples of one rectified pair, in raster order.
pub fn generate_patch_pairs<'a>(
    left: &'a ImagePlane,
    right: &'a ImagePlane,
    gt: &DisparityMap,
    patch: usize,
) -> impl Iterator<Item = TrainingSample> + 'a {
    patch_sites(gt, right.width(), patch)
        .into_iter()
        .map(move |site| cut_sample(left, right, site, patch))
}

/// Samples cut from seeded random-dot pairs. Each pair has one uniform
/// disparity drawn from `0..24` and contributes at most ten samples spread
/// evenly over its valid sites.
pub fn random_dot_samples(patch: usize, count: usize, seed: u64) -> Result<Vec<TrainingSample>> {
    const PER_PAIR: usize = 10;
    const MAX_SHIFT: u64 = 24;
    let (w, h) = (patch + STRIP_EXTRA + MAX_SHIFT as usize + 96, patch + 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let d = rng.random_range(0..MAX_SHIFT) as u32;
        let st = make_random_dot_stereogram(w, h, &vec![d; w * h], rng.random())?;
        let (left, right) = (normalize(&st.left), normalize(&st.right));
        let sites = patch_sites(&st.ground_truth, w, patch);
        let step = (sites.len() / PER_PAIR).max(1);
        let take = PER_PAIR.min(count - out.len());
        out.extend(
            sites
                .into_iter()
                .step_by(step)
                .take(take)
                .map(|site| cut_sample(&left, &right, site, patch)),
        );
    }
    Ok(out)
}

/// Random access to training samples.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> TrainingSample;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [TrainingSample] {
    fn len(&self) -> usize {
        <[TrainingSample]>::len(self)
    }

    fn sample(&self, index: usize) -> TrainingSample {
        self[index].clone()
    }
}

impl SampleSource for Vec<TrainingSample> {
    fn len(&self) -> usize {
        <[TrainingSample]>::len(self)
    }

    fn sample(&self, index: usize) -> TrainingSample {
        self[index].clone()
    }
}

/// Samples cut lazily from a set of image pairs; only the site list is
/// held in memory.
pub struct PatchDataset {
    pairs: Vec<(ImagePlane, ImagePlane)>,
    sites: Vec<(usize, PatchSite)>,
    patch: usize,
}

impl PatchDataset {
    pub fn new(patch: usize) -> Self {
        Self {
            pairs: Vec::new(),
            sites: Vec::new(),
            patch,
        }
    }

    pub fn add_pair(&mut self, left: ImagePlane, right: ImagePlane, gt: &DisparityMap) {
        let idx = self.pairs.len();
        self.sites.extend(
            patch_sites(gt, right.width(), self.patch)
                .into_iter()
                .map(|s| (idx, s)),
        );
        self.pairs.push((left, right));
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }
}

impl SampleSource for PatchDataset {
    fn len(&self) -> usize {
        self.sites.len()
    }

    fn sample(&self, index: usize) -> TrainingSample {
        let (pair, site) = self.sites[index];
        let (l, r) = &self.pairs[pair];
        cut_sample(l, r, site, self.patch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_pattern() {
        let l = make_label();
        assert_eq!(l.len(), 201);
        assert_eq!(l[100], 0.5);
        assert_eq!((l[99], l[101], l[98], l[102]), (0.2, 0.2, 0.05, 0.05));
        assert_eq!(l.iter().filter(|&&v| v == 0.0).count(), 196);
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..201 {
            assert_eq!(l[i], l[200 - i]);
        }
    }

    fn shifted_pair(w: usize, h: usize, shift: usize) -> (ImagePlane, ImagePlane) {
        let right = ImagePlane::from_fn(w, h, |x, y| ((x * 31 + y * 17) % 97) as f64 / 97.0);
        let left = ImagePlane::from_fn(w, h, |x, y| {
            if x >= shift {
                right.get(x - shift, y)
            } else {
                0.0
            }
        });
        (left, right)
    }

    #[test]
    fn strip_is_centered_on_the_match() {
        let (w, h, d, patch) = (420, 41, 5, 37);
        let (left, right) = shifted_pair(w, h, d);
        let gt = DisparityMap::constant(w, h, d as f64);
        let site = patch_sites(&gt, w, patch)
            .into_iter()
            .find(|s| s.x == 300 && s.y == 20)
            .unwrap();
        assert_eq!(site.q, 295);
        let s = cut_sample(&left, &right, site, patch);
        assert_eq!(s.right_strip.shape(), (1, 37, 237));
        let center = s.right_strip.window(0, CENTER, 37, 37).unwrap();
        assert_eq!(center, s.left_patch);
    }

    #[test]
    fn invalid_and_border_pixels_are_skipped() {
        let mut gt = DisparityMap::constant(260, 20, 0.0);
        gt.set_invalid(130, 10);
        let sites = patch_sites(&gt, 260, 13);
        assert!(!sites.iter().any(|s| s.x == 130 && s.y == 10));
        assert!(sites.iter().all(|s| s.y >= 6 && s.y <= 13));
        // strip needs 106 columns on each side of q
        assert!(sites.iter().all(|s| s.q >= 106 && s.q + 106 < 260));
        assert!(!sites.is_empty());
    }

    #[test]
    fn random_dot_samples_match_at_the_center() {
        let a = random_dot_samples(13, 25, 4).unwrap();
        assert_eq!(a.len(), 25);
        assert_eq!(a, random_dot_samples(13, 25, 4).unwrap());
        for s in &a {
            assert_eq!(s.right_strip.window(0, CENTER, 13, 13).unwrap(), s.left_patch);
        }
    }
}
