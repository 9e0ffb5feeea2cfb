//! End-to-end runs: matching an image pair, training from a manifest,
//! evaluating a KITTI-style directory, and reporting network geometry.

use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use image::ImageFormat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cost_volume::{
    build_dsi_census, build_dsi_learned, build_dsi_sad, derive_right_dsi, write_dsi, DEFAULT_MAX_DISPARITY,
};
use crate::disparity::{
    apply_mask, consistency_check, fill_invalid, pad_to_full_at, subpixel_refine, wta,
    DEFAULT_CONSISTENCY_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::evaluation::{n_pixel_error, ErrorReport, DEFAULT_THRESHOLDS};
use crate::imaging::{encode_kitti_disparity, load_gray, load_kitti_disparity, normalize, DisparityMap, ImagePlane};
use crate::network::{encode_weights, load_weights, parse_network_config, FeatureExtractor, DEFAULT_CHANNELS};
use crate::sgm::{aggregate_all, Penalties};
use crate::training::{
    evaluate_sample, read_manifest, train_with_callback, PatchDataset, SampleSource, TrainerConfig, CENTER,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CostSource {
    Census,
    Sad,
    /// Feature extractor loaded from a weights file.
    Learned(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub cost: CostSource,
    pub max_disparity: usize,
    pub penalties: Penalties,
    pub consistency_threshold: f64,
    pub subpixel: bool,
    pub fill: bool,
    /// Census and SAD window side (odd).
    pub window: usize,
    pub dump_dsi: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cost: CostSource::Census,
            max_disparity: DEFAULT_MAX_DISPARITY,
            penalties: Penalties::default(),
            consistency_threshold: DEFAULT_CONSISTENCY_THRESHOLD,
            subpixel: true,
            fill: true,
            window: 5,
            dump_dsi: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_disparity < 1 {
            return Err(Error::InvalidInput("maximum disparity must be at least 1".into()));
        }
        Penalties::new(self.penalties.p1, self.penalties.p2)?;
        if !(self.consistency_threshold >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "consistency threshold {} must be non-negative",
                self.consistency_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct MatchOutput {
    /// Full-resolution disparity.
    pub disparity: DisparityMap,
    /// Pixels that passed the left/right check, before filling.
    pub consistent_pixels: usize,
    pub timings: Vec<StageTiming>,
}

impl MatchOutput {
    pub fn timing_report(&self) -> String {
        let mut s = String::new();
        for t in &self.timings {
            s.push_str(&format!("{:<12} {:>9.3} ms\n", t.stage, t.elapsed.as_secs_f64() * 1e3));
        }
        s
    }
}

struct Stages(Vec<StageTiming>);

impl Stages {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.at_stage(stage))?;
        self.0.push(StageTiming {
            stage,
            elapsed: start.elapsed(),
        });
        Ok(out)
    }
}

/// Runs the matching chain on in-memory images. `extractor` must be given
/// exactly when the cost source is learned.
pub fn match_planes(
    left: &ImagePlane,
    right: &ImagePlane,
    config: &PipelineConfig,
    extractor: Option<&FeatureExtractor>,
) -> Result<MatchOutput> {
    config.validate()?;
    let mut st = Stages(Vec::new());
    let d_max = config.max_disparity;
    let (dsi, offset) = st.run("build_dsi", || match (&config.cost, extractor) {
        (CostSource::Census, _) => Ok((build_dsi_census(left, right, config.window, d_max)?, 0)),
        (CostSource::Sad, _) => Ok((build_dsi_sad(left, right, config.window, d_max)?, 0)),
        (CostSource::Learned(_), Some(net)) => {
            Ok((build_dsi_learned(left, right, net, d_max)?, net.patch_size() / 2))
        }
        (CostSource::Learned(path), None) => Err(Error::InvalidInput(format!(
            "no extractor loaded for {}",
            path.display()
        ))),
    })?;
    let agg = st.run("aggregate", || Ok(aggregate_all(&dsi, config.penalties)))?;
    let coarse = st.run("wta", || Ok(wta(&agg)))?;
    let left_map = if config.subpixel {
        st.run("subpixel", || Ok(subpixel_refine(&agg, &coarse)))?
    } else {
        coarse
    };
    let right_map = st.run("right_wta", || Ok(wta(&derive_right_dsi(&agg))))?;
    let mask = st.run("consistency", || {
        consistency_check(&left_map, &right_map, config.consistency_threshold)
    })?;
    let consistent_pixels = mask.count();
    let filled = if config.fill {
        st.run("fill", || fill_invalid(&left_map, &mask))?
    } else {
        apply_mask(&left_map, &mask)
    };
    let disparity = st.run("pad", || {
        pad_to_full_at(&filled, left.width(), left.height(), offset, offset)
    })?;
    if let Some(path) = &config.dump_dsi {
        st.run("dump_dsi", || write_atomic(path, |tmp| write_dsi(tmp, &dsi)))?;
    }
    Ok(MatchOutput {
        disparity,
        consistent_pixels,
        timings: st.0,
    })
}

fn load_extractor(config: &PipelineConfig) -> Result<Option<FeatureExtractor>> {
    match &config.cost {
        CostSource::Learned(path) => load_weights(path).map(Some).map_err(|e| e.at_stage("load_weights")),
        _ => Ok(None),
    }
}

fn load_pair(left: &Path, right: &Path) -> Result<(ImagePlane, ImagePlane)> {
    let l = load_gray(left).map_err(|e| e.at_stage("load_images"))?;
    let r = load_gray(right).map_err(|e| e.at_stage("load_images"))?;
    Ok((normalize(&l), normalize(&r)))
}

/// Matches two image files and writes the disparity as a 16-bit KITTI
/// PNG. Weights and inputs are read before any work starts; on failure no
/// output file is left behind.
pub fn match_images(left: &Path, right: &Path, output: &Path, config: &PipelineConfig) -> Result<MatchOutput> {
    config.validate()?;
    let extractor = load_extractor(config)?;
    let (l, r) = load_pair(left, right)?;
    let mut out = match_planes(&l, &r, config, extractor.as_ref())?;
    let start = Instant::now();
    if let Err(e) = write_disparity_png(output, &out.disparity) {
        if let Some(dump) = &config.dump_dsi {
            let _ = fs::remove_file(dump);
        }
        return Err(e.at_stage("encode"));
    }
    out.timings.push(StageTiming {
        stage: "encode",
        elapsed: start.elapsed(),
    });
    Ok(out)
}

/// Encodes `map` as a KITTI disparity PNG via a temporary sibling file.
pub fn write_disparity_png(path: &Path, map: &DisparityMap) -> Result<()> {
    let raw = encode_kitti_disparity(map)?;
    let mut bytes = Vec::new();
    raw.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    write_bytes_atomic(path, &bytes)
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.partial"))
}

fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = temp_sibling(path);
    let result = write(&tmp).and_then(|()| fs::rename(&tmp, path).map_err(|e| Error::io(path, e)));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub(crate) fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |tmp| fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingJob {
    pub manifest: PathBuf,
    /// Layer-stack text, e.g. `37-1Deconv(5)&4Conv`.
    pub network: String,
    pub channels: usize,
    pub trainer: TrainerConfig,
    pub weights_out: PathBuf,
    pub loss_csv: Option<PathBuf>,
    /// Write `<stem>.iter<N>.<ext>` next to the weights every N iterations.
    pub checkpoint_every: Option<usize>,
    /// Held-out samples scored after training.
    pub validation_samples: usize,
}

impl TrainingJob {
    pub fn new(manifest: impl Into<PathBuf>, network: impl Into<String>, weights_out: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            network: network.into(),
            channels: DEFAULT_CHANNELS,
            trainer: TrainerConfig::default(),
            weights_out: weights_out.into(),
            loss_csv: None,
            checkpoint_every: None,
            validation_samples: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutScore {
    pub samples: usize,
    pub mean_loss: f64,
    /// Fraction whose highest-probability position is the true match.
    pub top1_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingSummary {
    pub loss_trace: Vec<f64>,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub train_samples: usize,
    pub validation: Option<HeldOutScore>,
    pub extractor: FeatureExtractor,
}

/// Mean loss and top-1 accuracy over up to `limit` evenly spaced samples.
pub fn score_held_out(net: &FeatureExtractor, data: &(impl SampleSource + ?Sized), limit: usize) -> Result<Option<HeldOutScore>> {
    let n = data.len().min(limit);
    if n == 0 {
        return Ok(None);
    }
    let step = data.len() / n;
    let (mut loss, mut hits) = (0.0, 0usize);
    for i in 0..n {
        let rep = evaluate_sample(net, &data.sample(i * step))?;
        let best = rep
            .probabilities
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &p)| if p > acc.1 { (j, p) } else { acc })
            .0;
        hits += usize::from(best == CENTER);
        loss += rep.loss;
    }
    Ok(Some(HeldOutScore {
        samples: n,
        mean_loss: loss / n as f64,
        top1_accuracy: hits as f64 / n as f64,
    }))
}

/// Checkpoint file written after `iteration`: `<stem>.iter<N>.<ext>`.
pub fn checkpoint_path(weights: &Path, iteration: usize) -> PathBuf {
    let stem = weights.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match weights.extension() {
        Some(ext) => format!("{stem}.iter{iteration}.{}", ext.to_string_lossy()),
        None => format!("{stem}.iter{iteration}"),
    };
    weights.with_file_name(name)
}

/// Trains a network on the pairs listed in a manifest.
///
/// Pairs are split 75/25 by image (seeded) into training and held-out sets.
/// Every referenced file is loaded before the first iteration. With a fixed
/// seed the weights file is byte-identical across runs.
pub fn run_training(job: &TrainingJob) -> Result<TrainingSummary> {
    job.trainer.validate()?;
    let cfg = parse_network_config(&job.network)?;
    let net = FeatureExtractor::from_config(&cfg, job.channels, job.trainer.seed)?;
    net.margin()?;
    let entries = read_manifest(&job.manifest)?;

    let mut pairs = Vec::with_capacity(entries.len());
    for e in &entries {
        let (l, r) = load_pair(&e.left, &e.right)?;
        let gt = load_kitti_disparity(&e.ground_truth)?;
        if gt.width() != l.width() || gt.height() != l.height() {
            return Err(Error::Shape(format!(
                "{} does not match the size of {}",
                e.ground_truth.display(),
                e.left.display()
            )));
        }
        pairs.push((l, r, gt));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(job.trainer.seed));
    let held = pairs.len() / 4;
    let mut train_set = PatchDataset::new(cfg.patch_size);
    let mut held_set = PatchDataset::new(cfg.patch_size);
    let mut slots: Vec<Option<_>> = pairs.into_iter().map(Some).collect();
    for (rank, &i) in order.iter().enumerate() {
        let (l, r, gt) = slots[i].take().expect("each pair used once");
        let target = if rank < held { &mut held_set } else { &mut train_set };
        target.add_pair(l, r, &gt);
    }
    if train_set.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no training sample fits a {}-pixel patch with a {}-pixel strip",
            cfg.patch_size,
            cfg.patch_size + crate::training::STRIP_EXTRA
        )));
    }

    let run = train_with_callback(&train_set, net, &job.trainer, |it, net| {
        match job.checkpoint_every {
            Some(every) if every > 0 && it % every == 0 && it < job.trainer.iterations => {
                write_bytes_atomic(&checkpoint_path(&job.weights_out, it), &encode_weights(net))
            }
            _ => Ok(()),
        }
    })?;
    write_bytes_atomic(&job.weights_out, &encode_weights(&run.extractor))?;
    if let Some(csv) = &job.loss_csv {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in run.loss_trace.iter().enumerate() {
            s.push_str(&format!("{},{l}\n", i + 1));
        }
        write_bytes_atomic(csv, s.as_bytes())?;
    }
    let validation = score_held_out(&run.extractor, &held_set, job.validation_samples)?;
    Ok(TrainingSummary {
        loss_trace: run.loss_trace,
        train_pairs: train_set.pair_count(),
        validation_pairs: held_set.pair_count(),
        train_samples: train_set.len(),
        validation,
        extractor: run.extractor,
    })
}

/// Layer-by-layer geometry of a network config.
#[derive(Debug, Clone, PartialEq)]
pub struct InspectReport {
    pub name: String,
    pub patch_size: usize,
    /// Layer label with its output size.
    pub layers: Vec<(String, usize)>,
    pub parameters: usize,
    pub channels: usize,
    /// Final spatial size, `None` if the chain breaks before the end.
    pub output_size: Option<usize>,
}

impl InspectReport {
    pub fn passes(&self) -> bool {
        self.output_size == Some(1)
    }

    /// Sizes from the input through every layer.
    pub fn size_chain(&self) -> Vec<usize> {
        std::iter::once(self.patch_size)
            .chain(self.layers.iter().map(|(_, s)| *s))
            .collect()
    }
}

impl fmt::Display for InspectReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "network    {}", self.name)?;
        writeln!(f, "input      {0}x{0}", self.patch_size)?;
        for (label, size) in &self.layers {
            writeln!(f, "  {label:<20} -> {size}x{size}")?;
        }
        let chain: Vec<String> = self.size_chain().iter().map(|s| s.to_string()).collect();
        writeln!(f, "chain      {}", chain.join(" -> "))?;
        writeln!(f, "parameters {} ({} channels)", self.parameters, self.channels)?;
        match self.output_size {
            Some(1) => writeln!(f, "geometry   PASS (1x1 output)"),
            Some(s) => writeln!(f, "geometry   FAIL (output {s}x{s}, expected 1x1)"),
            None => writeln!(f, "geometry   FAIL (sizes collapse before the last layer)"),
        }
    }
}

pub fn inspect(network: &str, channels: usize) -> Result<InspectReport> {
    let cfg = parse_network_config(network)?;
    let net = FeatureExtractor::from_config(&cfg, channels, 0)?;
    let mut layers = Vec::with_capacity(cfg.layers.len());
    let mut size = Some(cfg.patch_size);
    for stage in &cfg.layers {
        size = size.and_then(|s| {
            let one = crate::network::NetworkConfig {
                name: String::new(),
                patch_size: s,
                layers: vec![*stage],
            };
            one.size_chain(s).ok().map(|c| c[1])
        });
        match size {
            Some(s) => layers.push((stage.to_string(), s)),
            None => break,
        }
    }
    let output_size = (layers.len() == cfg.layers.len()).then(|| layers.last().map(|l| l.1)).flatten();
    Ok(InspectReport {
        name: cfg.name.clone(),
        patch_size: cfg.patch_size,
        layers,
        parameters: net.count_parameters(),
        channels,
        output_size,
    })
}

/// One image of a KITTI-style evaluation.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub name: String,
    pub report: ErrorReport,
}

/// Scores every frame in `dir/disp_noc_0`. Estimates come from
/// `predictions/<name>` when given, otherwise from matching
/// `dir/image_2/<name>` against `dir/image_3/<name>`.
pub fn evaluate_kitti_dir(
    dir: &Path,
    predictions: Option<&Path>,
    config: &PipelineConfig,
    thresholds: &[f64],
) -> Result<(ErrorReport, Vec<FrameResult>)> {
    let gt_dir = dir.join("disp_noc_0");
    let mut names: Vec<String> = fs::read_dir(&gt_dir)
        .map_err(|e| Error::io(&gt_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidInput(format!("no ground-truth PNG in {}", gt_dir.display())));
    }
    let extractor = if predictions.is_none() {
        config.validate()?;
        load_extractor(config)?
    } else {
        None
    };
    let thresholds = if thresholds.is_empty() {
        &DEFAULT_THRESHOLDS[..]
    } else {
        thresholds
    };
    let mut frames = Vec::with_capacity(names.len());
    for name in names {
        let gt = load_kitti_disparity(gt_dir.join(&name))?;
        let estimate = match predictions {
            Some(p) => load_kitti_disparity(p.join(&name))?,
            None => {
                let (l, r) = load_pair(&dir.join("image_2").join(&name), &dir.join("image_3").join(&name))?;
                match_planes(&l, &r, config, extractor.as_ref())?.disparity
            }
        };
        let report = n_pixel_error(&estimate, &gt, thresholds)?;
        frames.push(FrameResult { name, report });
    }
    let total = ErrorReport::combine(&frames.iter().map(|f| f.report.clone()).collect::<Vec<_>>())?;
    Ok((total, frames))
}

/// Most frequent integer disparity among valid pixels.
pub fn modal_disparity(map: &DisparityMap) -> Option<i64> {
    let mut counts = std::collections::BTreeMap::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            if let Some(d) = map.get(x, y) {
                *counts.entry(d.round() as i64).or_insert(0usize) += 1;
            }
        }
    }
    counts.into_iter().max_by_key(|&(d, c)| (c, std::cmp::Reverse(d))).map(|(d, _)| d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::make_random_dot_stereogram;

    fn pair(shift: u32, w: usize, h: usize) -> (ImagePlane, ImagePlane, DisparityMap) {
        let s = make_random_dot_stereogram(w, h, &vec![shift; w * h], 3).unwrap();
        (normalize(&s.left), normalize(&s.right), s.ground_truth)
    }

    #[test]
    fn identical_views_give_zero_map() {
        let (l, _, _) = pair(0, 40, 20);
        let cfg = PipelineConfig {
            max_disparity: 8,
            ..PipelineConfig::default()
        };
        let out = match_planes(&l, &l, &cfg, None).unwrap();
        assert_eq!(out.disparity, DisparityMap::constant(40, 20, 0.0));
        let names: Vec<_> = out.timings.iter().map(|t| t.stage).collect();
        assert_eq!(names.first(), Some(&"build_dsi"));
        assert_eq!(names.last(), Some(&"pad"));
    }

    #[test]
    fn constant_shift_is_modal() {
        let (l, r, _) = pair(7, 64, 24);
        let cfg = PipelineConfig {
            max_disparity: 15,
            ..PipelineConfig::default()
        };
        let out = match_planes(&l, &r, &cfg, None).unwrap();
        assert_eq!(modal_disparity(&out.disparity), Some(7));
        let sad = PipelineConfig {
            cost: CostSource::Sad,
            ..cfg
        };
        assert_eq!(modal_disparity(&match_planes(&l, &r, &sad, None).unwrap().disparity), Some(7));
    }

    #[test]
    fn learned_without_weights_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let (l, r, _) = pair(2, 20, 12);
        let (lp, rp) = (dir.path().join("l.png"), dir.path().join("r.png"));
        let to_gray = |p: &ImagePlane| {
            image::GrayImage::from_fn(p.width() as u32, p.height() as u32, |x, y| {
                image::Luma([(p.get(x as usize, y as usize) * 255.0).round() as u8])
            })
        };
        to_gray(&l).save(&lp).unwrap();
        to_gray(&r).save(&rp).unwrap();
        let out = dir.path().join("d.png");
        let cfg = PipelineConfig {
            cost: CostSource::Learned(dir.path().join("missing.bin")),
            ..PipelineConfig::default()
        };
        let err = match_images(&lp, &rp, &out, &cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "load_weights", .. }));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn inspect_chains() {
        let r = inspect("37-4Conv", 64).unwrap();
        assert_eq!(r.size_chain(), vec![37, 28, 19, 10, 1]);
        assert!(r.passes());
        let r = inspect("37-1Deconv(5)&4Conv", 64).unwrap();
        assert_eq!(r.size_chain(), vec![37, 41, 31, 21, 11, 1]);
        let r = inspect("37-3Deconv&6Conv", 64).unwrap();
        assert!(!r.passes());
        assert!(r.to_string().contains("FAIL"));
    }

    #[test]
    fn checkpoint_names() {
        assert_eq!(checkpoint_path(Path::new("/w/net.bin"), 50), PathBuf::from("/w/net.iter50.bin"));
        assert_eq!(checkpoint_path(Path::new("net"), 5), PathBuf::from("net.iter5"));
    }

    #[test]
    fn invalid_config_rejected() {
        let (l, r, _) = pair(1, 20, 10);
        let cfg = PipelineConfig {
            max_disparity: 0,
            ..PipelineConfig::default()
        };
        assert!(match_planes(&l, &r, &cfg, None).is_err());
    }
}
