use std::path::PathBuf;
use std::process::ExitCode;

use adsm_stereo::evaluation::{make_random_dot_stereogram, n_pixel_error, two_plane_field, DEFAULT_THRESHOLDS};
use adsm_stereo::imaging::{load_kitti_disparity, save_gray};
use adsm_stereo::pipeline::{
    evaluate_kitti_dir, inspect, match_images, run_training, write_disparity_png, CostSource, PipelineConfig,
    TrainingJob,
};
use adsm_stereo::sgm::Penalties;
use adsm_stereo::training::TrainerConfig;
use adsm_stereo::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adsm", version, about = "Dense stereo matching with learned or census costs and SGM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a feature extractor from a manifest of (left, right, disparity) triples.
    Train(TrainArgs),
    /// Compute a disparity PNG for a rectified pair.
    Match(MatchArgs),
    /// Score disparity estimates against ground truth.
    Eval(EvalArgs),
    /// Print the layer geometry and parameter count of a network config.
    Inspect(InspectArgs),
    /// Write a random-dot stereo pair with ground truth.
    Stereogram(StereogramArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Cost {
    Census,
    Sad,
    Learned,
}

#[derive(Args)]
struct MatchOptions {
    #[arg(long, value_enum, default_value = "census")]
    cost: Cost,
    /// Weights file for `--cost learned`.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 127)]
    dmax: usize,
    #[arg(long, default_value_t = 30.0)]
    p1: f64,
    #[arg(long, default_value_t = 160.0)]
    p2: f64,
    #[arg(long, default_value_t = 1.0)]
    consistency_threshold: f64,
    #[arg(long)]
    no_subpixel: bool,
    #[arg(long)]
    no_fill: bool,
    /// Census/SAD window side.
    #[arg(long, default_value_t = 5)]
    window: usize,
}

impl MatchOptions {
    fn config(&self, dump_dsi: Option<PathBuf>) -> Result<PipelineConfig> {
        let cost = match self.cost {
            Cost::Census => CostSource::Census,
            Cost::Sad => CostSource::Sad,
            Cost::Learned => CostSource::Learned(
                self.weights
                    .clone()
                    .ok_or_else(|| Error::InvalidInput("--cost learned needs --weights".into()))?,
            ),
        };
        Ok(PipelineConfig {
            cost,
            max_disparity: self.dmax,
            penalties: Penalties::new(self.p1, self.p2)?,
            consistency_threshold: self.consistency_threshold,
            subpixel: !self.no_subpixel,
            fill: !self.no_fill,
            window: self.window,
            dump_dsi,
        })
    }
}

#[derive(Args)]
struct MatchArgs {
    left: PathBuf,
    right: PathBuf,
    /// Output 16-bit disparity PNG.
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the raw cost volume.
    #[arg(long)]
    dump_dsi: Option<PathBuf>,
    #[command(flatten)]
    opts: MatchOptions,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Network config, e.g. `37-1Deconv(5)&4Conv`.
    #[arg(long, default_value = "37-1Deconv(5)&4Conv")]
    network: String,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 40_000)]
    iterations: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// KITTI-style directory with image_2/, image_3/ and disp_noc_0/.
    #[arg(long, conflicts_with_all = ["estimate", "gt"])]
    kitti: Option<PathBuf>,
    /// Directory of precomputed estimates named like the ground truth.
    #[arg(long, requires = "kitti")]
    pred: Option<PathBuf>,
    /// Single estimate PNG (with --gt).
    #[arg(long, requires = "gt")]
    estimate: Option<PathBuf>,
    #[arg(long, requires = "estimate")]
    gt: Option<PathBuf>,
    /// Comma-separated pixel thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
    thresholds: Vec<f64>,
    /// Write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    opts: MatchOptions,
}

#[derive(Args)]
struct InspectArgs {
    network: String,
    #[arg(long, default_value_t = 64)]
    channels: usize,
}

#[derive(Args)]
struct StereogramArgs {
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    /// Background disparity.
    #[arg(long, default_value_t = 0)]
    back: u32,
    /// Disparity of the centered foreground square (defaults to --back).
    #[arg(long)]
    front: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving left.png, right.png and disp.png.
    #[arg(short, long)]
    output: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Match(a) => {
            let cfg = a.opts.config(a.dump_dsi)?;
            let out = match_images(&a.left, &a.right, &a.output, &cfg)?;
            eprint!("{}", out.timing_report());
            println!(
                "wrote {} ({} of {} pixels passed the left/right check)",
                a.output.display(),
                out.consistent_pixels,
                out.disparity.width() * out.disparity.height()
            );
        }
        Command::Train(a) => {
            let job = TrainingJob {
                channels: a.channels,
                trainer: TrainerConfig {
                    batch_size: a.batch,
                    iterations: a.iterations,
                    learning_rate: a.lr,
                    seed: a.seed,
                    ..TrainerConfig::default()
                },
                loss_csv: a.loss_csv,
                checkpoint_every: a.checkpoint_every,
                ..TrainingJob::new(a.manifest, a.network, a.output.clone())
            };
            let s = run_training(&job)?;
            println!(
                "trained on {} samples from {} pairs; final loss {:.4}",
                s.train_samples,
                s.train_pairs,
                s.loss_trace.last().copied().unwrap_or(f64::NAN)
            );
            if let Some(v) = s.validation {
                println!(
                    "held-out ({} pairs, {} samples): loss {:.4}, top-1 {:.1}%",
                    s.validation_pairs,
                    v.samples,
                    v.mean_loss,
                    100.0 * v.top1_accuracy
                );
            }
            println!("wrote {}", a.output.display());
        }
        Command::Eval(a) => {
            let report = match (&a.kitti, &a.estimate, &a.gt) {
                (Some(dir), _, _) => {
                    let cfg = a.opts.config(None)?;
                    let (total, frames) = evaluate_kitti_dir(dir, a.pred.as_deref(), &cfg, &a.thresholds)?;
                    for f in &frames {
                        let cells: Vec<String> = f
                            .report
                            .rows
                            .iter()
                            .map(|r| format!("{}px {:.2}%", r.threshold, r.error_percent))
                            .collect();
                        eprintln!("{}: {}", f.name, cells.join("  "));
                    }
                    total
                }
                (None, Some(est), Some(gt)) => {
                    n_pixel_error(&load_kitti_disparity(est)?, &load_kitti_disparity(gt)?, &a.thresholds)?
                }
                _ => return Err(Error::InvalidInput("eval needs --kitti DIR or --estimate and --gt".into())),
            };
            print!("{}", report.to_csv());
            if let Some(csv) = a.csv {
                report.write_csv(csv)?;
            }
        }
        Command::Inspect(a) => print!("{}", inspect(&a.network, a.channels)?),
        Command::Stereogram(a) => {
            let field = two_plane_field(a.width, a.height, a.back, a.front.unwrap_or(a.back));
            let s = make_random_dot_stereogram(a.width, a.height, &field, a.seed)?;
            std::fs::create_dir_all(&a.output).map_err(|e| Error::Io {
                path: a.output.clone(),
                source: e,
            })?;
            save_gray(a.output.join("left.png"), &s.left)?;
            save_gray(a.output.join("right.png"), &s.right)?;
            write_disparity_png(&a.output.join("disp.png"), &s.ground_truth)?;
            println!("wrote left.png, right.png, disp.png to {}", a.output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
