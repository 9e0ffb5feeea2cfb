//! Learned matching cost on a constant-shift random-dot pair.
//!
//! Trains the toy network (or loads one from a weights file), then reports
//! how often the raw cost volume already picks the true shift and what the
//! full SGM pipeline makes of it.
//!
//! cargo run --release --example learned_matching [weights.bin]

use adsm_stereo::cost_volume::build_dsi_learned;
use adsm_stereo::disparity::wta;
use adsm_stereo::evaluation::make_random_dot_stereogram;
use adsm_stereo::imaging::normalize;
use adsm_stereo::network::{load_weights, FeatureExtractor};
use adsm_stereo::pipeline::{match_planes, modal_disparity, CostSource, PipelineConfig};
use adsm_stereo::training::{random_dot_samples, train, TrainerConfig};

const SHIFT: u32 = 7;
const DMAX: usize = 15;

fn main() -> adsm_stereo::Result<()> {
    let net = match std::env::args().nth(1) {
        Some(path) => load_weights(path)?,
        None => {
            let net = FeatureExtractor::from_config_str("1Deconv(3)&2Conv@13", 8, 1)?;
            let samples = random_dot_samples(net.patch_size(), 500, 1)?;
            let config = TrainerConfig {
                batch_size: 32,
                iterations: 200,
                ..TrainerConfig::default()
            };
            println!("training {} on {} samples", "1Deconv(3)&2Conv@13", samples.len());
            train(&samples, net, &config)?.extractor
        }
    };

    let (w, h) = (160, 64);
    let st = make_random_dot_stereogram(w, h, &vec![SHIFT; w * h], 11)?;
    let (left, right) = (normalize(&st.left), normalize(&st.right));

    let dsi = build_dsi_learned(&left, &right, &net, DMAX)?;
    let raw = wta(&dsi);
    let (mut hits, mut total) = (0, 0);
    for y in 0..raw.height() {
        for x in DMAX..raw.width() {
            total += 1;
            hits += (raw.get(x, y) == Some(SHIFT as f64)) as usize;
        }
    }
    println!(
        "raw cost argmin = {SHIFT} on {hits}/{total} interior pixels ({:.1}%)",
        100.0 * hits as f64 / total as f64
    );

    let config = PipelineConfig {
        // the weights path is not read by match_planes
        cost: CostSource::Learned("in-memory".into()),
        max_disparity: DMAX,
        ..PipelineConfig::default()
    };
    let out = match_planes(&left, &right, &config, Some(&net))?;
    println!(
        "after SGM and post-processing: modal disparity {:?}, {} of {} pixels consistent",
        modal_disparity(&out.disparity),
        out.consistent_pixels,
        w * h
    );
    Ok(())
}
