//! Census cost, four-path SGM and post-processing on a two-plane
//! random-dot stereogram, scored against its ground truth.

use adsm_stereo::evaluation::{make_random_dot_stereogram, n_pixel_error, two_plane_field};
use adsm_stereo::imaging::normalize;
use adsm_stereo::pipeline::{match_planes, PipelineConfig};

fn main() -> adsm_stereo::Result<()> {
    let (w, h) = (128, 128);
    let field = two_plane_field(w, h, 0, 12);
    let pair = make_random_dot_stereogram(w, h, &field, 7)?;
    let (left, right) = (normalize(&pair.left), normalize(&pair.right));

    let config = PipelineConfig {
        max_disparity: 31,
        ..PipelineConfig::default()
    };
    let out = match_planes(&left, &right, &config, None)?;
    print!("{}", out.timing_report());
    println!(
        "{} of {} pixels passed the left/right check",
        out.consistent_pixels,
        w * h
    );

    let report = n_pixel_error(&out.disparity, &pair.ground_truth, &[0.5, 1.0, 2.0, 3.0])?;
    print!("{}", report.to_csv());
    Ok(())
}
