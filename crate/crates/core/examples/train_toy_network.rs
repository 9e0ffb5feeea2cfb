//! Trains a small deconvolution network on random-dot patch samples and
//! reports the loss curve and held-out top-1 accuracy.
//!
//! cargo run --release --example train_toy_network [iterations] [batch] [lr] [samples] [network]

use std::collections::BTreeMap;

use adsm_stereo::network::FeatureExtractor;
use adsm_stereo::pipeline::score_held_out;
use adsm_stereo::training::{random_dot_samples, score_sample, smoothed, train, TrainerConfig, CENTER};

fn main() -> adsm_stereo::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let config_text = args.get(5).map_or("1Deconv(3)&2Conv@13", String::as_str);
    let net = FeatureExtractor::from_config_str(config_text, 8, 1)?;
    let train_set = random_dot_samples(net.patch_size(), arg(4, 500.0) as usize, 1)?;
    let held_out = random_dot_samples(net.patch_size(), 100, 2)?;
    let config = TrainerConfig {
        batch_size: arg(2, 32.0) as usize,
        iterations: arg(1, 200.0) as usize,
        learning_rate: arg(3, 0.01),
        ..TrainerConfig::default()
    };

    let before = score_held_out(&net, &held_out, 100)?.expect("held-out samples");
    let start = std::time::Instant::now();
    let run = train(&train_set, net, &config)?;
    let curve = smoothed(&run.loss_trace, 20);
    for (i, l) in curve.iter().enumerate().step_by((curve.len() / 10).max(1)) {
        println!("iter {:>5}  smoothed loss {l:.4}", i + 1);
    }
    println!(
        "{} iterations in {:.1?}; smoothed loss {:.3} -> {:.3}",
        config.iterations,
        start.elapsed(),
        curve[0],
        curve[curve.len() - 1]
    );

    let after = score_held_out(&run.extractor, &held_out, 100)?.expect("held-out samples");
    println!(
        "held-out top-1: {:.0}% -> {:.0}% (loss {:.3} -> {:.3})",
        100.0 * before.top1_accuracy,
        100.0 * after.top1_accuracy,
        before.mean_loss,
        after.mean_loss
    );
    let mut offsets = BTreeMap::new();
    for s in &held_out {
        let r = score_sample(&run.extractor, s)?;
        let best = (0..r.len()).fold(0, |b, i| if r[i] > r[b] { i } else { b });
        *offsets.entry((best as i64 - CENTER as i64).clamp(-3, 3)).or_insert(0) += 1;
    }
    println!("held-out argmax offset from the true match (clamped to +-3): {offsets:?}");
    Ok(())
}
