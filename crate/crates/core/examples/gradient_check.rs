//! Compares backpropagated gradients of the batch loss with central finite
//! differences for a few small networks. Differences below 1e-7 are
//! treated as round-off and left out of the relative figure.

use adsm_stereo::network::{FeatureExtractor, Tensor};
use adsm_stereo::training::{batch_loss_and_gradients, make_label, TrainingSample, STRIP_EXTRA};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sample(rng: &mut ChaCha8Rng, patch: usize) -> TrainingSample {
    let mut t = |w: usize| {
        let data = (0..patch * w).map(|_| rng.random::<f64>()).collect();
        Tensor::from_vec(1, patch, w, data).unwrap()
    };
    TrainingSample {
        left_patch: t(patch),
        right_strip: t(patch + STRIP_EXTRA),
        label: make_label(),
    }
}

fn main() -> adsm_stereo::Result<()> {
    let h = 1e-6;
    for (i, config) in ["2Conv(3)", "1Deconv(2)&2Conv(3)", "1Deconv(3)&2Conv@7", "3Conv@7"].iter().enumerate() {
        let mut net = FeatureExtractor::from_config_str(config, 3, i as u64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let batch: Vec<_> = (0..3).map(|_| random_sample(&mut rng, net.patch_size())).collect();
        let analytic = batch_loss_and_gradients(&net, &batch)?.gradients.0;
        let base = net.parameters();
        let (mut worst, mut worst_abs) = (0.0f64, 0.0f64);
        for j in 0..base.len() {
            let mut p = base.clone();
            p[j] = base[j] + h;
            net.set_parameters(&p)?;
            let up = batch_loss_and_gradients(&net, &batch)?.loss;
            p[j] = base[j] - h;
            net.set_parameters(&p)?;
            let down = batch_loss_and_gradients(&net, &batch)?.loss;
            let numeric = (up - down) / (2.0 * h);
            let diff = (numeric - analytic[j]).abs();
            worst_abs = worst_abs.max(diff);
            if diff > 1e-7 {
                worst = worst.max(diff / numeric.abs().max(analytic[j].abs()));
            }
        }
        net.set_parameters(&base)?;
        println!(
            "{config:<22} {:>4} parameters  worst relative {worst:.2e}  worst absolute {worst_abs:.2e}",
            base.len()
        );
    }
    Ok(())
}
