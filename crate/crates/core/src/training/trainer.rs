use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{softmax_cross_entropy, LossReport};
use super::samples::{SampleSource, TrainingSample};
use crate::error::{Error, Result};
use crate::network::{feature_columns, similarity_scores, FeatureExtractor, ForwardTrace, Gradients, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Fraction of the run after which the rate is multiplied by `lr_decay`.
    pub decay_at: f64,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            iterations: 40_000,
            learning_rate: 0.01,
            momentum: 0.9,
            decay_at: 0.75,
            lr_decay: 0.1,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::InvalidInput(format!(
                "batch size ({}) and iterations ({}) must be at least 1",
                self.batch_size, self.iterations
            )));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput(format!(
                "learning rate {} / momentum {} out of range",
                self.learning_rate, self.momentum
            )));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        let decay_iter = (self.decay_at * self.iterations as f64).round() as usize;
        if iteration >= decay_iter {
            self.learning_rate * self.lr_decay
        } else {
            self.learning_rate
        }
    }
}

/// Mean loss and parameter gradients over a batch.
pub struct BatchResult {
    pub loss: f64,
    pub gradients: Gradients,
    pub reports: Vec<LossReport>,
    left_trace: ForwardTrace,
    right_trace: ForwardTrace,
}

/// Forward both branches in training mode, score with the dot-product head,
/// and backpropagate the mean softmax cross-entropy.
pub fn batch_loss_and_gradients(net: &FeatureExtractor, batch: &[TrainingSample]) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let lefts: Vec<Tensor> = batch.iter().map(|s| s.left_patch.clone()).collect();
    let rights: Vec<Tensor> = batch.iter().map(|s| s.right_strip.clone()).collect();
    let (out_l, left_trace) = net.forward_train(&lefts)?;
    let (out_r, right_trace) = net.forward_train(&rights)?;

    let scale = 1.0 / batch.len() as f64;
    let heads = batch
        .par_iter()
        .zip(out_l.par_iter().zip(out_r.par_iter()))
        .map(|(sample, (ol, or))| head_backward(sample, ol, or, scale))
        .collect::<Result<Vec<_>>>()?;

    let mut loss = 0.0;
    let mut d_left = Vec::with_capacity(batch.len());
    let mut d_right = Vec::with_capacity(batch.len());
    let mut reports = Vec::with_capacity(batch.len());
    for (report, dl, dr) in heads {
        loss += report.loss * scale;
        reports.push(report);
        d_left.push(dl);
        d_right.push(dr);
    }

    let mut gradients = net.backward(&left_trace, d_left)?;
    gradients.add_assign(&net.backward(&right_trace, d_right)?);
    Ok(BatchResult {
        loss,
        gradients,
        reports,
        left_trace,
        right_trace,
    })
}

/// Loss of one sample and gradients w.r.t. the two branch outputs,
/// scaled by `scale`.
fn head_backward(
    sample: &TrainingSample,
    out_left: &Tensor,
    out_right: &Tensor,
    scale: f64,
) -> Result<(LossReport, Tensor, Tensor)> {
    if out_left.height() != 1 || out_left.width() != 1 {
        return Err(Error::Geometry(format!(
            "left branch output is {}x{}, expected 1x1",
            out_left.height(),
            out_left.width()
        )));
    }
    let left = out_left.column(0, 0);
    let right = feature_columns(out_right)?;
    if right.len() != sample.label.len() {
        return Err(Error::Geometry(format!(
            "right branch yields {} positions for a {}-entry label",
            right.len(),
            sample.label.len()
        )));
    }
    let r = similarity_scores(&left, &right)?;
    let (report, dr) = softmax_cross_entropy(&r, &sample.label)?;

    let channels = left.len();
    let mut d_left = Tensor::zeros(channels, 1, 1);
    let mut d_right = Tensor::zeros(channels, 1, right.len());
    for c in 0..channels {
        let mut acc = 0.0;
        for (n, g) in dr.iter().enumerate() {
            acc += g * right[n][c];
            d_right.set(c, 0, n, g * left[c] * scale);
        }
        d_left.set(c, 0, 0, acc * scale);
    }
    Ok((report, d_left, d_right))
}

/// Inference-mode similarity scores of one sample (one per strip position).
pub fn score_sample(net: &FeatureExtractor, sample: &TrainingSample) -> Result<Vec<f64>> {
    let left = net.extract_features(&sample.left_patch)?;
    let right = net.extract_features(&sample.right_strip)?;
    similarity_scores(&left.column(0, 0), &feature_columns(&right)?)
}

/// Inference-mode loss of one sample.
pub fn evaluate_sample(net: &FeatureExtractor, sample: &TrainingSample) -> Result<LossReport> {
    let r = score_sample(net, sample)?;
    Ok(softmax_cross_entropy(&r, &sample.label)?.0)
}

pub struct TrainingRun {
    pub extractor: FeatureExtractor,
    /// Mean batch loss per iteration.
    pub loss_trace: Vec<f64>,
}

/// Minibatch SGD with momentum. Batches are drawn from a seeded per-epoch
/// shuffle, so a run is reproducible given the seed.
pub fn train(
    dataset: &(impl SampleSource + ?Sized),
    extractor: FeatureExtractor,
    config: &TrainerConfig,
) -> Result<TrainingRun> {
    train_with_callback(dataset, extractor, config, |_, _| Ok(()))
}

/// As [`train`], invoking `after_iteration(iteration, extractor)` after
/// every parameter update (1-based iteration).
pub fn train_with_callback(
    dataset: &(impl SampleSource + ?Sized),
    mut net: FeatureExtractor,
    config: &TrainerConfig,
    mut after_iteration: impl FnMut(usize, &FeatureExtractor) -> Result<()>,
) -> Result<TrainingRun> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();
    let mut velocity = vec![0.0; net.count_parameters()];
    let mut loss_trace = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let mut indices = Vec::with_capacity(config.batch_size);
        while indices.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            indices.push(order[cursor]);
            cursor += 1;
        }
        let batch: Vec<TrainingSample> = indices.par_iter().map(|&i| dataset.sample(i)).collect();
        let result = batch_loss_and_gradients(&net, &batch)?;
        if !result.loss.is_finite() {
            return Err(Error::Domain(format!("loss diverged at iteration {it}")));
        }
        loss_trace.push(result.loss);

        let lr = config.learning_rate_at(it);
        let mut params = net.parameters();
        for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&result.gradients.0) {
            *v = config.momentum * *v - lr * g;
            *p += *v;
        }
        net.set_parameters(&params)?;
        net.update_running_stats(&result.left_trace);
        net.update_running_stats(&result.right_trace);
        after_iteration(it + 1, &net)?;
    }
    Ok(TrainingRun {
        extractor: net,
        loss_trace,
    })
}

/// Trailing moving average with the given window.
pub fn smoothed(trace: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(trace.len());
    let mut sum = 0.0;
    for (i, v) in trace.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= trace[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{generate_patch_pairs, make_label};
    use crate::evaluation::make_random_dot_stereogram;
    use crate::imaging::normalize;

    fn toy_samples(n: usize, patch: usize) -> Vec<TrainingSample> {
        let field = vec![3u32; 240 * 12];
        let st = make_random_dot_stereogram(240, 12, &field, 9).unwrap();
        let (l, r) = (normalize(&st.left), normalize(&st.right));
        generate_patch_pairs(&l, &r, &st.ground_truth, patch).take(n).collect()
    }

    #[test]
    fn logit_gradient_is_p_minus_target() {
        let r: Vec<f64> = (0..201).map(|i| (i as f64 * 0.37).sin()).collect();
        let (rep, g) = softmax_cross_entropy(&r, &make_label()).unwrap();
        for j in 0..201 {
            assert!((g[j] - (rep.probabilities[j] - make_label()[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_sample_doubles_summed_gradient() {
        let net = FeatureExtractor::from_config_str("1Deconv(2)&2Conv(3)", 3, 1).unwrap();
        let s = toy_samples(1, net.patch_size()).remove(0);
        let one = batch_loss_and_gradients(&net, std::slice::from_ref(&s)).unwrap();
        let two = batch_loss_and_gradients(&net, &[s.clone(), s]).unwrap();
        // undo the batch mean: the summed gradient is twice the single one
        for (a, b) in one.gradients.0.iter().zip(&two.gradients.0) {
            let summed = 2.0 * b;
            assert!((summed - 2.0 * a).abs() <= 1e-9 * a.abs().max(1e-6), "{a} vs {b}");
        }
        assert!((one.loss - two.loss).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let net = FeatureExtractor::from_config_str("2Conv(3)", 2, 3).unwrap();
        let cfg = TrainerConfig {
            batch_size: 2,
            iterations: 3,
            learning_rate: 0.0,
            ..TrainerConfig::default()
        };
        let run = train(&toy_samples(4, 5), net.clone(), &cfg).unwrap();
        assert_eq!(run.extractor.parameters(), net.parameters());
        assert_eq!(run.loss_trace.len(), 3);
    }

    #[test]
    fn empty_dataset_and_bad_config_rejected() {
        let net = FeatureExtractor::from_config_str("2Conv(3)", 2, 3).unwrap();
        let empty: Vec<TrainingSample> = vec![];
        assert!(train(&empty, net.clone(), &TrainerConfig::default()).is_err());
        let cfg = TrainerConfig {
            batch_size: 0,
            ..TrainerConfig::default()
        };
        assert!(train(&toy_samples(2, 5), net, &cfg).is_err());
    }

    #[test]
    fn schedule_decays_at_three_quarters() {
        let cfg = TrainerConfig {
            iterations: 100,
            ..TrainerConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(74), 0.01);
        assert!((cfg.learning_rate_at(75) - 0.001).abs() < 1e-18);
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smoothed(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }
}
