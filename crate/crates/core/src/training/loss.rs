use crate::error::{Error, Result};

/// Floor applied to probabilities before taking the log.
pub const LOG_EPS: f64 = 1e-12;

/// Numerically stable softmax (max subtracted before exponentiating).
pub fn softmax(r: &[f64]) -> Vec<f64> {
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = r.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-sum_j target[j] * ln(max(probs[j], eps))`.
pub fn cross_entropy(probs: &[f64], target: &[f64]) -> Result<f64> {
    if probs.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} probabilities vs {} targets",
            probs.len(),
            target.len()
        )));
    }
    Ok(-probs
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(p, t)| t * p.max(LOG_EPS).ln())
        .sum::<f64>())
}

/// Loss value and predicted distribution for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub probabilities: Vec<f64>,
}

/// Softmax cross-entropy of scores `r` against `target`, with the gradient
/// w.r.t. the scores (`p - target`, valid since `target` sums to 1).
///
/// The loss is taken from the log-softmax directly, without the
/// probability floor of [`cross_entropy`], so it stays consistent with the
/// gradient when the softmax saturates.
pub fn softmax_cross_entropy(r: &[f64], target: &[f64]) -> Result<(LossReport, Vec<f64>)> {
    if r.len() != target.len() {
        return Err(Error::Shape(format!("{} scores vs {} targets", r.len(), target.len())));
    }
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = max + r.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = -r
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(v, t)| t * (v - log_sum))
        .sum::<f64>();
    let probabilities = softmax(r);
    let grad = probabilities.iter().zip(target).map(|(p, t)| p - t).collect();
    Ok((
        LossReport {
            loss,
            probabilities,
        },
        grad,
    ))
}
