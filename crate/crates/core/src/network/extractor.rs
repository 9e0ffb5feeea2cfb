use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{parse_network_config, NetworkConfig};
use super::layers::{relu, relu_backward, BatchNorm, BatchNormTrace, ConvKind, ConvLayer};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Output width used by the published networks.
pub const DEFAULT_CHANNELS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    BatchNorm(BatchNorm),
    Relu,
}

impl Layer {
    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.parameter_count(),
            Layer::BatchNorm(bn) => 2 * bn.channels(),
            Layer::Relu => 0,
        }
    }
}

/// One branch of the Siamese network. Both branches share this instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    layers: Vec<Layer>,
    patch_size: usize,
}

enum LayerTrace {
    Conv(Vec<Tensor>),
    BatchNorm(BatchNormTrace),
    Relu(Vec<Tensor>),
}

/// Intermediate values of a training-mode batch forward pass.
pub struct ForwardTrace {
    layers: Vec<LayerTrace>,
}

/// Gradients of a scalar loss w.r.t. every learnable parameter, laid out
/// like [`FeatureExtractor::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Gradients(vec![0.0; len])
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.0.len(), other.0.len());
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|v| *v *= alpha);
    }
}

impl FeatureExtractor {
    /// Checks the channel chain and that the stack ends in a bare
    /// convolution.
    pub fn new(layers: Vec<Layer>, patch_size: usize) -> Result<Self> {
        let mut channels: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    if let Some(ch) = channels {
                        if ch != c.in_channels {
                            return Err(Error::Shape(format!(
                                "layer {i} expects {} channels but receives {ch}",
                                c.in_channels
                            )));
                        }
                    }
                    channels = Some(c.out_channels);
                }
                Layer::BatchNorm(bn) => match channels {
                    Some(ch) if ch == bn.channels() => {}
                    _ => {
                        return Err(Error::Shape(format!(
                            "batch norm at layer {i} does not match the preceding channel count"
                        )))
                    }
                },
                Layer::Relu => {
                    if channels.is_none() {
                        return Err(Error::Shape("ReLU before any convolution".into()));
                    }
                }
            }
        }
        match layers.last() {
            Some(Layer::Conv(_)) => {}
            Some(_) => {
                return Err(Error::InvalidInput(
                    "the last layer must be a bare convolution".into(),
                ))
            }
            None => {}
        }
        if patch_size == 0 {
            return Err(Error::InvalidInput("patch size must be positive".into()));
        }
        Ok(Self { layers, patch_size })
    }

    /// Instantiates `config` with uniform-width hidden layers and
    /// Glorot-uniform weights drawn from `seed`.
    pub fn from_config(config: &NetworkConfig, channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidInput("channel width must be positive".into()));
        }
        if config.layers.is_empty() {
            return Err(Error::Parse("network has no layers".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_ch = 1;
        for stage in &config.layers {
            let mut conv = ConvLayer::new(stage.kind, stage.kernel, 1, 0, in_ch, channels, !stage.batch_norm)?;
            let kk = (stage.kernel * stage.kernel) as f64;
            let limit = (6.0 / ((in_ch as f64 + channels as f64) * kk)).sqrt();
            conv.weights
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-limit..=limit));
            layers.push(Layer::Conv(conv));
            if stage.batch_norm {
                layers.push(Layer::BatchNorm(BatchNorm::new(channels)));
            }
            if stage.relu {
                layers.push(Layer::Relu);
            }
            in_ch = channels;
        }
        Self::new(layers, config.patch_size)
    }

    pub fn from_config_str(text: &str, channels: usize, seed: u64) -> Result<Self> {
        Self::from_config(&parse_network_config(text)?, channels, seed)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn output_channels(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Conv(c) => Some(c.out_channels),
                _ => None,
            })
            .unwrap_or(1)
    }

    /// Sum of learnable parameters: convolution weights, biases where
    /// present, and scale/shift of every batch norm.
    pub fn count_parameters(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Spatial sizes through the stack, starting with `input`.
    pub fn geometry_chain(&self, input: usize) -> Result<Vec<usize>> {
        let mut sizes = vec![input];
        let mut size = input;
        for layer in &self.layers {
            if let Layer::Conv(c) = layer {
                size = c.output_size(size)?;
                sizes.push(size);
            }
        }
        Ok(sizes)
    }

    /// Final spatial size for an `input x input` map.
    pub fn validate_geometry(&self, input: usize) -> Result<usize> {
        Ok(*self.geometry_chain(input)?.last().expect("chain holds the input"))
    }

    /// Receptive-field shrinkage: input size minus output size.
    pub fn margin(&self) -> Result<usize> {
        let out = self.validate_geometry(self.patch_size)?;
        if out != 1 {
            return Err(Error::Geometry(format!(
                "patch {} maps to {out}x{out}, not 1x1",
                self.patch_size
            )));
        }
        Ok(self.patch_size - 1)
    }

    /// Inference-mode forward pass (batch norm uses running statistics).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(c) => c.forward(&cur)?,
                Layer::BatchNorm(bn) => bn.forward(&cur)?,
                Layer::Relu => relu(&cur),
            };
        }
        Ok(cur)
    }

    /// Features of a patch (`H x W`, `H` = patch size, `W >= H`): a
    /// `C x 1 x (W - H + 1)` tensor, one column per `H x H` sub-window.
    /// For convolution-only stacks column `n` equals the standalone feature
    /// of the sub-window starting at `n`; transposed convolutions also see
    /// the pixels just outside each sub-window.
    pub fn extract_features(&self, patch: &Tensor) -> Result<Tensor> {
        if patch.height() != self.patch_size {
            return Err(Error::Shape(format!(
                "patch height {} differs from the network's patch size {}",
                patch.height(),
                self.patch_size
            )));
        }
        if patch.width() < patch.height() {
            return Err(Error::Shape(format!(
                "patch width {} is below its height {}",
                patch.width(),
                patch.height()
            )));
        }
        self.margin()?;
        self.forward(patch)
    }

    /// Training-mode forward pass over a batch; batch norm normalizes with
    /// batch statistics. Running statistics are not touched here, see
    /// [`FeatureExtractor::update_running_stats`].
    pub fn forward_train(&self, batch: &[Tensor]) -> Result<(Vec<Tensor>, ForwardTrace)> {
        let mut cur: Vec<Tensor> = batch.to_vec();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    let out = cur.par_iter().map(|x| c.forward(x)).collect::<Result<Vec<_>>>()?;
                    traces.push(LayerTrace::Conv(std::mem::replace(&mut cur, out)));
                }
                Layer::BatchNorm(bn) => {
                    let (out, trace) = bn.forward_train(&cur)?;
                    traces.push(LayerTrace::BatchNorm(trace));
                    cur = out;
                }
                Layer::Relu => {
                    cur = cur.iter().map(relu).collect();
                    traces.push(LayerTrace::Relu(cur.clone()));
                }
            }
        }
        Ok((cur, ForwardTrace { layers: traces }))
    }

    pub fn update_running_stats(&mut self, trace: &ForwardTrace) {
        for (layer, t) in self.layers.iter_mut().zip(&trace.layers) {
            if let (Layer::BatchNorm(bn), LayerTrace::BatchNorm(bt)) = (layer, t) {
                bn.update_running(bt);
            }
        }
    }

    /// Reverse-mode gradients of the loss whose output gradients are
    /// `grad_out` (one per batch member).
    pub fn backward(&self, trace: &ForwardTrace, grad_out: Vec<Tensor>) -> Result<Gradients> {
        let mut per_layer: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut grad = grad_out;
        for (idx, (layer, t)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            match (layer, t) {
                (Layer::Conv(c), LayerTrace::Conv(inputs)) => {
                    let mut dw = vec![0.0; c.weights.len()];
                    let mut db = c.bias.as_ref().map(|b| vec![0.0; b.len()]);
                    let per_sample = inputs
                        .par_iter()
                        .zip(grad.par_iter())
                        .map(|(x, dy)| c.backward(x, dy))
                        .collect::<Result<Vec<_>>>()?;
                    let mut next = Vec::with_capacity(grad.len());
                    for g in per_sample {
                        dw.iter_mut().zip(&g.weights).for_each(|(a, b)| *a += b);
                        if let (Some(acc), Some(gb)) = (db.as_mut(), g.bias.as_ref()) {
                            acc.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
                        }
                        next.push(g.input);
                    }
                    if let Some(db) = db {
                        dw.extend(db);
                    }
                    per_layer[idx] = dw;
                    grad = next;
                }
                (Layer::BatchNorm(bn), LayerTrace::BatchNorm(bt)) => {
                    let (dx, mut dgamma, dbeta) = bn.backward(bt, &grad)?;
                    dgamma.extend(dbeta);
                    per_layer[idx] = dgamma;
                    grad = dx;
                }
                (Layer::Relu, LayerTrace::Relu(outputs)) => {
                    grad = outputs
                        .iter()
                        .zip(&grad)
                        .map(|(y, dy)| relu_backward(y, dy))
                        .collect();
                }
                _ => unreachable!("trace recorded by forward_train on the same stack"),
            }
        }
        Ok(Gradients(per_layer.concat()))
    }

    /// Flattened learnable parameters: per layer, convolution weights then
    /// bias, or batch-norm scale then shift.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count_parameters());
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.extend_from_slice(&c.weights);
                    if let Some(b) = &c.bias {
                        out.extend_from_slice(b);
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.extend_from_slice(&bn.gamma);
                    out.extend_from_slice(&bn.beta);
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.count_parameters() {
            return Err(Error::Shape(format!(
                "{} parameters given, network has {}",
                params.len(),
                self.count_parameters()
            )));
        }
        let mut rest = params;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    take(&mut c.weights);
                    if let Some(b) = &mut c.bias {
                        take(b);
                    }
                }
                Layer::BatchNorm(bn) => {
                    take(&mut bn.gamma);
                    take(&mut bn.beta);
                }
                Layer::Relu => {}
            }
        }
        Ok(())
    }

    pub fn has_deconv(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::Conv(c) if c.kind == ConvKind::Deconv))
    }
}

/// Dot product of the left feature with every right position:
/// `r[n] = sum_c left[c] * right[n][c]`.
pub fn similarity_scores(left: &[f64], right: &[Vec<f64>]) -> Result<Vec<f64>> {
    right
        .iter()
        .enumerate()
        .map(|(n, row)| {
            if row.len() != left.len() {
                return Err(Error::Shape(format!(
                    "right feature {n} has {} channels, left has {}",
                    row.len(),
                    left.len()
                )));
            }
            Ok(left.iter().zip(row).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// Splits `C x 1 x N` strip features into `N` feature vectors.
pub fn feature_columns(features: &Tensor) -> Result<Vec<Vec<f64>>> {
    if features.height() != 1 {
        return Err(Error::Shape(format!(
            "feature map has height {}, expected 1",
            features.height()
        )));
    }
    Ok((0..features.width()).map(|n| features.column(0, n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn preset_output_shapes() {
        let net = FeatureExtractor::from_config_str("37-1Deconv(5)&4Conv", 64, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let left = net.extract_features(&random_tensor(&mut rng, 1, 37, 37)).unwrap();
        assert_eq!(left.shape(), (64, 1, 1));
        let right = net.extract_features(&random_tensor(&mut rng, 1, 37, 237)).unwrap();
        assert_eq!(right.shape(), (64, 1, 201));
    }

    #[test]
    fn strip_columns_equal_subwindow_features() {
        let net = FeatureExtractor::from_config_str("3Conv@9", 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let strip = random_tensor(&mut rng, 1, 9, 20);
        let feats = net.extract_features(&strip).unwrap();
        assert_eq!(feats.width(), 12);
        for n in 0..feats.width() {
            let single = net.extract_features(&strip.window(0, n, 9, 9).unwrap()).unwrap();
            for c in 0..4 {
                assert!((single.get(c, 0, 0) - feats.get(c, 0, n)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parameter_counts() {
        let conv = |bias| ConvLayer::new(ConvKind::Conv, 3, 1, 0, 1, 64, bias).unwrap();
        let with_bias = FeatureExtractor::new(vec![Layer::Conv(conv(true))], 3).unwrap();
        assert_eq!(with_bias.count_parameters(), 640);
        let bn = FeatureExtractor::new(
            vec![
                Layer::Conv(conv(false)),
                Layer::BatchNorm(BatchNorm::new(64)),
                Layer::Relu,
                Layer::Conv(ConvLayer::new(ConvKind::Conv, 1, 1, 0, 64, 1, true).unwrap()),
            ],
            3,
        )
        .unwrap();
        assert_eq!(bn.count_parameters(), 576 + 128 + 65);
        assert_eq!(FeatureExtractor::new(vec![], 1).unwrap().count_parameters(), 0);
    }

    #[test]
    fn bias_only_without_batch_norm() {
        let net = FeatureExtractor::from_config_str("37-4Conv", 64, 0).unwrap();
        let convs: Vec<_> = net
            .layers()
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(c),
                _ => None,
            })
            .collect();
        assert!(convs[..3].iter().all(|c| c.bias.is_none()));
        assert!(convs[3].bias.is_some());
        assert_eq!(convs[0].in_channels, 1);
        assert!(convs.iter().all(|c| c.out_channels == 64));
    }

    #[test]
    fn channel_chain_mismatch_rejected() {
        let a = ConvLayer::new(ConvKind::Conv, 3, 1, 0, 1, 8, true).unwrap();
        let b = ConvLayer::new(ConvKind::Conv, 3, 1, 0, 4, 8, true).unwrap();
        assert!(matches!(
            FeatureExtractor::new(vec![Layer::Conv(a.clone()), Layer::Conv(b)], 5),
            Err(Error::Shape(_))
        ));
        assert!(FeatureExtractor::new(vec![Layer::Conv(a), Layer::Relu], 3).is_err());
    }

    #[test]
    fn similarity_examples() {
        let r = similarity_scores(&[1.0, 2.0], &[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(r, vec![11.0, 17.0]);
        assert!(similarity_scores(&[1.0], &[vec![1.0, 2.0]]).is_err());
        let rows = vec![vec![0.5, -1.0, 2.0]; 5];
        let e1 = similarity_scores(&[1.0, 0.0, 0.0], &rows).unwrap();
        assert!(e1.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn parameters_round_trip() {
        let mut net = FeatureExtractor::from_config_str("1Deconv(3)&2Conv@9", 3, 5).unwrap();
        let mut p = net.parameters();
        assert_eq!(p.len(), net.count_parameters());
        p.iter_mut().for_each(|v| *v += 1.0);
        net.set_parameters(&p).unwrap();
        assert_eq!(net.parameters(), p);
        assert!(net.set_parameters(&p[1..]).is_err());
    }
}
