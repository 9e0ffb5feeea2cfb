//! Siamese feature network: tensors, convolution and transposed-convolution
//! layers, batch normalization, the dot-product similarity head, the layer
//! config grammar, and the weights file.

mod config;
mod extractor;
mod layers;
mod matrix;
mod tensor;
mod weights;

pub use config::{parse_network_config, preset_names, LayerSpec, NetworkConfig};
pub use extractor::{
    feature_columns, similarity_scores, FeatureExtractor, ForwardTrace, Gradients, Layer,
    DEFAULT_CHANNELS,
};
pub use layers::{
    conv_forward, conv_output_size, deconv_forward, deconv_output_size, relu, relu_backward,
    BatchNorm, BatchNormTrace, ConvGrads, ConvKind, ConvLayer, BN_EPS, BN_MOMENTUM,
};
pub use matrix::{as_matrix, DenseMatrix};
pub use tensor::Tensor;
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, FORMAT_VERSION, MAGIC};
