//! Patch-pair generation, the smoothed target distribution, softmax
//! cross-entropy, backpropagation through both Siamese branches, and the
//! minibatch trainer.

mod loss;
mod manifest;
mod samples;
mod trainer;

pub use loss::{cross_entropy, softmax, softmax_cross_entropy, LossReport, LOG_EPS};
pub use manifest::{parse_manifest, read_manifest, ManifestEntry};
pub use samples::{
    cut_sample, generate_patch_pairs, make_label, patch_sites, random_dot_samples, PatchDataset, PatchSite,
    SampleSource, TrainingSample, CENTER, POSITIONS, STRIP_EXTRA,
};
pub use trainer::{
    batch_loss_and_gradients, evaluate_sample, score_sample, smoothed, train,
    train_with_callback, BatchResult, TrainerConfig, TrainingRun,
};
