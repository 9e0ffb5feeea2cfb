//! Dense binocular stereo matching built around a Siamese patch network
//! with transposed-convolution front layers, followed by four-path
//! semi-global aggregation, a left/right consistency check derived from the
//! left cost volume, quadratic subpixel refinement and ray filling.
//!
//! A classical census cost is available so the post-processing chain can
//! run without trained weights.

pub mod cost_volume;
pub mod disparity;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod network;
pub mod pipeline;
pub mod sgm;
pub mod training;

pub use error::{Error, Result};
