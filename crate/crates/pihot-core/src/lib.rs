//! Human-object contact (HOT) detection pipeline.
//!
//! The pipeline removes the human from a scene with a dilated mask and an
//! inpainting backend, compares depth maps of the original and human-free
//! images to obtain a relative spatial-position map, runs two cross-feature
//! attention stages (IPI over inpainted-object/contact features, IDSI over
//! depth/object features), fuses everything, and segments per-class contact
//! probability maps. Everything runs on the CPU with hand-written forward
//! and backward passes, generic over `f32`/`f64`.
//!
//! Module map:
//! - [`mask`]: binary human masks and morphological dilation
//! - [`image`]: RGB image tensors and PNG I/O
//! - [`depth`]: depth maps and the relative-position map
//! - [`plugins`]: pluggable inpainting / depth-estimation backends
//! - [`nn`]: low-level layers (conv, norm, pooling, resampling) with backprop
//! - [`attention`]: scaled dot-product feature attention, IPI and IDSI
//! - [`model`]: backbone, fusion, segmentation head, loss, checkpoints, Adam
//! - [`metrics`]: SC-Acc., C-Acc., mIoU, wIoU
//! - [`synth`]: procedural synthetic scene generator and dataset loader
//! - [`config`]: flat key-value run configuration
//! - [`train`]: deterministic training loop with resume
//! - [`viz`]: label palettes, overlays, grayscale depth dumps

pub mod attention;
pub mod config;
pub mod depth;
pub mod error;
pub mod image;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plugins;
pub mod synth;
pub mod train;
pub mod viz;

pub use attention::{feature_attention, CrossAttention, TokenMatrix};
pub use config::RunConfig;
pub use depth::{relative_position, DepthMap, RelativePositionMap};
pub use error::{Error, Result};
pub use image::ImageTensor;
pub use mask::{dilate_mask, BinaryMask, DilationKernel};
pub use metrics::{evaluate, ContactLabelMap, MetricReport};
pub use model::{hot_loss, FusionParams, LossConfig, PihotModel, PredictionMap};
pub use nn::Real;
pub use plugins::{Backends, DepthBackend, InpainterBackend};
pub use synth::{SceneSample, SynthParams};
