//! Training-free Monte-Carlo uncertainty for promptable mask decoders.
//!
//! The crate treats a mask decoder's output token as the mean of a Gaussian
//! over input-dependent weights. A per-dimension standard deviation gathered
//! once over an unlabeled corpus turns a deterministic decoder into a sampler
//! whose spread is an uncertainty map. The token hyper-map can be swapped for
//! a KAN layer with a frozen affine base and zero-initialized residual
//! B-splines; the sign statistics of its per-edge activations rank output
//! channels for pruning.
//!
//! Module map:
//! - [`numerics`]: tensors, seeded random streams, elementwise math.
//! - [`decoder`]: toy encoder, token head and token-feature mask product.
//! - [`tvbi`]: token statistics, reparameterized sampling, MC decoding.
//! - [`sokan`]: B-spline basis, KAN layer, hyper-map, positive-ratio pruning.
//! - [`pipeline`]: self-supervised spline training (losses, augmentation, AdamW).
//! - [`toolkit`]: file formats, phantoms, Dice, box prompts, latency bench.

pub mod decoder;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod sokan;
pub mod toolkit;
pub mod tvbi;

pub use decoder::{BoxPrompt, DecoderDims, DecoderModel};
pub use error::{Error, Result};
pub use numerics::{RngStream, Tensor};
pub use sokan::{HyperMap, KanLayer, PruneReport, SplineGrid};
pub use tvbi::{MaskPrediction, TokenStats};
