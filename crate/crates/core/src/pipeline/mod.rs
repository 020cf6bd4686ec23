//! Self-supervised adaptation of the KAN hyper-map.
//!
//! The frozen plain-MLP path labels each augmented view; the KAN path is
//! decoded with Monte-Carlo token samples and pulled toward those labels by
//! an uncertainty-weighted squared error, while a feature-consistency term
//! keeps its channel weights near the frozen ones. Only spline coefficients
//! are updated, with AdamW.

mod adamw;
mod augment;
mod loss;
mod train;

pub use adamw::{adamw_step, AdamState};
pub use augment::{augment, AugmentParams};
pub use loss::{loss_feat, loss_unw, pseudo_label, unw_weight};
pub use train::{train_sokan, write_trace, TraceRow, TrainConfig, TrainOutcome};
