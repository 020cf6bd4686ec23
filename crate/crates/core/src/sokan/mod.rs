//! Residual-spline KAN hyper-map and activation-driven channel pruning.
//!
//! The KAN head keeps the MLP's final affine layer as a frozen base and adds
//! a zero-initialized cubic B-spline on every edge, so a fresh KAN head is
//! numerically the MLP it replaces. Only the spline coefficients train.

mod hypermap;
mod kan;
mod prune;
mod spline;

pub use hypermap::{HyperHead, HyperMap, HyperMapVariant};
pub use kan::{KanCache, KanLayer};
pub use prune::{positive_ratio, prune, PruneReport, DEFAULT_KEEP};
pub use spline::{bspline_basis, SplineGrid, MAX_ORDER};
