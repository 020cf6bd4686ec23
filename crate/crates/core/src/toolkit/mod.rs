//! File formats, synthetic data, prompts, metrics and benchmarking.

pub mod bench;
pub mod container;
pub mod dataset;
pub mod metrics;
pub mod model_io;
pub mod pgm;
pub mod phantom;

pub use bench::{bench_latency, BenchReport};
pub use container::TensorContainer;
pub use dataset::{load_dataset, phantom_set, write_phantom_set, DatasetItem};
pub use metrics::{binarize, dice, expand_box};
pub use pgm::{read_pgm, write_pgm};
pub use phantom::{synth_phantom, PhantomConfig};
