//! Gaussian frequency-filtering robustness toolkit.
//!
//! The crate is split along the pipeline:
//!
//! * [`imgfreq`]: Gaussian kernels and separable low/high-pass filtering.
//! * [`dataio`]: CIFAR-format records, the filtered test grid, and training-time augmentation.
//! * [`nnet`]: a small CPU training engine with bottleneck residual blocks.
//! * [`bench`]: accuracy grids, trend checks, comparisons and reports.

pub mod bench;
pub mod dataio;
pub mod error;
pub mod imgfreq;
pub mod nnet;

pub use error::{Error, Result};
