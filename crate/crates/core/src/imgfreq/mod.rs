//! Gaussian kernels and separable low/high-pass filtering.
//!
//! Filtering runs in `f64` on planar (channel-major) images. Borders are
//! replicated, and each channel is filtered independently. The high-pass
//! output is the exact complement `img - lowpass(img)`, so it is signed.

pub(crate) mod export;
mod filter;
mod image;
mod kernel;

pub use self::export::{load_image, save_display, to_display_u8, DisplayImage};
pub use self::filter::{
    apply_filter, convolve_separable, filter_highpass, filter_lowpass, pad_replicate, Axis,
};
pub use self::image::ImageTensor;
pub use self::kernel::{gaussian_kernel, FilterKind, FilterSpec, Kernel1D};
