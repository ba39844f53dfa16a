use crate::error::Result;

use super::image::ImageTensor;
use super::kernel::{gaussian_kernel, FilterKind, FilterSpec, Kernel1D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Extends `img` along `axis` by repeating its first/last row or column.
pub fn pad_replicate(img: &ImageTensor, before: usize, after: usize, axis: Axis) -> ImageTensor {
    let (h, w, c) = img.dims();
    match axis {
        Axis::Rows => {
            let nh = h + before + after;
            ImageTensor::from_fn(nh, w, c, |ch, y, x| {
                let src = y.saturating_sub(before).min(h - 1);
                img.get(ch, src, x)
            })
        }
        Axis::Cols => {
            let nw = w + before + after;
            ImageTensor::from_fn(h, nw, c, |ch, y, x| {
                let src = x.saturating_sub(before).min(w - 1);
                img.get(ch, y, src)
            })
        }
    }
}

/// 1D correlation of a strided line with replicate borders.
/// `out[i] = sum_j taps[j] * line[clamp(i - before + j)]`.
fn filter_line(
    src: &[f64],
    dst: &mut [f64],
    len: usize,
    stride: usize,
    taps: &[f64],
    before: usize,
) {
    let last = len as isize - 1;
    for i in 0..len {
        let mut acc = 0.0;
        for (j, &t) in taps.iter().enumerate() {
            let idx = (i as isize - before as isize + j as isize).clamp(0, last) as usize;
            acc += t * src[idx * stride];
        }
        dst[i * stride] = acc;
    }
}

/// Filters every channel with `kernel` along columns (vertically), then
/// along rows. Output has the input's dimensions.
pub fn convolve_separable(img: &ImageTensor, kernel: &Kernel1D) -> ImageTensor {
    let (h, w, c) = img.dims();
    let taps = kernel.taps();
    let (before, _) = kernel.padding();
    let plane_len = h * w;
    let mut tmp = vec![0.0; plane_len];
    let mut out = vec![0.0; plane_len * c];
    for ch in 0..c {
        let src = img.plane(ch);
        for x in 0..w {
            filter_line(&src[x..], &mut tmp[x..], h, w, taps, before);
        }
        let dst = &mut out[ch * plane_len..(ch + 1) * plane_len];
        for y in 0..h {
            let row = y * w;
            filter_line(
                &tmp[row..row + w],
                &mut dst[row..row + w],
                w,
                1,
                taps,
                before,
            );
        }
    }
    ImageTensor::from_raw_unchecked(h, w, c, out)
}

/// Gaussian blur.
pub fn filter_lowpass(img: &ImageTensor, sigma: f64, width: usize) -> Result<ImageTensor> {
    let kernel = gaussian_kernel(sigma, width)?;
    Ok(convolve_separable(img, &kernel))
}

/// `img - filter_lowpass(img)`; the result is signed.
pub fn filter_highpass(img: &ImageTensor, sigma: f64, width: usize) -> Result<ImageTensor> {
    let low = filter_lowpass(img, sigma, width)?;
    img.sub(&low)
}

pub fn apply_filter(img: &ImageTensor, spec: &FilterSpec) -> Result<ImageTensor> {
    match spec.kind {
        FilterKind::LowPass => filter_lowpass(img, spec.sigma, spec.width),
        FilterKind::HighPass => filter_highpass(img, spec.sigma, spec.width),
    }
}
