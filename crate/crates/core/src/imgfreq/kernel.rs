use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A normalized, symmetric 1D Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel1D {
    taps: Vec<f64>,
    sigma: f64,
}

impl Kernel1D {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn width(&self) -> usize {
        self.taps.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Padding `(before, after)` that keeps the filtered size equal to the
    /// input size. Even widths put the extra tap after the center.
    pub fn padding(&self) -> (usize, usize) {
        let w = self.taps.len();
        ((w - 1) / 2, w / 2)
    }
}

/// Samples `exp(-x^2 / (2 sigma^2))` at `x = i - (width - 1) / 2` and
/// normalizes the taps to sum to one. Even widths sample at half-integer
/// offsets, so the kernel stays centered between its two middle taps.
pub fn gaussian_kernel(sigma: f64, width: usize) -> Result<Kernel1D> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!(
            "kernel sigma must be positive, got {sigma}"
        )));
    }
    if width == 0 {
        return Err(Error::invalid("kernel width must be at least 1"));
    }
    let center = (width as f64 - 1.0) / 2.0;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (0..width)
        .map(|i| {
            let x = i as f64 - center;
            (-x * x / denom).exp()
        })
        .collect();
    // Pairwise sum from both ends so mirrored taps contribute identically.
    let mut sum = 0.0;
    for i in 0..width / 2 {
        sum += raw[i] + raw[width - 1 - i];
    }
    if width % 2 == 1 {
        sum += raw[width / 2];
    }
    if !(sum > 0.0) {
        return Err(Error::invalid(format!(
            "kernel underflow for sigma={sigma}, width={width}"
        )));
    }
    // Far tails of very narrow kernels underflow to 0.0; they stay in the
    // kernel so the width and centering are unchanged.
    let taps = raw.into_iter().map(|t| t / sum).collect();
    Ok(Kernel1D { taps, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterKind {
    HighPass,
    LowPass,
}

impl FilterKind {
    pub const ALL: [FilterKind; 2] = [FilterKind::HighPass, FilterKind::LowPass];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::HighPass => "HighPass",
            FilterKind::LowPass => "LowPass",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "highpass" | "high" | "hp" => Ok(FilterKind::HighPass),
            "lowpass" | "low" | "lp" => Ok(FilterKind::LowPass),
            other => Err(Error::invalid(format!("unknown filter kind `{other}`"))),
        }
    }
}

/// One cell of the filtering grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub sigma: f64,
    pub width: usize,
}

impl FilterSpec {
    pub fn new(kind: FilterKind, sigma: f64, width: usize) -> Result<Self> {
        let spec = Self { kind, sigma, width };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.width == 0 {
            return Err(Error::invalid("width must be at least 1"));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<Kernel1D> {
        gaussian_kernel(self.sigma, self.width)
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} sigma={} width={}", self.kind, self.sigma, self.width)
    }
}
