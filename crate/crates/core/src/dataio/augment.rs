use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgfreq::{apply_filter, pad_replicate, Axis, FilterKind, FilterSpec, ImageTensor};

use super::dataset::LabeledDataset;

/// Random-filter draw ranges for stochastic filtering augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub width_choices: Vec<usize>,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            sigma_min: 0.25,
            sigma_max: 1.75,
            width_choices: vec![2, 3, 4, 5, 6, 7],
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite())
        {
            return Err(Error::invalid(format!(
                "augment sigma range must satisfy 0 < min < max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.width_choices.is_empty() || self.width_choices.contains(&0) {
            return Err(Error::invalid(
                "width_choices must be non-empty and positive",
            ));
        }
        Ok(())
    }
}

/// Which filter produced augmented item `source_index + N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub source_index: usize,
    pub spec: FilterSpec,
}

/// The filter for source item `index`. Each index has its own ChaCha
/// stream under `policy.seed`, so draws do not depend on processing order.
pub fn draw_filter(policy: &AugmentPolicy, index: usize) -> FilterSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    rng.set_stream(index as u64);
    let kind = if rng.random_bool(0.5) {
        FilterKind::HighPass
    } else {
        FilterKind::LowPass
    };
    let sigma = rng.random_range(policy.sigma_min..=policy.sigma_max);
    let width = *policy
        .width_choices
        .choose(&mut rng)
        .expect("validated non-empty");
    FilterSpec { kind, sigma, width }
}

/// Returns the originals followed by one randomly filtered copy of each.
pub fn stochastic_augment(
    train: &LabeledDataset,
    policy: &AugmentPolicy,
) -> Result<(LabeledDataset, Vec<Provenance>)> {
    use rayon::prelude::*;
    policy.validate()?;
    let copies = train
        .items()
        .par_iter()
        .enumerate()
        .map(|(i, (img, label))| {
            let spec = draw_filter(policy, i);
            apply_filter(img, &spec).map(|out| {
                (
                    (out, *label),
                    Provenance {
                        source_index: i,
                        spec,
                    },
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut items = train.items().to_vec();
    let mut provenance = Vec::with_capacity(copies.len());
    for (item, prov) in copies {
        items.push(item);
        provenance.push(prov);
    }
    let ds = LabeledDataset::new(
        format!("{}+stochastic", train.name()),
        train.num_classes(),
        items,
    )?;
    Ok((ds, provenance))
}

/// CSV sidecar: `source_index,kind,sigma,width`, one row per generated item.
pub fn write_provenance(path: &Path, provenance: &[Provenance]) -> Result<()> {
    let mut s = String::from("source_index,kind,sigma,width\n");
    for p in provenance {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            p.source_index, p.spec.kind, p.spec.sigma, p.spec.width
        );
    }
    fs::write(path, s)?;
    Ok(())
}

pub const CROP_PAD: usize = 4;

/// Replicate-pads by [`CROP_PAD`], crops back to the original size at
/// `(offset_y, offset_x)` in the padded image, then optionally mirrors
/// left-right. Offsets `(CROP_PAD, CROP_PAD)` without flip return `img`.
pub fn standard_augment_with(
    img: &ImageTensor,
    offset_y: usize,
    offset_x: usize,
    flip: bool,
) -> ImageTensor {
    assert!(
        offset_y <= 2 * CROP_PAD && offset_x <= 2 * CROP_PAD,
        "crop offset out of range"
    );
    let (h, w, c) = img.dims();
    let padded = pad_replicate(
        &pad_replicate(img, CROP_PAD, CROP_PAD, Axis::Rows),
        CROP_PAD,
        CROP_PAD,
        Axis::Cols,
    );
    ImageTensor::from_fn(h, w, c, |ch, y, x| {
        let sx = if flip { w - 1 - x } else { x };
        padded.get(ch, y + offset_y, sx + offset_x)
    })
}

/// Random crop (uniform offset in `0..=2*CROP_PAD` per axis) and a
/// horizontal flip with probability 0.5.
pub fn standard_augment(img: &ImageTensor, rng: &mut impl Rng) -> ImageTensor {
    let (oy, ox, flip) = draw_crop(rng);
    standard_augment_with(img, oy, ox, flip)
}

/// The random draws behind [`standard_augment`]: `(offset_y, offset_x, flip)`.
pub fn draw_crop(rng: &mut impl Rng) -> (usize, usize, bool) {
    let oy = rng.random_range(0..=2 * CROP_PAD);
    let ox = rng.random_range(0..=2 * CROP_PAD);
    (oy, ox, rng.random_bool(0.5))
}

/// Per-channel normalization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Population mean and standard deviation per channel over all pixels.
    pub fn from_dataset(ds: &LabeledDataset) -> Result<Self> {
        let (_, _, c) = ds
            .image_dims()
            .ok_or_else(|| Error::invalid("cannot compute statistics of an empty dataset"))?;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0usize;
        for (img, _) in ds.items() {
            for ch in 0..c {
                for &v in img.plane(ch) {
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
            n += img.height() * img.width();
        }
        let n = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt())
            .collect();
        let stats = Self { mean, std };
        stats.validate(c)?;
        Ok(stats)
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::shape(format!(
                "normalization stats have {}/{} entries for {channels} channels",
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some(s) = self.std.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "normalization std must be positive, got {s}"
            )));
        }
        Ok(())
    }
}

/// `(v - mean[c]) / std[c]` per channel.
pub fn normalize(img: &ImageTensor, stats: &NormStats) -> Result<ImageTensor> {
    stats.validate(img.channels())?;
    Ok(ImageTensor::from_fn(
        img.height(),
        img.width(),
        img.channels(),
        |c, y, x| (img.get(c, y, x) - stats.mean[c]) / stats.std[c],
    ))
}

/// Inverse of [`normalize`].
pub fn denormalize(img: &ImageTensor, stats: &NormStats) -> Result<ImageTensor> {
    stats.validate(img.channels())?;
    Ok(ImageTensor::from_fn(
        img.height(),
        img.width(),
        img.channels(),
        |c, y, x| img.get(c, y, x) * stats.std[c] + stats.mean[c],
    ))
}
