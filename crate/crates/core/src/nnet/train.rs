//! Mini-batch SGD training loop, evaluation and the per-epoch metrics log.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{draw_crop, normalize, LabeledDataset, NormStats, CROP_PAD};
use crate::error::{Error, Result};

use super::checkpoint::Checkpoint;
use super::loss::softmax_cross_entropy;
use super::model::{build_model, Model, ModelDescriptor};
use super::module::{Mode, Module};
use super::optim::{lr_at_epoch, Sgd};
use super::tensor::Tensor4;

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Epochs (0-based) at which the learning rate is multiplied by `lr_gamma`.
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Train on the stochastically filtered (doubled) set. The caller
    /// performs the augmentation; the flag is part of the config hash.
    pub stochastic_augment: bool,
    /// Random pad-crop and horizontal flip per sample per epoch.
    pub standard_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: "desk".into(),
            epochs: 200,
            batch_size: 128,
            initial_lr: 0.1,
            lr_milestones: vec![100, 150],
            lr_gamma: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            stochastic_augment: false,
            standard_augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.parse::<ModelDescriptor>()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size must be at least 1"));
        }
        if !(self.initial_lr.is_finite() && self.initial_lr >= 0.0) {
            return Err(Error::invalid(
                "train.initial_lr must be finite and non-negative",
            ));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::invalid("train.lr_gamma must lie in (0, 1]"));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "train.lr_milestones must be strictly increasing",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("train.momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "train.weight_decay must be finite and non-negative",
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at_epoch(self.initial_lr, &self.lr_milestones, self.lr_gamma, epoch)
    }

    /// SHA-256 of a canonical `key=value` rendering of every field.
    pub fn hash(&self) -> [u8; 32] {
        let mut s = String::new();
        let _ = writeln!(s, "model={}", self.model);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "initial_lr={:e}", self.initial_lr);
        let _ = writeln!(s, "lr_milestones={:?}", self.lr_milestones);
        let _ = writeln!(s, "lr_gamma={:e}", self.lr_gamma);
        let _ = writeln!(s, "momentum={:e}", self.momentum);
        let _ = writeln!(s, "weight_decay={:e}", self.weight_decay);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "stochastic_augment={}", self.stochastic_augment);
        let _ = writeln!(s, "standard_augment={}", self.standard_augment);
        Sha256::digest(s.as_bytes()).into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

/// Writes `epoch,lr,train_loss,val_acc,wall_seconds`, one line per epoch.
pub fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,lr,train_loss,val_acc,wall_seconds")?;
    for m in metrics {
        writeln!(
            out,
            "{},{},{:.6},{:.4},{:.3}",
            m.epoch, m.lr, m.train_loss, m.val_acc, m.wall_seconds
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Images as contiguous `f32` samples plus their labels.
struct Flat {
    dims: [usize; 3],
    values: Vec<f32>,
    labels: Vec<usize>,
}

impl Flat {
    fn new(ds: &LabeledDataset) -> Result<Self> {
        let (h, w, c) = ds
            .image_dims()
            .ok_or_else(|| Error::invalid(format!("dataset `{}` is empty", ds.name())))?;
        let mut values = Vec::with_capacity(ds.len() * c * h * w);
        for (img, _) in ds.items() {
            values.extend(img.data().iter().map(|&v| v as f32));
        }
        Ok(Self {
            dims: [c, h, w],
            values,
            labels: ds.labels(),
        })
    }

    fn sample_len(&self) -> usize {
        self.dims.iter().product()
    }

    fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.values[i * n..(i + 1) * n]
    }
}

/// Copies `src` into `dst` through a replicate-padded crop at
/// `(oy, ox)` with an optional horizontal flip.
fn crop_into(src: &[f32], dims: [usize; 3], oy: usize, ox: usize, flip: bool, dst: &mut [f32]) {
    let [c, h, w] = dims;
    let clamp = |v: usize, n: usize| v.saturating_sub(CROP_PAD).min(n - 1);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let sy = clamp(y + oy, h);
            let row = &plane[sy * w..(sy + 1) * w];
            let out = &mut dst[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (x, o) in out.iter_mut().enumerate() {
                let fx = if flip { w - 1 - x } else { x };
                *o = row[clamp(fx + ox, w)];
            }
        }
    }
}

/// Splits a permutation into batches; a trailing batch of one sample is
/// merged into its predecessor (batch statistics need two samples).
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    rng
}

/// Trains a fresh model on normalized `train_set`, evaluating on `val_set`
/// after every epoch. `norm` is the normalization already applied to both
/// sets; it is stored in the checkpoint.
pub fn train(
    config: &TrainConfig,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    norm: &NormStats,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if val_set.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    if train_set.num_classes() != val_set.num_classes() {
        return Err(Error::invalid(format!(
            "train set has {} classes, validation set {}",
            train_set.num_classes(),
            val_set.num_classes()
        )));
    }
    let data = Flat::new(train_set)?;
    if data.labels.len() < 2 {
        return Err(Error::invalid("training needs at least two samples"));
    }
    norm.validate(data.dims[0])?;
    let descriptor: ModelDescriptor = config.model.parse()?;
    let mut model: Model<f32> = build_model(
        &descriptor,
        data.dims[0],
        train_set.num_classes(),
        config.seed,
    )?;
    let sgd = Sgd {
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    };
    let [c, h, w] = data.dims;
    let sample_len = data.sample_len();
    let start = Instant::now();
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut rng = epoch_rng(config.seed, epoch);
        let mut order: Vec<usize> = (0..data.labels.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in batches(&order, config.batch_size).into_iter().enumerate() {
            let mut x = Tensor4::<f32>::zeros([batch.len(), c, h, w]);
            let mut labels = Vec::with_capacity(batch.len());
            for (slot, &i) in batch.iter().enumerate() {
                let dst = x.sample_mut(slot);
                if config.standard_augment {
                    let (oy, ox, flip) = draw_crop(&mut rng);
                    crop_into(data.sample(i), data.dims, oy, ox, flip, dst);
                } else {
                    dst.copy_from_slice(data.sample(i));
                }
                labels.push(data.labels[i]);
            }
            debug_assert_eq!(x.sample_len(), sample_len);
            model.zero_grad();
            let logits = model.forward(&x, Mode::Train).map_err(|e| match e {
                Error::Shape(msg) if msg.starts_with("non-finite") => Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                },
                e => e,
            })?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            model.backward(&grad)?;
            sgd.step(&mut model, lr);
            loss_sum += loss * batch.len() as f64;
        }
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / data.labels.len() as f64,
            val_acc: evaluate(&mut model, val_set, EVAL_BATCH)?,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&m);
        metrics.push(m);
    }

    let checkpoint = Checkpoint::from_model(
        &mut model,
        config.epochs as u32,
        config.seed,
        config.hash(),
        norm.clone(),
    );
    Ok(TrainOutcome {
        model,
        checkpoint,
        metrics,
    })
}

/// Eval-mode argmax predictions for an already normalized dataset.
pub fn predict(
    model: &mut Model<f32>,
    dataset: &LabeledDataset,
    batch_size: usize,
) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let Some((h, w, c)) = dataset.image_dims() else {
        return Ok(Vec::new());
    };
    let mut preds = Vec::with_capacity(dataset.len());
    for chunk in dataset.items().chunks(batch_size) {
        let mut values = Vec::with_capacity(chunk.len() * c * h * w);
        for (img, _) in chunk {
            values.extend(img.data().iter().map(|&v| v as f32));
        }
        let x = Tensor4::from_vec([chunk.len(), c, h, w], values)?;
        let logits = model.logits(&x)?;
        for s in 0..chunk.len() {
            let z = logits.sample(s);
            let best = z
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > z[best] { j } else { best });
            preds.push(best);
        }
    }
    Ok(preds)
}

/// Fraction of correctly classified items of an already normalized dataset.
pub fn evaluate(
    model: &mut Model<f32>,
    dataset: &LabeledDataset,
    batch_size: usize,
) -> Result<f64> {
    if model.num_classes() != dataset.num_classes() {
        return Err(Error::invalid(format!(
            "model predicts {} classes but dataset `{}` has {}",
            model.num_classes(),
            dataset.name(),
            dataset.num_classes()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::invalid(format!(
            "dataset `{}` is empty",
            dataset.name()
        )));
    }
    let preds = predict(model, dataset, batch_size)?;
    let correct = preds
        .iter()
        .zip(dataset.items())
        .filter(|(p, (_, l))| *p == l)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Normalizes a raw dataset with the checkpoint's statistics and evaluates.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, dataset: &LabeledDataset) -> Result<f64> {
    if checkpoint.num_classes != dataset.num_classes() {
        return Err(Error::invalid(format!(
            "checkpoint has {} classes but dataset `{}` has {}",
            checkpoint.num_classes,
            dataset.name(),
            dataset.num_classes()
        )));
    }
    let mut model = checkpoint.to_model()?;
    let norm = checkpoint.norm.clone();
    let normalized = dataset.map_images(dataset.name(), |img| normalize(img, &norm))?;
    evaluate(&mut model, &normalized, EVAL_BATCH)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::standard_augment_with;
    use crate::imgfreq::ImageTensor;
    use crate::nnet::module::Slot;
    use rand::Rng;

    /// Class-dependent colour blobs: easy to learn, hard to get by chance.
    fn toy(n: usize, side: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = (0..n)
            .map(|i| {
                let label = i % 4;
                let img = ImageTensor::from_fn(side, side, 3, |c, y, x| {
                    let base = if c == label % 3 { 1.0 } else { -0.5 };
                    let stripe = if label == 3 && (x + y) % 2 == 0 {
                        1.0
                    } else {
                        0.0
                    };
                    base + stripe + 0.3 * rng.random_range(-1.0..1.0)
                });
                (img, label)
            })
            .collect();
        LabeledDataset::new("toy", 4, items).unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            initial_lr: 0.01,
            lr_milestones: vec![],
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn params(m: &mut Model<f32>) -> Vec<u32> {
        let mut out = Vec::new();
        m.visit("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                out.extend(p.value.iter().map(|v| v.to_bits()));
            }
        });
        out
    }

    #[test]
    fn crop_matches_reference_augment() {
        let img = ImageTensor::from_fn(6, 5, 3, |c, y, x| (c * 100 + y * 10 + x) as f64);
        let src: Vec<f32> = img.data().iter().map(|&v| v as f32).collect();
        let mut dst = vec![0f32; src.len()];
        for (oy, ox, flip) in [(0, 0, false), (8, 8, true), (3, 6, true), (4, 4, false)] {
            crop_into(&src, [3, 6, 5], oy, ox, flip, &mut dst);
            let expect = standard_augment_with(&img, oy, ox, flip);
            let expect: Vec<f32> = expect.data().iter().map(|&v| v as f32).collect();
            assert_eq!(dst, expect, "offset ({oy}, {ox}) flip {flip}");
        }
    }

    #[test]
    fn lone_trailing_sample_joins_previous_batch() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![4, 5]);
        let order: Vec<usize> = (0..10).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let ds = toy(4, 8, 0);
        let cfg = TrainConfig {
            initial_lr: 0.0,
            epochs: 1,
            batch_size: 4,
            ..quick(1)
        };
        let norm = NormStats::identity(3);
        let out = train(&cfg, &ds, &ds, &norm, |_| {}).unwrap();
        let mut init: Model<f32> = build_model(&ModelDescriptor::desk(), 3, 4, cfg.seed).unwrap();
        let mut trained = out.model;
        assert_eq!(params(&mut trained), params(&mut init));
        // loss equals the initial loss of the single full batch
        let mut x = Tensor4::<f32>::zeros([4, 3, 8, 8]);
        let data = Flat::new(&ds).unwrap();
        let mut rng = epoch_rng(cfg.seed, 0);
        let mut order: Vec<usize> = (0..4).collect();
        order.shuffle(&mut rng);
        let mut labels = Vec::new();
        for (slot, &i) in order.iter().enumerate() {
            let (oy, ox, flip) = draw_crop(&mut rng);
            crop_into(data.sample(i), data.dims, oy, ox, flip, x.sample_mut(slot));
            labels.push(data.labels[i]);
        }
        let logits = init.forward(&x, Mode::Train).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        assert!((out.metrics[0].train_loss - loss).abs() < 1e-9);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = toy(4, 8, 0);
        let out = train(&quick(0), &ds, &ds, &NormStats::identity(3), |_| {}).unwrap();
        assert!(out.metrics.is_empty());
        let mut init: Model<f32> = build_model(&ModelDescriptor::desk(), 3, 4, 3).unwrap();
        let mut m = out.checkpoint.to_model().unwrap();
        assert_eq!(params(&mut m), params(&mut init));
    }

    #[test]
    fn learns_toy_problem_and_is_reproducible() {
        let ds = toy(32, 8, 1);
        let val = toy(16, 8, 2);
        let norm = NormStats::identity(3);
        let mut seen = 0;
        let a = train(&quick(12), &ds, &val, &norm, |_| seen += 1).unwrap();
        assert_eq!(seen, 12);
        assert!(a.metrics[11].train_loss < a.metrics[0].train_loss);
        assert!(
            a.metrics[11].val_acc >= 0.9,
            "val acc {}",
            a.metrics[11].val_acc
        );
        let b = train(&quick(12), &ds, &val, &norm, |_| {}).unwrap();
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            assert_eq!(
                (x.train_loss.to_bits(), x.val_acc.to_bits()),
                (y.train_loss.to_bits(), y.val_acc.to_bits())
            );
        }
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn evaluation_ignores_batch_size_and_survives_checkpointing() {
        let ds = toy(20, 8, 4);
        let norm = NormStats::identity(3);
        let mut out = train(&quick(3), &ds, &ds, &norm, |_| {}).unwrap();
        let a = evaluate(&mut out.model, &ds, 1).unwrap();
        let b = evaluate(&mut out.model, &ds, 128).unwrap();
        assert_eq!(a, b);
        let p1 = predict(&mut out.model, &ds, 1).unwrap();
        assert_eq!(p1, predict(&mut out.model, &ds, 7).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        out.checkpoint.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(evaluate_checkpoint(&back, &ds).unwrap(), a);
    }

    #[test]
    fn evaluate_edge_cases() {
        let ds = toy(8, 8, 5);
        let mut m: Model<f32> = build_model(&ModelDescriptor::desk(), 3, 4, 0).unwrap();
        let preds = predict(&mut m, &ds, 4).unwrap();
        // relabel to the model's own predictions: accuracy 1
        let items = ds
            .items()
            .iter()
            .zip(&preds)
            .map(|((img, _), &p)| (img.clone(), p))
            .collect();
        let agree = LabeledDataset::new("agree", 4, items).unwrap();
        assert_eq!(evaluate(&mut m, &agree, 3).unwrap(), 1.0);
        let wrong =
            LabeledDataset::new("wrong", 4, vec![(ds.image(0).clone(), (preds[0] + 1) % 4)])
                .unwrap();
        assert_eq!(evaluate(&mut m, &wrong, 1).unwrap(), 0.0);
        let ten = LabeledDataset::new("ten", 10, vec![(ds.image(0).clone(), 0)]).unwrap();
        assert!(matches!(
            evaluate(&mut m, &ten, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn config_validation_and_hash() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hash(), TrainConfig::default().hash());
        let other = TrainConfig {
            seed: 1,
            ..TrainConfig::default()
        };
        assert_ne!(c.hash(), other.hash());
        for bad in [
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr_milestones: vec![5, 5],
                ..TrainConfig::default()
            },
            TrainConfig {
                lr_gamma: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                model: "vgg".into(),
                ..TrainConfig::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert_eq!(c.lr_at(0), 0.1);
        assert!((c.lr_at(100) - 0.01).abs() < 1e-15);
        assert!((c.lr_at(150) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn metrics_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = EpochMetrics {
            epoch: 0,
            lr: 0.1,
            train_loss: 2.5,
            val_acc: 0.25,
            wall_seconds: 1.5,
        };
        write_metrics(&p, &[m]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "epoch,lr,train_loss,val_acc,wall_seconds\n0,0.1,2.500000,0.2500,1.500\n"
        );
    }
}
