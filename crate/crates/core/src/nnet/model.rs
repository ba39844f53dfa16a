use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::batchnorm::BatchNorm2d;
use super::block::Bottleneck;
use super::conv::Conv2d;
use super::layers::{GlobalAvgPool, Linear, Relu};
use super::module::{join, Mode, Module, Slot};
use super::scalar::Scalar;
use super::tensor::Tensor4;

/// Architecture of a bottleneck ResNet with a 3x3 stem (CIFAR-style).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDescriptor {
    pub name: String,
    pub stem_width: usize,
    /// Inner (pre-expansion) width of each stage.
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
}

impl ModelDescriptor {
    /// Three stages of one bottleneck each, widths 16/32/64, ~10 conv layers.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            stem_width: 16,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: vec![1, 1, 1],
        }
    }

    pub fn resnet50() -> Self {
        Self {
            name: "resnet50".into(),
            stem_width: 64,
            stage_widths: vec![64, 128, 256, 512],
            blocks_per_stage: vec![3, 4, 6, 3],
        }
    }

    pub fn resnet101() -> Self {
        Self {
            name: "resnet101".into(),
            stem_width: 64,
            stage_widths: vec![64, 128, 256, 512],
            blocks_per_stage: vec![3, 4, 23, 3],
        }
    }

    pub fn feature_width(&self) -> usize {
        self.stage_widths.last().copied().unwrap_or(self.stem_width) * Bottleneck::<f32>::EXPANSION
    }
}

impl FromStr for ModelDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::desk()),
            "resnet50" => Ok(Self::resnet50()),
            "resnet101" => Ok(Self::resnet101()),
            other => Err(Error::invalid(format!(
                "unknown model descriptor `{other}` (expected desk, resnet50 or resnet101)"
            ))),
        }
    }
}

impl fmt::Display for ModelDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Stem conv/BN/ReLU, bottleneck stages, global average pool, classifier.
#[derive(Debug, Clone)]
pub struct Model<T> {
    descriptor: ModelDescriptor,
    num_classes: usize,
    in_channels: usize,
    pub stem: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    stem_relu: Relu,
    pub blocks: Vec<Bottleneck<T>>,
    pool: GlobalAvgPool,
    pub classifier: Linear<T>,
}

/// Builds a model with He-normal weights drawn from a ChaCha stream keyed
/// by `seed`; identical seeds give bit-identical parameters.
pub fn build_model<T: Scalar>(
    descriptor: &ModelDescriptor,
    in_channels: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Model<T>> {
    if num_classes < 2 {
        return Err(Error::invalid("a classifier needs at least two classes"));
    }
    if descriptor.stage_widths.len() != descriptor.blocks_per_stage.len()
        || descriptor.stage_widths.is_empty()
        || descriptor.blocks_per_stage.contains(&0)
    {
        return Err(Error::invalid(format!(
            "malformed model descriptor {descriptor:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem = Conv2d::new(in_channels, descriptor.stem_width, 3, 1, 1, false, &mut rng);
    let mut blocks = Vec::new();
    let mut channels = descriptor.stem_width;
    for (stage, (&mid, &count)) in descriptor
        .stage_widths
        .iter()
        .zip(&descriptor.blocks_per_stage)
        .enumerate()
    {
        for i in 0..count {
            let stride = if stage > 0 && i == 0 { 2 } else { 1 };
            let block = Bottleneck::new(channels, mid, stride, &mut rng);
            channels = block.out_channels();
            blocks.push(block);
        }
    }
    let classifier = Linear::new(channels, num_classes, &mut rng);
    Ok(Model {
        descriptor: descriptor.clone(),
        num_classes,
        in_channels,
        stem,
        stem_bn: BatchNorm2d::new(descriptor.stem_width),
        stem_relu: Relu::new(),
        blocks,
        pool: GlobalAvgPool::new(),
        classifier,
    })
}

impl<T: Scalar> Model<T> {
    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Number of learnable scalars.
    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                n += p.len();
            }
        });
        n
    }

    pub fn conv_layers(&self) -> usize {
        1 + self
            .blocks
            .iter()
            .map(|b| 3 + usize::from(b.projection.is_some()))
            .sum::<usize>()
    }

    /// Eval-mode logits, `[N, num_classes]` flattened per sample.
    pub fn logits(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.forward(x, Mode::Eval)
    }

    /// Copies every parameter and buffer of `self` into a model of another
    /// precision with the same architecture.
    pub fn cast<U: Scalar>(&mut self) -> Result<Model<U>> {
        let mut out: Model<U> =
            build_model(&self.descriptor, self.in_channels, self.num_classes, 0)?;
        let mut values = Vec::new();
        self.visit("", &mut |name, slot| {
            let v = match slot {
                Slot::Param(p) => p.value.iter().map(|x| x.as_f64()).collect::<Vec<_>>(),
                Slot::Buffer { value, .. } => value.iter().map(|x| x.as_f64()).collect(),
            };
            values.push((name, v));
        });
        let mut it = values.into_iter();
        out.visit("", &mut |name, slot| {
            let (src_name, v) = it.next().expect("same architecture");
            debug_assert_eq!(src_name, name);
            let dst = match slot {
                Slot::Param(p) => &mut p.value,
                Slot::Buffer { value, .. } => value,
            };
            for (d, s) in dst.iter_mut().zip(v) {
                *d = U::of(s);
            }
        });
        Ok(out)
    }
}

impl<T: Scalar> Module<T> for Model<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        if x.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "model expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        let h = self.stem.forward(x, mode)?;
        let h = self.stem_bn.forward(&h, mode)?;
        let mut h = self.stem_relu.forward(&h, mode)?;
        for block in &mut self.blocks {
            h = block.forward(&h, mode)?;
        }
        let h = self.pool.forward(&h, mode)?;
        let out = self.classifier.forward(&h, mode)?;
        out.check_finite("classifier")?;
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.classifier.backward(grad_out)?;
        let mut g = self.pool.backward(&g)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        let g = self.stem_relu.backward(&g)?;
        let g = self.stem_bn.backward(&g)?;
        self.stem.backward(&g)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, T>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.stem_bn.visit(&join(prefix, "stem_bn"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.classifier.visit(&join(prefix, "classifier"), f);
    }
}
