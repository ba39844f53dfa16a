use rand::Rng;

use crate::error::{Error, Result};

use super::batchnorm::BatchNorm2d;
use super::conv::Conv2d;
use super::layers::Relu;
use super::module::{join, Mode, Module, Slot};
use super::scalar::Scalar;
use super::tensor::Tensor4;

/// Bottleneck residual unit:
///
/// ```text
/// x -> conv1x1 -> BN -> ReLU -> conv3x3(stride) -> BN -> ReLU -> conv1x1 -> BN --+
/// |                                                                              (+) -> ReLU
/// +-------------------- shortcut (identity, or 1x1 projection conv) ------------+
/// ```
///
/// The stride sits on the 3x3 convolution. A projection is used whenever
/// the stride or channel count changes.
#[derive(Debug, Clone)]
pub struct Bottleneck<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    relu1: Relu,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    relu2: Relu,
    pub conv3: Conv2d<T>,
    pub bn3: BatchNorm2d<T>,
    pub projection: Option<Conv2d<T>>,
    out_relu: Relu,
}

impl<T: Scalar> Bottleneck<T> {
    pub const EXPANSION: usize = 4;

    pub fn new(in_c: usize, mid_c: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let out_c = mid_c * Self::EXPANSION;
        let conv1 = Conv2d::new(in_c, mid_c, 1, 1, 0, false, rng);
        let conv2 = Conv2d::new(mid_c, mid_c, 3, stride, 1, false, rng);
        let conv3 = Conv2d::new(mid_c, out_c, 1, 1, 0, false, rng);
        let projection = (stride != 1 || in_c != out_c)
            .then(|| Conv2d::new(in_c, out_c, 1, stride, 0, false, rng));
        Self {
            conv1,
            bn1: BatchNorm2d::new(mid_c),
            relu1: Relu::new(),
            conv2,
            bn2: BatchNorm2d::new(mid_c),
            relu2: Relu::new(),
            conv3,
            bn3: BatchNorm2d::new(out_c),
            projection,
            out_relu: Relu::new(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv3.out_channels()
    }

    fn residual_forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let h = self.conv1.forward(x, mode)?;
        let h = self.bn1.forward(&h, mode)?;
        let h = self.relu1.forward(&h, mode)?;
        let h = self.conv2.forward(&h, mode)?;
        let h = self.bn2.forward(&h, mode)?;
        let h = self.relu2.forward(&h, mode)?;
        let h = self.conv3.forward(&h, mode)?;
        self.bn3.forward(&h, mode)
    }
}

impl<T: Scalar> Module<T> for Bottleneck<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let mut sum = self.residual_forward(x, mode)?;
        let shortcut = match self.projection.as_mut() {
            Some(p) => p.forward(x, mode)?,
            None => x.clone(),
        };
        sum.add_assign(&shortcut).map_err(|e| {
            Error::shape(format!(
                "bottleneck shortcut does not match residual path: {e}"
            ))
        })?;
        self.out_relu.forward(&sum, mode)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g_sum = self.out_relu.backward(grad_out)?;
        let g = self.bn3.backward(&g_sum)?;
        let g = self.conv3.backward(&g)?;
        let g = self.relu2.backward(&g)?;
        let g = self.bn2.backward(&g)?;
        let g = self.conv2.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        let g = self.bn1.backward(&g)?;
        let mut g_x = self.conv1.backward(&g)?;
        match self.projection.as_mut() {
            Some(p) => g_x.add_assign(&p.backward(&g_sum)?)?,
            None => g_x.add_assign(&g_sum)?,
        }
        Ok(g_x)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.bn3.visit(&join(prefix, "bn3"), f);
        if let Some(p) = self.projection.as_mut() {
            p.visit(&join(prefix, "projection"), f);
        }
    }
}
