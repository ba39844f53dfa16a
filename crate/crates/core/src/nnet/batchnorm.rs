use crate::error::{Error, Result};

use super::module::{join, Mode, Module, Param, Slot};
use super::scalar::Scalar;
use super::tensor::Tensor4;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

const LANES: usize = 8;

/// `sum(f(x))` in f64 with independent partial sums so the loop pipelines.
fn lane_sum<T: Scalar>(xs: &[T], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for chunk in &mut chunks {
        for (a, v) in acc.iter_mut().zip(chunk) {
            *a += f(v.as_f64());
        }
    }
    let tail: f64 = chunks.remainder().iter().map(|v| f(v.as_f64())).sum();
    acc.iter().sum::<f64>() + tail
}

/// Per-channel batch normalization over `N x H x W`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub scale: Param<T>,
    pub shift: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    normalized: Tensor4<T>,
    inv_std: Vec<f64>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Param::filled(vec![channels], T::one()),
            shift: Param::filled(vec![channels], T::zero()),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let [n, c, h, w] = x.dims();
        if c != self.channels() {
            return Err(Error::shape(format!(
                "batch norm has {} channels, input has {c}",
                self.channels()
            )));
        }
        let hw = h * w;
        let count = n * hw;
        let mut out = Tensor4::zeros(x.dims());
        match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::invalid(
                        "batch norm in train mode needs more than one value per channel",
                    ));
                }
                if n < 2 {
                    return Err(Error::invalid("batch norm in train mode needs batch >= 2"));
                }
                let mut normalized = Tensor4::zeros(x.dims());
                let mut inv_std = vec![0.0; c];
                let m = BN_MOMENTUM;
                for ch in 0..c {
                    let plane = |s: usize| &x.data()[(s * c + ch) * hw..][..hw];
                    let sum: f64 = (0..n).map(|s| lane_sum(plane(s), |v| v)).sum();
                    let mean = sum / count as f64;
                    let sq: f64 = (0..n)
                        .map(|s| lane_sum(plane(s), |v| (v - mean) * (v - mean)))
                        .sum();
                    let var = sq / count as f64;
                    let istd = 1.0 / (var + BN_EPS).sqrt();
                    inv_std[ch] = istd;
                    let (g, b) = (self.scale.value[ch], self.shift.value[ch]);
                    let (mu, is) = (T::of(mean), T::of(istd));
                    for s in 0..n {
                        let off = (s * c + ch) * hw;
                        let src = &x.data()[off..off + hw];
                        let nrm = &mut normalized.data_mut()[off..off + hw];
                        for (d, &v) in nrm.iter_mut().zip(src) {
                            *d = (v - mu) * is;
                        }
                        let dst = &mut out.data_mut()[off..off + hw];
                        for (d, &xh) in dst.iter_mut().zip(&normalized.data()[off..off + hw]) {
                            *d = g * xh + b;
                        }
                    }
                    let unbiased = sq / (count - 1) as f64;
                    self.running_mean[ch] =
                        T::of((1.0 - m) * self.running_mean[ch].as_f64() + m * mean);
                    self.running_var[ch] =
                        T::of((1.0 - m) * self.running_var[ch].as_f64() + m * unbiased);
                }
                self.cache = Some(BnCache {
                    normalized,
                    inv_std,
                });
            }
            Mode::Eval => {
                for ch in 0..c {
                    let istd = 1.0 / (self.running_var[ch].as_f64() + BN_EPS).sqrt();
                    let g = self.scale.value[ch].as_f64() * istd;
                    let b = self.shift.value[ch].as_f64() - self.running_mean[ch].as_f64() * g;
                    let (g, b) = (T::of(g), T::of(b));
                    for s in 0..n {
                        let off = (s * c + ch) * hw;
                        for i in off..off + hw {
                            out.data_mut()[i] = x.data()[i] * g + b;
                        }
                    }
                }
                self.cache = None;
            }
        }
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("batch norm backward without a train-mode forward"))?;
        grad_out.same_dims(&cache.normalized, "batch norm backward")?;
        let [n, c, h, w] = grad_out.dims();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut grad_x = Tensor4::zeros(grad_out.dims());
        for ch in 0..c {
            let mut dshift = 0.0;
            let mut dscale = 0.0;
            for s in 0..n {
                let off = (s * c + ch) * hw;
                let go = &grad_out.data()[off..off + hw];
                let nrm = &cache.normalized.data()[off..off + hw];
                dshift += lane_sum(go, |g| g);
                let mut acc = [0.0f64; LANES];
                for (i, (&g, &xh)) in go.iter().zip(nrm).enumerate() {
                    acc[i % LANES] += g.as_f64() * xh.as_f64();
                }
                dscale += acc.iter().sum::<f64>();
            }
            self.scale.grad[ch] = self.scale.grad[ch] + T::of(dscale);
            self.shift.grad[ch] = self.shift.grad[ch] + T::of(dshift);
            let k = T::of(self.scale.value[ch].as_f64() * cache.inv_std[ch] / count);
            let (cnt, dsh, dsc) = (T::of(count), T::of(dshift), T::of(dscale));
            for s in 0..n {
                let off = (s * c + ch) * hw;
                let go = &grad_out.data()[off..off + hw];
                let nrm = &cache.normalized.data()[off..off + hw];
                for ((d, &g), &xh) in grad_x.data_mut()[off..off + hw].iter_mut().zip(go).zip(nrm) {
                    *d = k * (cnt * g - dsh - xh * dsc);
                }
            }
        }
        Ok(grad_x)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, T>)) {
        let c = self.channels();
        f(join(prefix, "scale"), Slot::Param(&mut self.scale));
        f(join(prefix, "shift"), Slot::Param(&mut self.shift));
        f(
            join(prefix, "running_mean"),
            Slot::Buffer {
                dims: vec![c],
                value: &mut self.running_mean,
            },
        );
        f(
            join(prefix, "running_var"),
            Slot::Buffer {
                dims: vec![c],
                value: &mut self.running_var,
            },
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor4::<f64>::from_fn([4, 3, 5, 5], |_| rng.random_range(-3.0..7.0));
        let mut bn = BatchNorm2d::new(3);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|s| (0..25).map(move |i| (s, i)))
                .map(|(s, i)| y.data()[(s * 3 + ch) * 25 + i])
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5 * 10.0, "{var}");
        }
    }

    #[test]
    fn eval_with_default_stats_is_near_identity() {
        let x = Tensor4::<f64>::from_fn([1, 2, 3, 3], |i| i as f64 - 4.0);
        let mut bn = BatchNorm2d::new(2);
        let y = bn.forward(&x, Mode::Eval).unwrap();
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-12);
            assert!((a - b).abs() <= 9.0 * BN_EPS);
        }
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let x = Tensor4::<f64>::from_vec([2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let mut bn = BatchNorm2d::new(1);
        bn.forward(&x, Mode::Train).unwrap();
        // mean 4, unbiased var 20/3
        assert!((bn.running_mean[0] - 0.4).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn batch_of_one_is_rejected_in_train_mode() {
        let x = Tensor4::<f32>::zeros([1, 2, 4, 4]);
        let mut bn = BatchNorm2d::new(2);
        assert!(matches!(
            bn.forward(&x, Mode::Train),
            Err(Error::InvalidArgument(_))
        ));
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }
}
