use super::module::{Module, Param, Slot};
use super::scalar::Scalar;

/// One momentum-SGD update with L2 weight decay folded into the gradient:
/// `v <- momentum * v + (grad + weight_decay * param)`, `param <- param - lr * v`.
pub fn sgd_step<T: Scalar>(param: &mut Param<T>, lr: f64, momentum: f64, weight_decay: f64) {
    let (lr, m, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for ((p, g), v) in param
        .value
        .iter_mut()
        .zip(&param.grad)
        .zip(param.velocity.iter_mut())
    {
        *v = m * *v + (*g + wd * *p);
        *p = *p - lr * *v;
    }
}

/// Momentum SGD over every learnable parameter of a module. Buffers such
/// as batch-norm running statistics are never touched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn step<T: Scalar>(&self, module: &mut dyn Module<T>, lr: f64) {
        module.visit("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                sgd_step(p, lr, self.momentum, self.weight_decay);
            }
        });
    }
}

/// `initial_lr * gamma^(number of milestones <= epoch)`; epochs count from 0.
pub fn lr_at_epoch(initial_lr: f64, milestones: &[usize], gamma: f64, epoch: usize) -> f64 {
    let drops = milestones.iter().filter(|&&m| m <= epoch).count();
    initial_lr * gamma.powi(drops as i32)
}
