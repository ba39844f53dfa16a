//! Central finite-difference gradient checks in 64-bit precision.
//!
//! Each check compares analytic gradients (input and every parameter)
//! against `(L(p + h) - L(p - h)) / 2h` on sampled coordinates, where `L` is
//! either a fixed random projection of the output or softmax cross-entropy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;

use super::batchnorm::BatchNorm2d;
use super::block::Bottleneck;
use super::conv::Conv2d;
use super::layers::{GlobalAvgPool, Linear, MaxPool2x2, Relu};
use super::loss::softmax_cross_entropy;
use super::model::{build_model, ModelDescriptor};
use super::module::{Mode, Module, Slot};
use super::tensor::Tensor4;

pub const STEP: f64 = 1e-5;
/// Denominator floor so that near-zero gradient pairs compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Coordinates sampled per tensor (all of them if the tensor is smaller).
const SAMPLES: usize = 24;
/// The composed model costs a full forward per probe; its layers are
/// already covered densely above.
const MODEL_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Where the worst error occurred, e.g. `input[17]` or `conv1.weight[3]`.
    pub worst: String,
    /// Analytic and numeric values at `worst`.
    pub worst_pair: (f64, f64),
    pub checked: usize,
    /// Coordinates whose difference stencil straddled a kink.
    pub skipped: usize,
}

impl GradReport {
    /// Error under tolerance on at least half of the sampled coordinates.
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE && self.checked > 0 && self.skipped <= self.checked
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone)]
pub enum Objective {
    /// `sum(r * y)` for a fixed tensor `r` of the output's size.
    Projection(Vec<f64>),
    CrossEntropy(Vec<usize>),
}

impl Objective {
    fn eval(&self, y: &Tensor4<f64>) -> Result<(f64, Tensor4<f64>)> {
        match self {
            Objective::Projection(r) => {
                let loss = y.data().iter().zip(r).map(|(a, b)| a * b).sum();
                Ok((loss, Tensor4::from_vec(y.dims(), r.clone())?))
            }
            Objective::CrossEntropy(labels) => softmax_cross_entropy(y, labels),
        }
    }
}

#[derive(Default)]
struct Tracker {
    worst: f64,
    at: String,
    pair: (f64, f64),
    checked: usize,
    skipped: usize,
}

impl Tracker {
    fn record(&mut self, analytic: f64, numeric: Option<f64>, at: impl FnOnce() -> String) {
        let Some(numeric) = numeric else {
            self.skipped += 1;
            return;
        };
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.worst || self.at.is_empty() {
            self.worst = e;
            self.at = at();
            self.pair = (analytic, numeric);
        }
    }
}

impl Tracker {
    fn report(self, name: &str) -> GradReport {
        GradReport {
            name: name.to_string(),
            max_rel_error: self.worst,
            worst: self.at,
            worst_pair: self.pair,
            checked: self.checked,
            skipped: self.skipped,
        }
    }
}

fn sample_coords(len: usize, samples: usize, rng: &mut impl Rng) -> Vec<usize> {
    if len <= samples {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, samples).into_vec()
    }
}

fn loss_of(m: &mut dyn Module<f64>, x: &Tensor4<f64>, obj: &Objective) -> Result<f64> {
    let y = m.forward(x, Mode::Train)?;
    Ok(obj.eval(&y)?.0)
}

/// Nudges coordinate `j` of the `index`-th parameter by `delta`.
fn nudge(m: &mut dyn Module<f64>, index: usize, j: usize, delta: f64) {
    let mut k = 0;
    m.visit("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            if k == index {
                p.value[j] += delta;
            }
            k += 1;
        }
    });
}

/// Central differences at steps `h` and `2h`. `None` when they disagree,
/// which means a kink (ReLU or max-pool switch) lies inside the stencil.
fn central(mut loss_at: impl FnMut(f64) -> Result<f64>) -> Result<Option<f64>> {
    let d1 = (loss_at(STEP)? - loss_at(-STEP)?) / (2.0 * STEP);
    let d2 = (loss_at(2.0 * STEP)? - loss_at(-2.0 * STEP)?) / (4.0 * STEP);
    Ok((relative_error(d1, d2) < TOLERANCE).then_some(d1))
}

/// Checks input and parameter gradients of `module` at `x`.
pub fn check_module(
    name: &str,
    module: &mut dyn Module<f64>,
    x: &Tensor4<f64>,
    objective: &Objective,
    rng: &mut impl Rng,
) -> Result<GradReport> {
    check_module_sampled(name, module, x, objective, SAMPLES, rng)
}

fn check_module_sampled(
    name: &str,
    module: &mut dyn Module<f64>,
    x: &Tensor4<f64>,
    objective: &Objective,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<GradReport> {
    module.zero_grad();
    let y = module.forward(x, Mode::Train)?;
    let (_, g) = objective.eval(&y)?;
    let grad_x = module.backward(&g)?;
    let mut params: Vec<(String, Vec<f64>)> = Vec::new();
    module.visit("", &mut |n, slot| {
        if let Slot::Param(p) = slot {
            params.push((n, p.grad.clone()));
        }
    });

    let mut t = Tracker::default();
    let mut xp = x.clone();
    for i in sample_coords(x.len(), samples, rng) {
        let orig = x.data()[i];
        let numeric = central(|d| {
            xp.data_mut()[i] = orig + d;
            let l = loss_of(module, &xp, objective);
            xp.data_mut()[i] = orig;
            l
        })?;
        t.record(grad_x.data()[i], numeric, || format!("input[{i}]"));
    }
    for (pi, (pname, grad)) in params.iter().enumerate() {
        for j in sample_coords(grad.len(), samples, rng) {
            let numeric = central(|d| {
                nudge(module, pi, j, d);
                let l = loss_of(module, x, objective);
                nudge(module, pi, j, -d);
                l
            })?;
            t.record(grad[j], numeric, || format!("{pname}[{j}]"));
        }
    }
    Ok(t.report(name))
}

/// Checks the logits gradient of softmax cross-entropy.
pub fn check_softmax_ce(logits: &Tensor4<f64>, labels: &[usize]) -> Result<GradReport> {
    let (_, grad) = softmax_cross_entropy(logits, labels)?;
    let mut t = Tracker::default();
    let mut z = logits.clone();
    for i in 0..z.len() {
        let orig = logits.data()[i];
        let numeric = central(|d| {
            z.data_mut()[i] = orig + d;
            let l = softmax_cross_entropy(&z, labels).map(|(l, _)| l);
            z.data_mut()[i] = orig;
            l
        })?;
        t.record(grad.data()[i], numeric, || format!("logits[{i}]"));
    }
    Ok(t.report("softmax_cross_entropy"))
}

fn normal(dims: [usize; 4], rng: &mut impl Rng) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_| StandardNormal.sample(rng))
}

fn projection(len: usize, rng: &mut impl Rng) -> Objective {
    Objective::Projection((0..len).map(|_| StandardNormal.sample(rng)).collect())
}

fn check_layer(
    name: &str,
    m: &mut dyn Module<f64>,
    x: Tensor4<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<GradReport> {
    let out_len = m.forward(&x, Mode::Train)?.len();
    let obj = projection(out_len, rng);
    check_module(name, m, &x, &obj, rng)
}

/// Runs every layer check and the full desk-model check for one seed.
pub fn check_all(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let mut conv = Conv2d::<f64>::new(3, 4, 3, 1, 1, true, &mut rng);
    // non-zero bias so its gradient path is exercised away from init
    conv.bias
        .as_mut()
        .expect("bias")
        .value
        .iter_mut()
        .for_each(|b| *b = rng.random_range(-0.5..0.5));
    let x = normal([2, 3, 6, 6], &mut rng);
    reports.push(check_layer("conv3x3", &mut conv, x, &mut rng)?);

    let mut conv = Conv2d::<f64>::new(4, 5, 3, 2, 1, false, &mut rng);
    let x = normal([2, 4, 7, 7], &mut rng);
    reports.push(check_layer("conv3x3_stride2", &mut conv, x, &mut rng)?);

    let mut conv = Conv2d::<f64>::new(4, 3, 1, 1, 0, true, &mut rng);
    let x = normal([2, 4, 5, 5], &mut rng);
    reports.push(check_layer("conv1x1", &mut conv, x, &mut rng)?);

    let mut conv = Conv2d::<f64>::new(4, 6, 1, 2, 0, false, &mut rng);
    let x = normal([2, 4, 6, 6], &mut rng);
    reports.push(check_layer("conv1x1_stride2", &mut conv, x, &mut rng)?);

    let mut bn = BatchNorm2d::<f64>::new(3);
    bn.scale
        .value
        .iter_mut()
        .for_each(|g| *g = rng.random_range(0.5..1.5));
    bn.shift
        .value
        .iter_mut()
        .for_each(|b| *b = rng.random_range(-0.5..0.5));
    let x = normal([4, 3, 4, 4], &mut rng);
    reports.push(check_layer("batchnorm", &mut bn, x, &mut rng)?);

    // keep inputs away from the kink at zero
    let x = Tensor4::from_fn([2, 3, 4, 4], |_| {
        let mag: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    });
    reports.push(check_layer("relu", &mut Relu::new(), x, &mut rng)?);

    // distinct, well separated values so no window has a near tie
    let dims = [2, 2, 6, 6];
    let mut order: Vec<usize> = (0..dims.iter().product()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let x = Tensor4::from_fn(dims, |i| order[i] as f64 * 0.05);
    reports.push(check_layer(
        "maxpool2x2",
        &mut MaxPool2x2::new(),
        x,
        &mut rng,
    )?);

    let x = normal([2, 3, 5, 5], &mut rng);
    reports.push(check_layer(
        "global_avg_pool",
        &mut GlobalAvgPool::new(),
        x,
        &mut rng,
    )?);

    let mut linear = Linear::<f64>::new(6, 4, &mut rng);
    let x = normal([3, 6, 1, 1], &mut rng);
    reports.push(check_layer("linear", &mut linear, x, &mut rng)?);

    let logits = normal([3, 5, 1, 1], &mut rng);
    let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
    reports.push(check_softmax_ce(&logits, &labels)?);

    let mut block = Bottleneck::<f64>::new(16, 4, 1, &mut rng);
    let x = normal([2, 16, 4, 4], &mut rng);
    reports.push(check_layer("bottleneck_identity", &mut block, x, &mut rng)?);

    let mut block = Bottleneck::<f64>::new(8, 4, 2, &mut rng);
    let x = normal([2, 8, 6, 6], &mut rng);
    reports.push(check_layer(
        "bottleneck_projection",
        &mut block,
        x,
        &mut rng,
    )?);

    let mut model = build_model::<f64>(&ModelDescriptor::desk(), 3, 10, seed)?;
    let x = normal([2, 3, 8, 8], &mut rng);
    let labels: Vec<usize> = (0..2).map(|_| rng.random_range(0..10)).collect();
    let obj = Objective::CrossEntropy(labels);
    reports.push(check_module_sampled(
        "desk_model",
        &mut model,
        &x,
        &obj,
        MODEL_SAMPLES,
        &mut rng,
    )?);

    Ok(reports)
}
