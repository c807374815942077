//! Optimization-based reconstruction and the hybrid selector.
//!
//! [`dlg_attack`] minimizes the gradient-matching loss
//! `Σ_i ||∇W_i(x) − ∇W_i*||²` over a dummy input with Adam, the label being
//! known. Its gradient is taken either by central differences or exactly,
//! by pushing dual numbers through forward and backward.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{backward_t, forward, forward_t, GradientSet, Label, NetworkSpec, Shape, Weights};
use crate::rng::Rng;
use crate::scalar::{Dual, Scalar};

/// Stop once the matching loss falls below this value.
pub const LOSS_TARGET: f64 = 1e-12;
/// Largest input the finite-difference mode accepts.
pub const FD_MAX_UNKNOWNS: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub enum DlgInit {
    /// `Uniform(0, 1)` per coordinate from the config seed.
    RandomUniform,
    Supplied(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    FiniteDifference,
    Analytic,
}

/// Learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `gamma` at 3/8, 5/8 and 7/8 of `max_iters`.
    MultiStep { gamma: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DlgConfig {
    pub max_iters: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub init: DlgInit,
    pub gradient_mode: GradientMode,
    pub fd_step: f64,
    pub seed: u64,
    pub schedule: LrSchedule,
}

impl Default for DlgConfig {
    fn default() -> Self {
        DlgConfig {
            max_iters: 2000,
            learning_rate: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            init: DlgInit::RandomUniform,
            gradient_mode: GradientMode::FiniteDifference,
            fd_step: 1e-5,
            seed: 0,
            schedule: LrSchedule::MultiStep { gamma: 0.1 },
        }
    }
}

impl DlgConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.fd_step > 0.0 && self.adam_eps > 0.0) {
            return Err(Error::invalid("learning rate, eps and fd_step must be positive"));
        }
        if let LrSchedule::MultiStep { gamma } = self.schedule {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::invalid("schedule gamma must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    fn rate(&self, iter: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::MultiStep { gamma } => {
                let passed = [3, 5, 7]
                    .iter()
                    .filter(|&&m| iter * 8 >= m * self.max_iters)
                    .count();
                self.learning_rate * gamma.powi(passed as i32)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DlgResult {
    pub x_hat: Vec<f64>,
    pub loss_history: Vec<f64>,
    pub iterations_run: usize,
    pub final_loss: f64,
}

fn matching_loss_t<T: Scalar>(
    net: &NetworkSpec,
    weights: &Weights,
    target: &[f64],
    x: &[T],
    y: Label,
) -> T {
    let trace = forward_t(net, weights, x, y);
    let (grads, _) = backward_t(net, weights, &trace);
    let mut acc = T::zero();
    for (g, t) in grads.iter().flatten().flatten().zip(target) {
        let d = *g + (-*t);
        acc += d * d;
    }
    acc
}

fn check_target(net: &NetworkSpec, weights: &Weights, target: &GradientSet, len: usize) -> Result<Vec<f64>> {
    target.validate(net, weights)?;
    if len != net.input_len() {
        return Err(Error::invalid(format!(
            "dummy input has {len} entries, network expects {}",
            net.input_len()
        )));
    }
    Ok(target.flatten())
}

/// `Σ_i ||∇W_i(x_dummy) − ∇W_i*||²`.
pub fn matching_loss(
    net: &NetworkSpec,
    weights: &Weights,
    target: &GradientSet,
    x_dummy: &[f64],
    y: Label,
) -> Result<f64> {
    let flat = check_target(net, weights, target, x_dummy.len())?;
    forward(net, weights, x_dummy, y)?;
    Ok(matching_loss_t(net, weights, &flat, x_dummy, y))
}

/// Gradient of the matching loss, one coordinate per task. Each
/// coordinate's value depends only on the inputs, so the parallel map is
/// deterministic.
fn loss_gradient(
    net: &NetworkSpec,
    weights: &Weights,
    target: &[f64],
    x: &[f64],
    y: Label,
    mode: GradientMode,
    h: f64,
) -> Vec<f64> {
    (0..x.len())
        .into_par_iter()
        .map(|j| match mode {
            GradientMode::FiniteDifference => {
                let mut p = x.to_vec();
                p[j] = x[j] + h;
                let up = matching_loss_t(net, weights, target, &p, y);
                p[j] = x[j] - h;
                let down = matching_loss_t(net, weights, target, &p, y);
                (up - down) / (2.0 * h)
            }
            GradientMode::Analytic => {
                let d: Vec<Dual> = x
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| Dual::new(v, if i == j { 1.0 } else { 0.0 }))
                    .collect();
                matching_loss_t(net, weights, target, &d, y).eps
            }
        })
        .collect()
}

/// Gradient of the matching loss at `x`, as used by [`dlg_attack`].
pub fn matching_loss_gradient(
    net: &NetworkSpec,
    weights: &Weights,
    target: &GradientSet,
    x: &[f64],
    y: Label,
    mode: GradientMode,
    fd_step: f64,
) -> Result<Vec<f64>> {
    let flat = check_target(net, weights, target, x.len())?;
    Ok(loss_gradient(net, weights, &flat, x, y, mode, fd_step))
}

/// Adam on the matching loss. Returns the best iterate seen.
pub fn dlg_attack(
    net: &NetworkSpec,
    weights: &Weights,
    target: &GradientSet,
    y: Label,
    cfg: &DlgConfig,
) -> Result<DlgResult> {
    cfg.validate()?;
    let n = net.input_len();
    let flat = check_target(net, weights, target, n)?;
    if cfg.gradient_mode == GradientMode::FiniteDifference && n > FD_MAX_UNKNOWNS {
        return Err(Error::invalid(format!(
            "finite-difference mode supports at most {FD_MAX_UNKNOWNS} unknowns, input has {n}"
        )));
    }
    let mut x = match &cfg.init {
        DlgInit::RandomUniform => Rng::new(cfg.seed).fill_uniform(n, 0.0, 1.0),
        DlgInit::Supplied(v) => {
            if v.len() != n || v.iter().any(|e| !e.is_finite()) {
                return Err(Error::invalid("supplied initialization has the wrong shape"));
            }
            v.clone()
        }
    };
    let loss_at = |x: &[f64]| matching_loss_t(net, weights, &flat, x, y);
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut history = Vec::with_capacity(cfg.max_iters + 1);
    let mut best = (x.clone(), f64::INFINITY);
    let mut steps = 0;
    loop {
        let loss = loss_at(&x);
        history.push(loss);
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: steps });
        }
        if loss < best.1 {
            best = (x.clone(), loss);
        }
        if loss < LOSS_TARGET || steps == cfg.max_iters {
            break;
        }
        let g = loss_gradient(net, weights, &flat, &x, y, cfg.gradient_mode, cfg.fd_step);
        steps += 1;
        let lr = cfg.rate(steps - 1);
        let c1 = 1.0 - cfg.adam_beta1.powi(steps as i32);
        let c2 = 1.0 - cfg.adam_beta2.powi(steps as i32);
        for j in 0..n {
            m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g[j];
            v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
            x[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(DlgResult {
        x_hat: best.0,
        loss_history: history,
        iterations_run: steps,
        final_loss: best.1,
    })
}

/// Per-channel 3×3 box filter; out-of-image taps count as zeros.
pub fn smooth3x3(img: &[f64], shape: Shape) -> Result<Vec<f64>> {
    if img.len() != shape.len() || shape.is_empty() {
        return Err(Error::invalid(format!(
            "image has {} values, shape {} needs {}",
            img.len(),
            shape,
            shape.len()
        )));
    }
    let (h, w) = (shape.h as isize, shape.w as isize);
    let mut out = vec![0.0; img.len()];
    for c in 0..shape.c {
        let base = c * shape.h * shape.w;
        for r in 0..h {
            for s in 0..w {
                let mut acc = 0.0;
                for dr in -1..=1 {
                    for ds in -1..=1 {
                        let (rr, ss) = (r + dr, s + ds);
                        if (0..h).contains(&rr) && (0..w).contains(&ss) {
                            acc += img[base + (rr * w + ss) as usize];
                        }
                    }
                }
                out[base + (r * w + s) as usize] = acc / 9.0;
            }
        }
    }
    Ok(out)
}

/// `||x − smooth3x3(x)||₂`; large for salt-and-pepper noise.
pub fn roughness(x: &[f64], shape: Shape) -> f64 {
    match smooth3x3(x, shape) {
        Ok(s) => x.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        Err(_) => f64::INFINITY,
    }
}

/// The candidate with the smallest [`roughness`]; ties go to the earlier one.
pub fn hgap_select<'a>(candidates: &'a [(String, Vec<f64>)], shape: Shape) -> Result<&'a (String, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to select from"));
    }
    if candidates.iter().any(|(_, x)| x.len() != shape.len()) {
        return Err(Error::invalid(format!("candidate sizes must match shape {shape}")));
    }
    let scores: Vec<f64> = candidates.iter().map(|(_, x)| roughness(x, shape)).collect();
    let best = (0..scores.len()).fold(0, |b, j| if scores[j] < scores[b] { j } else { b });
    Ok(&candidates[best])
}
