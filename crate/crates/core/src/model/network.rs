use serde::{Deserialize, Serialize};

use super::activation::{Activation, EXP_CLAMP};
use super::spec::{LayerKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Binary class label `y ∈ {−1, +1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    pub fn from_sign(v: f64) -> Label {
        if v < 0.0 {
            Label::Neg
        } else {
            Label::Pos
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Neg => Label::Pos,
            Label::Pos => Label::Neg,
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Neg => -1,
            Label::Pos => 1,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            -1 => Ok(Label::Neg),
            1 => Ok(Label::Pos),
            other => Err(format!("label must be -1 or 1, got {other}")),
        }
    }
}

/// Per-layer parameter matrices. Plain layers and span-1 blocks hold one
/// matrix, span-2 residual blocks hold two (`W₁`, `W₂`).
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub layers: Vec<Vec<Matrix>>,
}

impl Weights {
    pub fn check(&self, net: &NetworkSpec) -> Result<()> {
        if self.layers.len() != net.depth() {
            return Err(Error::invalid(format!(
                "weights cover {} layers, network has {}",
                self.layers.len(),
                net.depth()
            )));
        }
        for (i, (params, layer)) in self.layers.iter().zip(&net.layers).enumerate() {
            let maps = layer.maps();
            if params.len() != maps.len() {
                return Err(Error::invalid(format!(
                    "layer {i}: expected {} parameter tensors, got {}",
                    maps.len(),
                    params.len()
                )));
            }
            for (p, g) in params.iter().zip(&maps) {
                if (p.rows(), p.cols()) != (g.out_channels, g.param_cols()) {
                    return Err(Error::invalid(format!(
                        "layer {i}: parameter shape {}x{} does not match {}x{}",
                        p.rows(),
                        p.cols(),
                        g.out_channels,
                        g.param_cols()
                    )));
                }
                if !p.is_finite() {
                    return Err(Error::invalid(format!("layer {i}: non-finite weight")));
                }
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().flatten().map(|m| m.data().len()).sum()
    }
}

/// Internals of a span-2 residual block: `pre = W₁·x`, `post = σ(pre)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hidden<T = f64> {
    pub pre: Vec<T>,
    pub post: Vec<T>,
}

/// Every intermediate quantity of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T = f64> {
    /// Raw (unpadded, unaugmented) input of each layer.
    pub inputs: Vec<Vec<T>>,
    pub pre_activations: Vec<Vec<T>>,
    /// `outputs[i] == inputs[i + 1]`.
    pub outputs: Vec<Vec<T>>,
    pub hidden: Vec<Option<Hidden<T>>>,
    /// Network output `w_d · f_{d−1}` before the label is applied.
    pub logit: T,
    pub mu: T,
    pub label: Label,
    pub loss: T,
}

/// Captured gradients, shaped like [`Weights`], plus `∂ℓ/∂μ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Vec<Matrix>>,
    pub dldmu: f64,
}

impl GradientSet {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|m| m.data().iter().copied())
            .collect()
    }

    /// `Σ_i ||∇W_i − ∇W'_i||²` over all parameter tensors.
    pub fn squared_distance(&self, other: &GradientSet) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise dot product `∇W_i · W_i` per layer.
    pub fn weight_dots(&self, weights: &Weights) -> Vec<f64> {
        self.layers
            .iter()
            .zip(&weights.layers)
            .map(|(g, w)| g.iter().zip(w).map(|(a, b)| dot(a.data(), b.data())).sum())
            .collect()
    }

    /// The `∇w_d · w_d` product that equals `(∂ℓ/∂μ)·μ`.
    pub fn last_layer_dot(&self, weights: &Weights) -> f64 {
        let g = self.layers.last().expect("nonempty");
        let w = weights.layers.last().expect("nonempty");
        dot(g[0].data(), w[0].data())
    }

    fn check_shapes(&self, weights: &Weights) -> Result<()> {
        let same = self.layers.len() == weights.layers.len()
            && self.layers.iter().zip(&weights.layers).all(|(g, w)| {
                g.len() == w.len()
                    && g.iter()
                        .zip(w)
                        .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
            });
        if !same {
            return Err(Error::invalid("gradient shapes do not match weights"));
        }
        if self.layers.iter().flatten().any(|m| !m.is_finite()) || !self.dldmu.is_finite() {
            return Err(Error::invalid("gradients contain non-finite entries"));
        }
        Ok(())
    }

    pub fn validate(&self, net: &NetworkSpec, weights: &Weights) -> Result<()> {
        weights.check(net)?;
        self.check_shapes(weights)
    }
}

fn clamp_exp_arg<T: Scalar>(v: T) -> T {
    if v.re() > EXP_CLAMP {
        v + (EXP_CLAMP - v.re())
    } else if v.re() < -EXP_CLAMP {
        v + (-EXP_CLAMP - v.re())
    } else {
        v
    }
}

/// Logistic loss `log(1 + e^{−μ})`, evaluated without overflow.
pub fn logistic_loss<T: Scalar>(mu: T) -> T {
    if mu.re() < 0.0 {
        -mu + clamp_exp_arg(mu).exp().ln_1p()
    } else {
        clamp_exp_arg(-mu).exp().ln_1p()
    }
}

/// `∂ℓ/∂μ = −1 / (1 + e^μ)`; strictly negative for every finite `μ`.
pub fn loss_derivative(mu: f64) -> f64 {
    loss_derivative_t(mu)
}

fn loss_derivative_t<T: Scalar>(mu: T) -> T {
    -(T::from_f64(1.0) / (clamp_exp_arg(mu).exp() + 1.0))
}

fn check_input(net: &NetworkSpec, weights: &Weights, len: usize) -> Result<()> {
    net.validate()?;
    weights.check(net)?;
    if len != net.input_len() {
        return Err(Error::invalid(format!(
            "input has {len} entries, network expects {}",
            net.input_len()
        )));
    }
    Ok(())
}

/// Run the network on `x` with label `y`.
pub fn forward(net: &NetworkSpec, weights: &Weights, x: &[f64], y: Label) -> Result<ForwardTrace> {
    check_input(net, weights, x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("input has non-finite entries"));
    }
    Ok(forward_t(net, weights, x, y))
}

pub(crate) fn forward_t<T: Scalar>(
    net: &NetworkSpec,
    weights: &Weights,
    x: &[T],
    y: Label,
) -> ForwardTrace<T> {
    let d = net.depth();
    let mut trace = ForwardTrace {
        inputs: Vec::with_capacity(d),
        pre_activations: Vec::with_capacity(d),
        outputs: Vec::with_capacity(d),
        hidden: Vec::with_capacity(d),
        logit: T::zero(),
        mu: T::zero(),
        label: y,
        loss: T::zero(),
    };
    let mut cur = x.to_vec();
    for (layer, params) in net.layers.iter().zip(&weights.layers) {
        let maps = layer.maps();
        let (pre, hidden) = match (layer.kind, layer.skip_span) {
            (LayerKind::Residual, 2) => {
                let z1 = maps[0].apply(&params[0], &cur);
                let h: Vec<T> = z1.iter().map(|&z| layer.activation.apply(z)).collect();
                let mut f = maps[1].apply(&params[1], &h);
                for (a, &b) in f.iter_mut().zip(&cur) {
                    *a += b;
                }
                (f, Some(Hidden { pre: z1, post: h }))
            }
            (LayerKind::Residual, _) => {
                let mut z = maps[0].apply(&params[0], &cur);
                for (a, &b) in z.iter_mut().zip(&cur) {
                    *a += b;
                }
                (z, None)
            }
            _ => (maps[0].apply(&params[0], &cur), None),
        };
        let act = layer.output_activation();
        let out: Vec<T> = pre.iter().map(|&z| act.apply(z)).collect();
        trace.inputs.push(std::mem::replace(&mut cur, out.clone()));
        trace.pre_activations.push(pre);
        trace.outputs.push(out);
        trace.hidden.push(hidden);
    }
    trace.logit = cur[0];
    trace.mu = cur[0] * y.value();
    trace.loss = logistic_loss(trace.mu);
    trace
}

/// Exact per-layer gradients of the loss of `trace`.
pub fn backward(net: &NetworkSpec, weights: &Weights, trace: &ForwardTrace) -> Result<GradientSet> {
    weights.check(net)?;
    if trace.inputs.len() != net.depth()
        || trace
            .inputs
            .iter()
            .zip(&net.layers)
            .any(|(x, l)| x.len() != l.in_shape.len())
    {
        return Err(Error::invalid("trace does not match network"));
    }
    let (grads, dldmu) = backward_t(net, weights, trace);
    let layers = grads
        .into_iter()
        .zip(&net.layers)
        .map(|(g, layer)| {
            g.into_iter()
                .zip(layer.maps())
                .map(|(flat, m)| {
                    Matrix::from_row_major(m.out_channels, m.param_cols(), flat).expect("shape")
                })
                .collect()
        })
        .collect();
    Ok(GradientSet { layers, dldmu })
}

/// Flattened gradients per layer and parameter tensor, plus `∂ℓ/∂μ`.
pub(crate) fn backward_t<T: Scalar>(
    net: &NetworkSpec,
    weights: &Weights,
    trace: &ForwardTrace<T>,
) -> (Vec<Vec<Vec<T>>>, T) {
    let d = net.depth();
    let dldmu = loss_derivative_t(trace.mu);
    let mut grads: Vec<Vec<Vec<T>>> = vec![Vec::new(); d];
    // ∂ℓ/∂z of the current layer.
    let mut k = vec![dldmu * trace.label.value()];
    for i in (0..d).rev() {
        let layer = &net.layers[i];
        let params = &weights.layers[i];
        let maps = layer.maps();
        let x = &trace.inputs[i];
        let dx = match (layer.kind, layer.skip_span) {
            (LayerKind::Residual, 2) => {
                let hidden = trace.hidden[i].as_ref().expect("span-2 trace has internals");
                let g2 = maps[1].weight_grad(&k, &hidden.post);
                let dh = maps[1].apply_transpose(&params[1], &k);
                let dz1: Vec<T> = dh
                    .iter()
                    .zip(&hidden.pre)
                    .map(|(&a, &z)| a * layer.activation.derivative(z))
                    .collect();
                let g1 = maps[0].weight_grad(&dz1, x);
                let mut dx = maps[0].apply_transpose(&params[0], &dz1);
                for (a, &b) in dx.iter_mut().zip(&k) {
                    *a += b;
                }
                grads[i] = vec![g1, g2];
                dx
            }
            (LayerKind::Residual, _) => {
                grads[i] = vec![maps[0].weight_grad(&k, x)];
                let mut dx = maps[0].apply_transpose(&params[0], &k);
                for (a, &b) in dx.iter_mut().zip(&k) {
                    *a += b;
                }
                dx
            }
            _ => {
                grads[i] = vec![maps[0].weight_grad(&k, x)];
                maps[0].apply_transpose(&params[0], &k)
            }
        };
        if i > 0 {
            let act = net.layers[i - 1].output_activation();
            k = dx
                .iter()
                .zip(&trace.pre_activations[i - 1])
                .map(|(&g, &z)| g * act.derivative(z))
                .collect();
        }
    }
    (grads, dldmu)
}

/// Captured gradients of a single labelled sample.
pub fn gradients(net: &NetworkSpec, weights: &Weights, x: &[f64], y: Label) -> Result<GradientSet> {
    let trace = forward(net, weights, x, y)?;
    backward(net, weights, &trace)
}

/// Mean of the per-sample gradient sets (the batch "accumulation").
pub fn batch_gradients(
    net: &NetworkSpec,
    weights: &Weights,
    samples: &[(Vec<f64>, Label)],
) -> Result<GradientSet> {
    let Some((first, rest)) = samples.split_first() else {
        return Err(Error::invalid("batch is empty"));
    };
    let mut acc = gradients(net, weights, &first.0, first.1)?;
    for (x, y) in rest {
        let g = gradients(net, weights, x, *y)?;
        for (a, b) in acc.layers.iter_mut().flatten().zip(g.layers.iter().flatten()) {
            for (p, q) in a.data_mut().iter_mut().zip(b.data()) {
                *p += q;
            }
        }
        acc.dldmu += g.dldmu;
    }
    let n = samples.len() as f64;
    for m in acc.layers.iter_mut().flatten() {
        for v in m.data_mut() {
            *v /= n;
        }
    }
    acc.dldmu /= n;
    Ok(acc)
}

/// I.i.d. `Uniform(−1/√fan_in, 1/√fan_in)` weights from the portable PRNG.
///
/// Draw order: layers in network order, parameter tensors in evaluation
/// order, entries row-major (bias column last in each row).
pub fn init_weights(net: &NetworkSpec, seed: u64) -> Weights {
    let mut rng = Rng::new(seed);
    let layers = net
        .layers
        .iter()
        .map(|layer| {
            layer
                .maps()
                .iter()
                .map(|m| {
                    let bound = 1.0 / (m.fan_in() as f64).sqrt();
                    let data = rng.fill_uniform(m.n_params(), -bound, bound);
                    Matrix::from_row_major(m.out_channels, m.param_cols(), data).expect("shape")
                })
                .collect()
        })
        .collect();
    Weights { layers }
}

/// Activation whose outputs feed the last layer.
pub fn penultimate_activation(net: &NetworkSpec) -> Option<Activation> {
    let d = net.depth();
    (d >= 2).then(|| net.layers[d - 2].output_activation())
}
