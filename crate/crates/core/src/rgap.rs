//! Closed-form recursive reconstruction.
//!
//! The attack walks the network from the output back to the input. For the
//! logistic loss the last-layer product `∇w_d · w_d` equals `(∂ℓ/∂μ)·μ`,
//! which pins the logit up to a two-fold ambiguity. From the logit and
//! `∂ℓ/∂μ` every layer then yields a linear system in its own input: weight
//! rows `W·u = z` (with `z` obtained by inverting the activation on the
//! input already recovered for the next layer) and gradient rows
//! `K·u = vec(∇W)`, with `k` propagated like a backward pass.

use std::sync::OnceLock;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{numeric_rank, pinv_solve, LstsqSolution, Matrix};
use crate::lowering::{
    apply_gradient_constraints, assemble_compact, gradient_block, lower_map, padding_block,
    ConstraintSystem, RowLabel,
};
use crate::model::{
    loss_derivative, penultimate_activation, Activation, GradientSet, Label, LayerKind, LayerSpec,
    NetworkSpec, Weights,
};
use crate::ogap::roughness;

/// Search limit for the logit; `e^{±700}` is still representable.
const MU_BRACKET: f64 = 700.0;
const BISECT_TOL: f64 = 1e-12;
const G_MIN_SLACK: f64 = 1e-12;
const SIGMOID_CLAMP: f64 = 1e-12;
/// ReLU outputs at or below this fraction of the largest output count as
/// inactive.
const RELU_ZERO_TOL: f64 = 1e-9;

/// `(∂ℓ/∂μ)·μ = −μ / (1 + e^μ)` for the logistic loss.
pub fn dot_of_mu(mu: f64) -> f64 {
    -mu / (1.0 + mu.exp())
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let f_lo_neg = f(lo) < 0.0;
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) < 0.0) == f_lo_neg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimizer `μ*` of `−μ/(1+e^μ)`, the root of `1 + e^μ − μ·e^μ`.
pub fn mu_star() -> f64 {
    static MU_STAR: OnceLock<f64> = OnceLock::new();
    *MU_STAR.get_or_init(|| bisect(|m| 1.0 + m.exp() - m * m.exp(), 1.0, 2.0, 0.0))
}

/// Smallest attainable value of `(∂ℓ/∂μ)·μ`.
pub fn g_min() -> f64 {
    dot_of_mu(mu_star())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MuRecovery {
    pub g: f64,
    /// Ascending.
    pub roots: Vec<f64>,
    pub unique: bool,
}

/// All logits `μ` with `−μ/(1+e^μ) == g`.
pub fn recover_mu(g: f64) -> Result<MuRecovery> {
    if !g.is_finite() {
        return Err(Error::invalid("g must be finite"));
    }
    let shifted = |m: f64| dot_of_mu(m) - g;
    let (m_star, g_lo) = (mu_star(), g_min());
    let roots = if g > 0.0 {
        if g >= dot_of_mu(-MU_BRACKET) {
            return Err(Error::NumericalFailure(format!(
                "g = {g:e} needs a logit below -{MU_BRACKET}"
            )));
        }
        vec![bisect(shifted, -MU_BRACKET, 0.0, BISECT_TOL)]
    } else if g == 0.0 {
        vec![0.0]
    } else if g < g_lo - G_MIN_SLACK {
        return Err(Error::NoMuSolution { g, g_min: g_lo });
    } else if g <= g_lo {
        vec![m_star]
    } else {
        if g >= dot_of_mu(MU_BRACKET) {
            return Err(Error::NumericalFailure(format!(
                "g = {g:e} needs a logit above {MU_BRACKET}"
            )));
        }
        vec![
            bisect(shifted, 0.0, m_star, BISECT_TOL),
            bisect(shifted, m_star, MU_BRACKET, BISECT_TOL),
        ]
    };
    Ok(MuRecovery {
        g,
        unique: roots.len() == 1,
        roots,
    })
}

/// Label from the sign of the last-layer gradient.
///
/// With a non-negative penultimate activation every nonzero entry of
/// `∇w_d` has the sign of `y·∂ℓ/∂μ`, and `∂ℓ/∂μ < 0`.
pub fn infer_label(grad_w_d: &[f64], prev_activation: Activation) -> Result<Label> {
    if !prev_activation.is_sign_definite() {
        return Err(Error::Unsupported(format!(
            "label inference needs a non-negative penultimate activation, got {}",
            prev_activation.name()
        )));
    }
    let s = grad_w_d
        .iter()
        .copied()
        .fold(0.0_f64, |best, v| if v.abs() > best.abs() { v } else { best });
    if s == 0.0 {
        return Err(Error::IndeterminateLabel);
    }
    Ok(Label::from_sign(-s))
}

/// Pre-activations recovered from outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    pub z: Vec<f64>,
    pub sigma_prime: Vec<f64>,
    /// ReLU coordinates whose pre-activation is unknown.
    pub dropped: Vec<usize>,
}

pub fn invert_activation(f: &[f64], act: Activation) -> Result<Inversion> {
    let n = f.len();
    let mut inv = Inversion {
        z: Vec::with_capacity(n),
        sigma_prime: Vec::with_capacity(n),
        dropped: Vec::new(),
    };
    match act {
        Activation::Identity => {
            inv.z = f.to_vec();
            inv.sigma_prime = vec![1.0; n];
        }
        Activation::Relu => {
            let scale = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for (j, &v) in f.iter().enumerate() {
                // Reconstruction noise can leave dead units slightly negative.
                if v <= RELU_ZERO_TOL * scale {
                    inv.z.push(0.0);
                    inv.sigma_prime.push(0.0);
                    inv.dropped.push(j);
                } else {
                    inv.z.push(v);
                    inv.sigma_prime.push(1.0);
                }
            }
        }
        Activation::LeakyRelu { alpha } => {
            for &v in f {
                if v > 0.0 {
                    inv.z.push(v);
                    inv.sigma_prime.push(1.0);
                } else {
                    inv.z.push(v / alpha);
                    inv.sigma_prime.push(alpha);
                }
            }
        }
        Activation::Sigmoid => {
            for (j, &v) in f.iter().enumerate() {
                if !(-SIGMOID_CLAMP..=1.0 + SIGMOID_CLAMP).contains(&v) {
                    return Err(Error::InversionDomain(format!(
                        "sigmoid output {v} at coordinate {j} is outside [0, 1]"
                    )));
                }
                let p = v.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP);
                inv.z.push((p / (1.0 - p)).ln());
                inv.sigma_prime.push(p * (1.0 - p));
            }
        }
        Activation::Tanh => {
            for (j, &v) in f.iter().enumerate() {
                if !(-1.0 - SIGMOID_CLAMP..=1.0 + SIGMOID_CLAMP).contains(&v) {
                    return Err(Error::InversionDomain(format!(
                        "tanh output {v} at coordinate {j} is outside [-1, 1]"
                    )));
                }
                let t = v.clamp(-1.0 + SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP);
                inv.z.push(t.atanh());
                inv.sigma_prime.push(1.0 - t * t);
            }
        }
    }
    Ok(inv)
}

/// Which logit to use when two are consistent with the gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RootPolicy {
    /// The smaller root.
    First,
    /// The larger root.
    Second,
    /// Reconstruct with both.
    Both,
    /// Reconstruct with both and keep the one with less high-frequency
    /// energy.
    #[default]
    Smoothness,
}

impl std::str::FromStr for RootPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(RootPolicy::First),
            "second" => Ok(RootPolicy::Second),
            "both" => Ok(RootPolicy::Both),
            "smoothness" => Ok(RootPolicy::Smoothness),
            other => Err(Error::invalid(format!("unknown root policy {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RgapOptions {
    pub root_policy: RootPolicy,
    /// Use the surplus equations of an identity-activated, overdetermined
    /// previous layer: the layer input is solved for as `W·u + c`.
    pub virtual_constraints: bool,
    /// Relative singular-value cutoff (`0` selects the default).
    pub rcond: f64,
}

impl Default for RgapOptions {
    fn default() -> Self {
        RgapOptions {
            root_policy: RootPolicy::Smoothness,
            virtual_constraints: false,
            rcond: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BlockResiduals {
    pub weight: f64,
    pub gradient: f64,
    pub padding: f64,
    #[serde(rename = "virtual")]
    pub virtual_: f64,
}

impl BlockResiduals {
    fn total(&self) -> f64 {
        (self.weight.powi(2) + self.gradient.powi(2) + self.padding.powi(2) + self.virtual_.powi(2))
            .sqrt()
    }
}

/// Solve diagnostics of one layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    /// Reconstructed raw input of this layer.
    #[serde(skip)]
    pub x_hat_i: Vec<f64>,
    /// `||A·u − b||₂` over the full, uncompressed system.
    pub residual_norm: f64,
    pub residuals: BlockResiduals,
    /// Ratio of extreme retained singular values.
    pub condition: f64,
    pub numeric_rank: usize,
    pub unknowns: usize,
    pub dropped_rows: usize,
    pub virtual_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackResult {
    pub x_hat: Vec<f64>,
    /// Indexed by layer, input layer first.
    pub per_layer: Vec<LayerDiagnostics>,
    pub mu_used: f64,
    pub label: Label,
    pub runtime_ms: f64,
}

/// Every reconstruction an attack produced, with the policy's pick.
#[derive(Clone, Debug, PartialEq)]
pub struct RgapOutcome {
    pub mu: MuRecovery,
    pub label: Label,
    pub results: Vec<AttackResult>,
    pub selected: usize,
}

impl RgapOutcome {
    pub fn best(&self) -> &AttackResult {
        &self.results[self.selected]
    }

    pub fn into_best(mut self) -> AttackResult {
        self.results.swap_remove(self.selected)
    }
}

/// Label from the hint or, failing that, from the gradient signs.
pub fn resolve_label(net: &NetworkSpec, grads: &GradientSet, hint: Option<Label>) -> Result<Label> {
    if let Some(y) = hint {
        return Ok(y);
    }
    let prev = penultimate_activation(net).ok_or_else(|| {
        Error::Unsupported("label inference needs at least two layers; supply the label".into())
    })?;
    infer_label(grads.layers.last().expect("nonempty")[0].data(), prev)
}

/// Run the full attack.
pub fn rgap_attack(
    net: &NetworkSpec,
    weights: &Weights,
    grads: &GradientSet,
    label_hint: Option<Label>,
    opts: &RgapOptions,
) -> Result<RgapOutcome> {
    grads.validate(net, weights)?;
    let mu = recover_mu(grads.last_layer_dot(weights))?;
    let label = resolve_label(net, grads, label_hint)?;
    let candidates: Vec<f64> = match (mu.unique, opts.root_policy) {
        (true, _) | (false, RootPolicy::First) => vec![mu.roots[0]],
        (false, RootPolicy::Second) => vec![mu.roots[1]],
        (false, _) => mu.roots.clone(),
    };
    let mut results = Vec::new();
    let mut first_err = None;
    for &m in &candidates {
        match reconstruct(net, weights, grads, m, label, opts) {
            Ok(r) => results.push(r),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if results.is_empty() {
        return Err(first_err.expect("at least one candidate"));
    }
    let selected = if opts.root_policy == RootPolicy::Smoothness && results.len() > 1 {
        let shape = net.input_shape();
        let scores: Vec<f64> = results.iter().map(|r| roughness(&r.x_hat, shape)).collect();
        (0..scores.len()).fold(0, |b, j| if scores[j] < scores[b] { j } else { b })
    } else {
        0
    };
    Ok(RgapOutcome {
        mu,
        label,
        results,
        selected,
    })
}

/// Reconstruction driven by the logit that was *not* realized.
///
/// On networks whose layers are positively homogeneous the twin is the true
/// input scaled by `μ̃/μ`.
pub fn twin_data(
    net: &NetworkSpec,
    weights: &Weights,
    grads: &GradientSet,
    label_hint: Option<Label>,
    true_mu: f64,
) -> Result<AttackResult> {
    grads.validate(net, weights)?;
    let mu = recover_mu(grads.last_layer_dot(weights))?;
    if mu.unique {
        return Err(Error::NoTwin);
    }
    let twin = if (mu.roots[0] - true_mu).abs() > (mu.roots[1] - true_mu).abs() {
        mu.roots[0]
    } else {
        mu.roots[1]
    };
    let label = resolve_label(net, grads, label_hint)?;
    reconstruct(net, weights, grads, twin, label, &RgapOptions::default())
}

/// Back-propagate from a given logit and label.
pub fn reconstruct(
    net: &NetworkSpec,
    weights: &Weights,
    grads: &GradientSet,
    mu: f64,
    label: Label,
    opts: &RgapOptions,
) -> Result<AttackResult> {
    let start = Instant::now();
    grads.validate(net, weights)?;
    let d = net.depth();
    let y = label.value();
    // Output of the current layer and ∂ℓ/∂(that output).
    let mut f = vec![mu / y];
    let mut delta = vec![y * loss_derivative(mu)];
    let mut per_layer = Vec::with_capacity(d);
    for i in (0..d).rev() {
        let layer = &net.layers[i];
        let params = &weights.layers[i];
        let g = &grads.layers[i];
        let inv = invert_activation(&f, layer.output_activation())?;
        let k: Vec<f64> = delta.iter().zip(&inv.sigma_prime).map(|(a, b)| a * b).collect();
        let (x, diag, delta_in) = match (layer.kind, layer.skip_span) {
            (LayerKind::Residual, 2) => {
                let (x, diag) = rgap_residual_block(layer, params, &inv.z, &k, g, opts.rcond)?;
                let maps = layer.maps();
                let dh = maps[1].apply_transpose(&params[1], &k);
                let mut dx = maps[0].apply_transpose(&params[0], &dh);
                dx.iter_mut().zip(&k).for_each(|(a, b)| *a += b);
                (x, diag, dx)
            }
            _ => {
                let virt = if opts.virtual_constraints && i > 0 {
                    carrier(&net.layers[i - 1], &weights.layers[i - 1])
                } else {
                    None
                };
                let (x, diag) = solve_plain(layer, &params[0], &inv, &k, g[0].data(), virt, opts.rcond)?;
                let geom = layer.maps()[0];
                let mut dx = geom.apply_transpose(&params[0], &k);
                if layer.kind == LayerKind::Residual {
                    dx.iter_mut().zip(&k).for_each(|(a, b)| *a += b);
                }
                (x, diag, dx)
            }
        };
        per_layer.push(LayerDiagnostics {
            layer: i,
            x_hat_i: x.clone(),
            ..diag
        });
        f = x;
        delta = delta_in;
    }
    per_layer.reverse();
    Ok(AttackResult {
        x_hat: f,
        per_layer,
        mu_used: mu,
        label,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Link to an identity-activated, overdetermined plain layer
/// `x = W·u + c` feeding the current layer.
struct Carrier {
    /// Number of independent virtual constraints `x ∈ c + range(W)` implies.
    implied: usize,
    w: Matrix,
    c: Vec<f64>,
}

fn carrier(prev: &LayerSpec, params: &[Matrix]) -> Option<Carrier> {
    if prev.output_activation() != Activation::Identity
        || !matches!(prev.kind, LayerKind::FullyConnected | LayerKind::Conv2d)
    {
        return None;
    }
    let geom = prev.maps()[0];
    if geom.out_len() <= geom.in_len() {
        return None;
    }
    let low = lower_map(&geom, &params[0]).ok()?;
    let n = geom.in_len();
    let mut w = Matrix::zeros(geom.out_len(), n);
    for o in 0..geom.out_len() {
        for raw in 0..n {
            w[(o, raw)] = low.w_mat[(o, geom.padded_index(raw))];
        }
    }
    let c: Vec<f64> = if geom.bias {
        (0..geom.out_len()).map(|o| low.w_mat[(o, geom.padded_len())]).collect()
    } else {
        vec![0.0; geom.out_len()]
    };
    let implied = w.rows() - numeric_rank(&w, 0.0).ok()?;
    Some(Carrier { implied, w, c })
}

fn diagnostics(sol: &LstsqSolution, residuals: BlockResiduals, dropped: usize, virt: usize) -> LayerDiagnostics {
    LayerDiagnostics {
        layer: 0,
        x_hat_i: Vec::new(),
        residual_norm: residuals.total(),
        residuals,
        condition: sol.condition,
        numeric_rank: sol.numeric_rank,
        unknowns: sol.x.len(),
        dropped_rows: dropped,
        virtual_rows: virt,
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// One plain layer or span-1 block.
fn solve_plain(
    layer: &LayerSpec,
    params: &Matrix,
    inv: &Inversion,
    k: &[f64],
    grad: &[f64],
    virt: Option<Carrier>,
    rcond: f64,
) -> Result<(Vec<f64>, LayerDiagnostics)> {
    let geom = layer.maps()[0];
    let mut low = lower_map(&geom, params)?;
    if layer.kind == LayerKind::Residual {
        // f = σ(W·x + x): the shortcut adds the identity to the weight rows.
        for o in 0..geom.out_len() {
            low.w_mat[(o, geom.padded_index(o))] += 1.0;
        }
    }
    let sys = assemble_compact(&low, k, grad, &inv.z, &inv.dropped, true)?;
    let n_virt = virt.as_ref().map_or(0, |c| c.implied);
    let (sol, x_aug) = match virt {
        None => {
            let sol = pinv_solve(&sys.a, &sys.b, rcond)?;
            let x = sol.x.clone();
            (sol, x)
        }
        Some(link) => {
            // Virtual constraints confine x to `c + range(W)`. Substituting
            // `x = W·u + c` enforces all of them exactly and makes the
            // minimum-norm choice in the coordinates the attack ends in.
            let mut m = Matrix::zeros(geom.aug_len(), link.w.cols());
            let mut m0 = vec![0.0; geom.aug_len()];
            for raw in 0..geom.in_len() {
                let p = geom.padded_index(raw);
                m.row_mut(p).copy_from_slice(link.w.row(raw));
                m0[p] = link.c[raw];
            }
            if geom.bias {
                m0[geom.padded_len()] = 1.0;
            }
            let shifted = sys.a.matvec(&m0);
            let b: Vec<f64> = sys.b.iter().zip(&shifted).map(|(p, q)| p - q).collect();
            let sol = pinv_solve(&sys.a.matmul(&m), &b, rcond)?;
            let x = m.matvec(&sol.x).iter().zip(&m0).map(|(p, q)| p + q).collect();
            (sol, x)
        }
    };
    let u = &x_aug;
    let residuals = BlockResiduals {
        weight: sys.block_residual(RowLabel::Weight, u),
        gradient: norm_diff(&apply_gradient_constraints(&geom, k, u), grad),
        padding: sys.block_residual(RowLabel::Padding, u),
        virtual_: sys.block_residual(RowLabel::Virtual, u),
    };
    let diag = diagnostics(&sol, residuals, inv.dropped.len(), n_virt);
    Ok((geom.crop(u), diag))
}

/// Reconstruct the input `x₁` of a span-2 block `f = W₂·h + x₁`,
/// `h = W₁·x₁`, from its output `f`, output coefficients `k = ∂ℓ/∂f` and
/// the block gradients.
///
/// Unknowns are the augmented hidden vector and the augmented input. The
/// system holds the output rows, the gradient rows of `W₂` and the cross
/// rows `h − W₁·x₁ = 0` (tagged virtual), plus known-coordinate rows for
/// padding and the bias constant of `x₁`, which no gradient row touches.
/// The input is read off as `x₁ = f − W₂·h`.
pub fn rgap_residual_block(
    block: &LayerSpec,
    params: &[Matrix],
    f: &[f64],
    k: &[f64],
    grads: &[Matrix],
    rcond: f64,
) -> Result<(Vec<f64>, LayerDiagnostics)> {
    if block.kind != LayerKind::Residual || block.skip_span != 2 {
        return Err(Error::invalid("residual reconstruction needs a span-2 block"));
    }
    if block.activation != Activation::Identity {
        return Err(Error::Unsupported(format!(
            "residual reconstruction needs an identity inner activation, got {}",
            block.activation.name()
        )));
    }
    let maps = block.maps();
    let (m1, m2) = (maps[0], maps[1]);
    if params.len() != 2 || grads.len() != 2 || f.len() != m2.out_len() || k.len() != m2.out_len() {
        return Err(Error::invalid("residual block inputs have inconsistent shapes"));
    }
    let low1 = lower_map(&m1, &params[0])?;
    let low2 = lower_map(&m2, &params[1])?;
    let (a2, a1) = (m2.aug_len(), m1.aug_len());
    let n = a2 + a1;
    let mut sys = ConstraintSystem::empty(n);

    let mut weight = Matrix::zeros(f.len(), n);
    for o in 0..f.len() {
        weight.row_mut(o)[..a2].copy_from_slice(low2.w_mat.row(o));
        weight[(o, a2 + m1.padded_index(o))] += 1.0;
    }
    sys.push_block(RowLabel::Weight, &weight, f)?;

    let (kmat, krhs) = gradient_block(&m2, k, grads[1].data(), true)?;
    let mut grad_rows = Matrix::zeros(kmat.rows(), n);
    for r in 0..kmat.rows() {
        grad_rows.row_mut(r)[..a2].copy_from_slice(kmat.row(r));
    }
    sys.push_block(RowLabel::Gradient, &grad_rows, &krhs)?;

    let mut known_mask = vec![false; n];
    for (j, &m) in m2.pad_mask().iter().enumerate() {
        known_mask[j] = m;
    }
    for (j, &m) in m1.pad_mask().iter().enumerate() {
        known_mask[a2 + j] = m;
    }
    let mut known = padding_block(&known_mask);
    let mut known_rhs = vec![0.0; known.rows()];
    if m1.bias {
        let mut row = Matrix::zeros(1, n);
        row[(0, n - 1)] = 1.0;
        known = Matrix::vstack(&[&known, &row])?;
        known_rhs.push(1.0);
    }
    sys.push_block(RowLabel::Padding, &known, &known_rhs)?;

    let hidden = m1.out_len();
    let mut cross = Matrix::zeros(hidden, n);
    for j in 0..hidden {
        cross[(j, m2.padded_index(j))] = 1.0;
        for (c, &w) in low1.w_mat.row(j).iter().enumerate() {
            cross[(j, a2 + c)] = -w;
        }
    }
    sys.push_block(RowLabel::Virtual, &cross, &vec![0.0; hidden])?;

    let sol = pinv_solve(&sys.a, &sys.b, rcond)?;
    let u = &sol.x;
    let residuals = BlockResiduals {
        weight: sys.block_residual(RowLabel::Weight, u),
        gradient: norm_diff(&apply_gradient_constraints(&m2, k, &u[..a2]), grads[1].data()),
        padding: sys.block_residual(RowLabel::Padding, u),
        virtual_: sys.block_residual(RowLabel::Virtual, u),
    };
    let w2h = low2.w_mat.matvec(&u[..a2]);
    let x1: Vec<f64> = f.iter().zip(&w2h).map(|(a, b)| a - b).collect();
    Ok((x1, diagnostics(&sol, residuals, 0, hidden)))
}
