//! Linear constraints on a layer input.
//!
//! A layer `z = W·u` with augmented input `u` (see
//! [`MapGeometry`](crate::model::MapGeometry)) yields two families of linear
//! equations in `u`:
//!
//! * weight constraints, the rows of the lowered matrix `W` with right-hand
//!   side `z`;
//! * gradient constraints `K·u = vec(∇W)`, one row per parameter, where row
//!   `p` carries `k[o]` at every input coordinate that parameter `p` touches
//!   while producing output `o`.
//!
//! Padding coordinates are unknowns like any other, pinned by explicit
//! `u[j] = 0` rows. Rows are always stacked in the order weight, gradient,
//! padding, virtual.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::{LayerKind, LayerSpec, MapGeometry};

/// Dense matrix form of one linear map.
#[derive(Clone, Debug, PartialEq)]
pub struct LoweredLayer {
    pub geometry: MapGeometry,
    /// `|output| × |augmented input|`; the bias column, if any, is last.
    pub w_mat: Matrix,
    /// True where an augmented-input coordinate is a padding zero.
    pub pad_mask: Vec<bool>,
    /// For each parameter, the `(output index, augmented input index)` pairs
    /// it multiplies.
    pub index_maps: Vec<Vec<(usize, usize)>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowLabel {
    Weight,
    Gradient,
    Padding,
    Virtual,
}

impl RowLabel {
    pub fn name(&self) -> &'static str {
        match self {
            RowLabel::Weight => "weight",
            RowLabel::Gradient => "gradient",
            RowLabel::Padding => "padding",
            RowLabel::Virtual => "virtual",
        }
    }
}

/// `A·u = b` with a provenance tag per row.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSystem {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub row_labels: Vec<RowLabel>,
}

impl ConstraintSystem {
    pub fn empty(cols: usize) -> Self {
        ConstraintSystem {
            a: Matrix::zeros(0, cols),
            b: Vec::new(),
            row_labels: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn count(&self, label: RowLabel) -> usize {
        self.row_labels.iter().filter(|&&l| l == label).count()
    }

    /// Append a block of rows sharing one label.
    pub fn push_block(&mut self, label: RowLabel, rows: &Matrix, rhs: &[f64]) -> Result<()> {
        if rows.cols() != self.a.cols() || rows.rows() != rhs.len() {
            return Err(Error::invalid(format!(
                "block {}x{} with {} right-hand sides does not fit a system with {} columns",
                rows.rows(),
                rows.cols(),
                rhs.len(),
                self.a.cols()
            )));
        }
        self.a = Matrix::vstack(&[&self.a, rows])?;
        self.b.extend_from_slice(rhs);
        self.row_labels.extend(std::iter::repeat_n(label, rhs.len()));
        Ok(())
    }

    /// `||A_L·u − b_L||₂` restricted to rows labelled `label`.
    pub fn block_residual(&self, label: RowLabel, u: &[f64]) -> f64 {
        self.row_labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(r, _)| {
                let e = dot(self.a.row(r), u) - self.b[r];
                e * e
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Lower any linear map (dense or convolutional) to its matrix.
pub fn lower_map(geometry: &MapGeometry, params: &Matrix) -> Result<LoweredLayer> {
    geometry.validate()?;
    if (params.rows(), params.cols()) != (geometry.out_channels, geometry.param_cols()) {
        return Err(Error::invalid(format!(
            "kernel {}x{} does not match map expecting {}x{}",
            params.rows(),
            params.cols(),
            geometry.out_channels,
            geometry.param_cols()
        )));
    }
    let mut w_mat = Matrix::zeros(geometry.out_len(), geometry.aug_len());
    let mut index_maps = vec![Vec::new(); geometry.n_params()];
    let w = params.data();
    geometry.for_each_tap(|o, p, i| {
        w_mat[(o, i)] += w[p];
        index_maps[p].push((o, i));
    });
    Ok(LoweredLayer {
        geometry: *geometry,
        w_mat,
        pad_mask: geometry.pad_mask(),
        index_maps,
    })
}

/// Lower a convolutional layer to its extended circulant matrix.
pub fn lower_conv(layer: &LayerSpec, kernel: &Matrix) -> Result<LoweredLayer> {
    if layer.kind != LayerKind::Conv2d {
        return Err(Error::invalid(format!(
            "lower_conv expects a conv2d layer, got {}",
            layer.kind.name()
        )));
    }
    layer.validate()?;
    lower_map(&layer.maps()[0], kernel)
}

fn check_k(geometry: &MapGeometry, k: &[f64]) -> Result<()> {
    if k.len() != geometry.out_len() {
        return Err(Error::invalid(format!(
            "k has {} entries, layer output has {}",
            k.len(),
            geometry.out_len()
        )));
    }
    Ok(())
}

/// `K` with `K·u == vec(∇W)` for the augmented input `u`.
pub fn gradient_constraint_matrix(geometry: &MapGeometry, k: &[f64]) -> Result<Matrix> {
    check_k(geometry, k)?;
    let mut m = Matrix::zeros(geometry.n_params(), geometry.aug_len());
    geometry.for_each_tap(|o, p, i| m[(p, i)] += k[o]);
    Ok(m)
}

/// `K·u` without materializing `K`.
pub fn apply_gradient_constraints(geometry: &MapGeometry, k: &[f64], u: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; geometry.n_params()];
    geometry.for_each_tap(|o, p, i| g[p] += k[o] * u[i]);
    g
}

/// Gradient rows in compact form.
///
/// For a dense map `K = k ⊗ I`, which has as many rows as parameters. Its
/// least-squares content is the square block `||k||·I` with right-hand side
/// `Gᵀk / ||k||`: both have the same normal equations. Convolutions keep
/// the full `K`.
pub(crate) fn gradient_block(
    geometry: &MapGeometry,
    k: &[f64],
    grad: &[f64],
    compact: bool,
) -> Result<(Matrix, Vec<f64>)> {
    check_k(geometry, k)?;
    if grad.len() != geometry.n_params() {
        return Err(Error::invalid(format!(
            "gradient has {} entries, layer has {} parameters",
            grad.len(),
            geometry.n_params()
        )));
    }
    let dense = geometry.input.is_vector() && geometry.kh == 1 && geometry.kw == 1;
    let k_norm = dot(k, k).sqrt();
    if compact && dense && geometry.out_channels > 1 && k_norm > 0.0 {
        let n = geometry.aug_len();
        let mut rhs = vec![0.0; n];
        for (o, &ko) in k.iter().enumerate() {
            for (j, r) in rhs.iter_mut().enumerate() {
                *r += ko * grad[o * n + j];
            }
        }
        rhs.iter_mut().for_each(|r| *r /= k_norm);
        let mut m = Matrix::identity(n);
        m.data_mut().iter_mut().for_each(|v| *v *= k_norm);
        return Ok((m, rhs));
    }
    Ok((gradient_constraint_matrix(geometry, k)?, grad.to_vec()))
}

/// Rows `u[j] = 0` for every padding coordinate.
pub(crate) fn padding_block(pad_mask: &[bool]) -> Matrix {
    let pads: Vec<usize> = (0..pad_mask.len()).filter(|&j| pad_mask[j]).collect();
    let mut m = Matrix::zeros(pads.len(), pad_mask.len());
    for (r, &j) in pads.iter().enumerate() {
        m[(r, j)] = 1.0;
    }
    m
}

fn build(
    lowered: &LoweredLayer,
    k: &[f64],
    grads: &[f64],
    z: &[f64],
    dropped: &[usize],
    include_padding: bool,
    compact: bool,
) -> Result<ConstraintSystem> {
    let geom = &lowered.geometry;
    if z.len() != geom.out_len() {
        return Err(Error::invalid(format!(
            "z has {} entries, layer output has {}",
            z.len(),
            geom.out_len()
        )));
    }
    if let Some(&bad) = dropped.iter().find(|&&r| r >= z.len()) {
        return Err(Error::invalid(format!("dropped row {bad} out of range")));
    }
    let drop: HashSet<usize> = dropped.iter().copied().collect();
    let kept: Vec<usize> = (0..z.len()).filter(|r| !drop.contains(r)).collect();
    let mut weight = Matrix::zeros(kept.len(), geom.aug_len());
    for (r, &o) in kept.iter().enumerate() {
        weight.row_mut(r).copy_from_slice(lowered.w_mat.row(o));
    }
    let rhs: Vec<f64> = kept.iter().map(|&o| z[o]).collect();

    let mut sys = ConstraintSystem::empty(geom.aug_len());
    sys.push_block(RowLabel::Weight, &weight, &rhs)?;
    let (kmat, krhs) = gradient_block(geom, k, grads, compact)?;
    sys.push_block(RowLabel::Gradient, &kmat, &krhs)?;
    if include_padding {
        let pad = padding_block(&lowered.pad_mask);
        sys.push_block(RowLabel::Padding, &pad, &vec![0.0; pad.rows()])?;
    }
    Ok(sys)
}

/// Stack weight rows (minus `dropped`), gradient rows and, optionally, one
/// zero row per padding coordinate.
pub fn assemble_system(
    lowered: &LoweredLayer,
    k: &[f64],
    grads: &[f64],
    z: &[f64],
    dropped: &[usize],
    include_padding: bool,
) -> Result<ConstraintSystem> {
    build(lowered, k, grads, z, dropped, include_padding, false)
}

/// Like [`assemble_system`] but with dense gradient blocks compacted.
pub(crate) fn assemble_compact(
    lowered: &LoweredLayer,
    k: &[f64],
    grads: &[f64],
    z: &[f64],
    dropped: &[usize],
    include_padding: bool,
) -> Result<ConstraintSystem> {
    build(lowered, k, grads, z, dropped, include_padding, true)
}
