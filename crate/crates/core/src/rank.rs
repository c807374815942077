//! Static rank analysis.
//!
//! Each layer contributes `n_x` unknowns (its raw input, plus the bias
//! constant), `n_w` gradient constraints (one per parameter) and `n_z`
//! weight constraints (one per output). Overdetermined earlier layers hand
//! surplus equations forward as *virtual* constraints, estimated by
//!
//! ```text
//! n_v(i) = max(0, Σ_{n<i} [max(n_z − n_x, 0) − max(n_x − n_z − n_w, 0)])
//! ```
//!
//! The rank analysis index is `ra_i = n_x − n_w − n_z − n_v`; a positive
//! value means the layer cannot be recovered exactly. Padding coordinates
//! are not counted: each one comes with its own zero constraint.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, solve_square, Matrix};
use crate::model::{LayerKind, LayerSpec, NetworkSpec};

/// Relative norm below which a row adds no new direction.
const PIVOT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LayerRankReport {
    #[serde(rename = "i")]
    pub layer_index: usize,
    pub n_x: usize,
    pub n_w: usize,
    pub n_z: usize,
    pub n_v: usize,
    pub ra_i: i64,
}

impl LayerRankReport {
    fn from_counts(layer_index: usize, n_x: usize, n_w: usize, n_z: usize, n_v: usize) -> Self {
        LayerRankReport {
            layer_index,
            n_x,
            n_w,
            n_z,
            n_v,
            ra_i: n_x as i64 - n_w as i64 - n_z as i64 - n_v as i64,
        }
    }

    /// Surplus this layer exports to later layers (may be negative).
    fn virtual_contribution(&self) -> i64 {
        let (x, w, z) = (self.n_x as i64, self.n_w as i64, self.n_z as i64);
        (z - x).max(0) - (x - z - w).max(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NetworkRankReport {
    pub layers: Vec<LayerRankReport>,
    pub max_ra_i: i64,
    pub critical_layer: usize,
}

impl NetworkRankReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rank report serializes")
    }
}

/// `(n_x, n_w, n_z)` of one layer, ignoring virtual constraints.
fn counts(layer: &LayerSpec) -> (usize, usize, usize) {
    let maps = layer.maps();
    match (layer.kind, layer.skip_span) {
        (LayerKind::Residual, 2) => (layer.in_shape.len(), maps[1].n_params(), layer.out_shape.len()),
        _ => {
            let m = maps[0];
            (m.in_len() + usize::from(m.bias), m.n_params(), m.out_len())
        }
    }
}

pub fn rank_report(net: &NetworkSpec) -> Result<NetworkRankReport> {
    net.validate()?;
    let mut layers = Vec::with_capacity(net.depth());
    let mut carried: i64 = 0;
    for (i, layer) in net.layers.iter().enumerate() {
        let (n_x, n_w, n_z) = counts(layer);
        let report = LayerRankReport::from_counts(i, n_x, n_w, n_z, carried.max(0) as usize);
        carried += report.virtual_contribution();
        layers.push(report);
    }
    let critical_layer = (0..layers.len()).fold(0, |b, j| {
        if layers[j].ra_i > layers[b].ra_i {
            j
        } else {
            b
        }
    });
    Ok(NetworkRankReport {
        max_ra_i: layers[critical_layer].ra_i,
        critical_layer,
        layers,
    })
}

/// Local counts of a residual block in isolation.
///
/// A span-1 block counts like the same layer without its shortcut. A span-2
/// block is locally full-rank exactly when `|f| + |W₂| ≥ |x₁|`.
pub fn residual_block_rank(block: &LayerSpec) -> Result<LayerRankReport> {
    if block.kind != LayerKind::Residual {
        return Err(Error::invalid(format!(
            "expected a residual block, got {}",
            block.kind.name()
        )));
    }
    block.validate()?;
    let (n_x, n_w, n_z) = counts(block);
    Ok(LayerRankReport::from_counts(0, n_x, n_w, n_z, 0))
}

/// Span-2 rule on raw sizes: `ra_i = |x₁| − |W₂| − |f|`.
pub fn span2_rank(f_len: usize, w2_len: usize, x1_len: usize) -> LayerRankReport {
    LayerRankReport::from_counts(0, x1_len, w2_len, f_len, 0)
}

/// Rows of `W` chosen greedily as the best-conditioned square block
/// (column-pivoted Gram–Schmidt on `Wᵀ`), in selection order.
fn pivot_rows(w: &Matrix) -> Result<Vec<usize>> {
    let (m, n) = (w.rows(), w.cols());
    let mut resid: Vec<Vec<f64>> = (0..m).map(|r| w.row(r).to_vec()).collect();
    let scale = resid.iter().map(|r| dot(r, r).sqrt()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::NoVirtualConstraints);
    }
    let mut chosen = vec![false; m];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best = None;
        let mut best_norm = 0.0;
        for r in (0..m).filter(|&r| !chosen[r]) {
            let norm = dot(&resid[r], &resid[r]).sqrt();
            if norm > best_norm {
                best = Some(r);
                best_norm = norm;
            }
        }
        let Some(p) = best.filter(|_| best_norm > PIVOT_TOL * scale) else {
            return Err(Error::NoVirtualConstraints);
        };
        chosen[p] = true;
        order.push(p);
        let q: Vec<f64> = resid[p].iter().map(|v| v / best_norm).collect();
        for r in (0..m).filter(|&r| !chosen[r]) {
            let c = dot(&q, &resid[r]);
            resid[r].iter_mut().zip(&q).for_each(|(a, b)| *a -= c * b);
        }
    }
    Ok(order)
}

/// `V = W₋W₊⁻¹I₊ − I₋`, whose rows annihilate the range of `W`.
///
/// `W₊` holds `cols(W)` pivot rows, `W₋` the remaining rows in ascending
/// order; row `r` of `V` has `−1` at the `r`-th remaining row.
pub fn virtual_constraint_matrix(w_prev: &Matrix) -> Result<Matrix> {
    let (m, n) = (w_prev.rows(), w_prev.cols());
    if m <= n {
        return Err(Error::NoVirtualConstraints);
    }
    let plus = pivot_rows(w_prev)?;
    let mut is_plus = vec![false; m];
    plus.iter().for_each(|&r| is_plus[r] = true);
    let minus: Vec<usize> = (0..m).filter(|&r| !is_plus[r]).collect();

    let mut w_plus_t = Matrix::zeros(n, n);
    for (c, &r) in plus.iter().enumerate() {
        for j in 0..n {
            w_plus_t[(j, c)] = w_prev[(r, j)];
        }
    }
    let mut w_minus_t = Matrix::zeros(n, minus.len());
    for (c, &r) in minus.iter().enumerate() {
        for j in 0..n {
            w_minus_t[(j, c)] = w_prev[(r, j)];
        }
    }
    // (W₋W₊⁻¹)ᵀ = W₊⁻ᵀW₋ᵀ
    let coef_t = solve_square(&w_plus_t, &w_minus_t)?;
    let mut v = Matrix::zeros(minus.len(), m);
    for (row, &r) in minus.iter().enumerate() {
        for (c, &p) in plus.iter().enumerate() {
            v[(row, p)] = coef_t[(c, row)];
        }
        v[(row, r)] = -1.0;
    }
    Ok(v)
}
