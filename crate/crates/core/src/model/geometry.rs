//! Geometry of a single weighted linear map.
//!
//! Fully-connected layers, convolutions and the inner maps of residual
//! blocks are all described by [`MapGeometry`]: a strided, zero-padded 2-D
//! convolution with an optional bias. A fully-connected layer is the 1×1
//! convolution of a `(n, 1, 1)` input.
//!
//! Conventions used everywhere in the crate:
//!
//! * tensors flatten channel-major, then row-major within a channel:
//!   `index = c·H·W + r·W + col`;
//! * the *augmented input* of a map is the padded input followed, when the
//!   map has a bias, by one constant `1` coordinate;
//! * parameters form an `out_channels × (in_channels·kh·kw + bias)` matrix
//!   whose row `o` holds the filter of output channel `o` (entries in
//!   `(in_channel, ki, kj)` row-major order) and, last, its bias.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub const fn vector(n: usize) -> Self {
        Shape { c: n, h: 1, w: 1 }
    }

    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_vector(&self) -> bool {
        self.h == 1 && self.w == 1
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_vector() {
            write!(f, "{}", self.c)
        } else {
            write!(f, "{}x{}x{}", self.c, self.h, self.w)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MapGeometry {
    pub input: Shape,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl MapGeometry {
    pub fn dense(inputs: usize, outputs: usize, bias: bool) -> Self {
        MapGeometry {
            input: Shape::vector(inputs),
            out_channels: outputs,
            kh: 1,
            kw: 1,
            stride: 1,
            padding: 0,
            bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if self.kh == 0 || self.kw == 0 || self.out_channels == 0 || self.input.is_empty() {
            return Err(Error::invalid("map dimensions must be positive"));
        }
        if self.kh > self.input.h + 2 * self.padding || self.kw > self.input.w + 2 * self.padding {
            return Err(Error::invalid(format!(
                "kernel {}x{} larger than padded input {}",
                self.kh, self.kw, self.input
            )));
        }
        Ok(())
    }

    pub fn padded(&self) -> Shape {
        Shape::new(
            self.input.c,
            self.input.h + 2 * self.padding,
            self.input.w + 2 * self.padding,
        )
    }

    pub fn output(&self) -> Shape {
        let p = self.padded();
        Shape::new(
            self.out_channels,
            (p.h - self.kh) / self.stride + 1,
            (p.w - self.kw) / self.stride + 1,
        )
    }

    pub fn in_len(&self) -> usize {
        self.input.len()
    }

    pub fn padded_len(&self) -> usize {
        self.padded().len()
    }

    /// Length of the augmented input (padded input plus bias coordinate).
    pub fn aug_len(&self) -> usize {
        self.padded_len() + usize::from(self.bias)
    }

    pub fn out_len(&self) -> usize {
        self.output().len()
    }

    /// Filter size, i.e. `in_channels · kh · kw`.
    pub fn fan_in(&self) -> usize {
        self.input.c * self.kh * self.kw
    }

    pub fn param_cols(&self) -> usize {
        self.fan_in() + usize::from(self.bias)
    }

    pub fn n_params(&self) -> usize {
        self.out_channels * self.param_cols()
    }

    /// Index of raw input coordinate `raw` inside the augmented input.
    pub fn padded_index(&self, raw: usize) -> usize {
        let hw = self.input.h * self.input.w;
        let (c, rem) = (raw / hw, raw % hw);
        let (r, col) = (rem / self.input.w, rem % self.input.w);
        let p = self.padded();
        c * p.h * p.w + (r + self.padding) * p.w + col + self.padding
    }

    /// Augmented-input coordinates that are padding zeros.
    pub fn pad_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.aug_len()];
        for raw in 0..self.in_len() {
            mask[self.padded_index(raw)] = false;
        }
        if self.bias {
            mask[self.padded_len()] = false;
        }
        mask
    }

    /// Visit every `(output index, parameter index, augmented input index)`
    /// triple of the map, bias taps included.
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = self.padded();
        let out = self.output();
        let cols = self.param_cols();
        let fan = self.fan_in();
        for o in 0..out.c {
            for r in 0..out.h {
                for s in 0..out.w {
                    let oi = (o * out.h + r) * out.w + s;
                    for ic in 0..p.c {
                        for i in 0..self.kh {
                            let row = r * self.stride + i;
                            for j in 0..self.kw {
                                let col = s * self.stride + j;
                                let param = o * cols + (ic * self.kh + i) * self.kw + j;
                                f(oi, param, (ic * p.h + row) * p.w + col);
                            }
                        }
                    }
                    if self.bias {
                        f(oi, o * cols + fan, p.len());
                    }
                }
            }
        }
    }

    fn check_params(&self, params: &Matrix) {
        assert_eq!(
            (params.rows(), params.cols()),
            (self.out_channels, self.param_cols()),
            "parameter matrix does not match map geometry"
        );
    }

    /// Augmented input: zero padding plus the constant bias coordinate.
    pub fn augment<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.in_len(), "input length mismatch");
        let mut u = vec![T::zero(); self.aug_len()];
        for (raw, &v) in x.iter().enumerate() {
            u[self.padded_index(raw)] = v;
        }
        if self.bias {
            u[self.padded_len()] = T::from_f64(1.0);
        }
        u
    }

    /// Drop padding and bias coordinates from an augmented vector.
    pub fn crop<T: Scalar>(&self, u: &[T]) -> Vec<T> {
        (0..self.in_len()).map(|raw| u[self.padded_index(raw)]).collect()
    }

    /// `z = W · augment(x)`.
    pub fn apply<T: Scalar>(&self, params: &Matrix, x: &[T]) -> Vec<T> {
        self.check_params(params);
        let u = self.augment(x);
        let w = params.data();
        let mut z = vec![T::zero(); self.out_len()];
        self.for_each_tap(|o, p, i| z[o] += u[i] * w[p]);
        z
    }

    /// Gradient with respect to the raw input: `crop(Wᵀ · v)`.
    pub fn apply_transpose<T: Scalar>(&self, params: &Matrix, v: &[T]) -> Vec<T> {
        self.check_params(params);
        assert_eq!(v.len(), self.out_len(), "output length mismatch");
        let w = params.data();
        let mut g = vec![T::zero(); self.aug_len()];
        self.for_each_tap(|o, p, i| g[i] += v[o] * w[p]);
        self.crop(&g)
    }

    /// Aggregated parameter gradient `Σ_o k[o] · u[tap]`, flattened like
    /// the parameter matrix.
    pub fn weight_grad<T: Scalar>(&self, k: &[T], x: &[T]) -> Vec<T> {
        assert_eq!(k.len(), self.out_len(), "coefficient length mismatch");
        let u = self.augment(x);
        let mut g = vec![T::zero(); self.n_params()];
        self.for_each_tap(|o, p, i| g[p] += k[o] * u[i]);
        g
    }
}
