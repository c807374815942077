//! Architecture descriptions and their JSON form.
//!
//! A network file looks like
//!
//! ```json
//! {"layers": [
//!   {"kind": "conv2d", "in": [1, 8, 8], "out": [2, 4, 4], "kernel": [2, 1, 3, 3],
//!    "stride": 2, "padding": 1, "activation": "leaky_relu", "alpha": 0.2,
//!    "bias": false, "skip_span": 0},
//!   {"kind": "fc", "in": [32], "out": [1], "kernel": [1, 32, 1, 1],
//!    "stride": 1, "padding": 0, "activation": "identity", "alpha": null,
//!    "bias": false, "skip_span": 0}
//! ]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::geometry::{MapGeometry, Shape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    FullyConnected,
    Conv2d,
    /// Identity-shortcut block. `skip_span == 1` computes
    /// `f = σ(W·x + x)`; `skip_span == 2` computes `f = W₂·σ(W₁·x) + x`.
    Residual,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::FullyConnected => "fc",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Residual => "residual",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_shape: Shape,
    pub out_shape: Shape,
    /// `(out_ch, in_ch, kh, kw)`. For residual blocks this is the first
    /// inner map; the second (span 2) mirrors it back to `in_ch` channels.
    pub kernel: [usize; 4],
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    /// Bias realized by input augmentation.
    pub bias: bool,
    /// 0 for plain layers, 1 or 2 for residual blocks.
    pub skip_span: usize,
}

impl LayerSpec {
    pub fn fc(inputs: usize, outputs: usize, activation: Activation, bias: bool) -> Self {
        LayerSpec {
            kind: LayerKind::FullyConnected,
            in_shape: Shape::vector(inputs),
            out_shape: Shape::vector(outputs),
            kernel: [outputs, inputs, 1, 1],
            stride: 1,
            padding: 0,
            activation,
            bias,
            skip_span: 0,
        }
    }

    /// Square-kernel convolution; the output shape is derived.
    pub fn conv(
        input: Shape,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
        bias: bool,
    ) -> Self {
        let geom = MapGeometry {
            input,
            out_channels,
            kh: kernel,
            kw: kernel,
            stride: stride.max(1),
            padding,
            bias,
        };
        let out_shape = if kernel <= input.h + 2 * padding && kernel <= input.w + 2 * padding {
            geom.output()
        } else {
            Shape::new(out_channels, 0, 0)
        };
        LayerSpec {
            kind: LayerKind::Conv2d,
            in_shape: input,
            out_shape,
            kernel: [out_channels, input.c, kernel, kernel],
            stride,
            padding,
            activation,
            bias,
            skip_span: 0,
        }
    }

    /// Residual block over `input`. For vector inputs the inner maps are
    /// dense (`kernel` must be 1, `hidden` is the bottleneck width); for
    /// images they are stride-1 convolutions padded to preserve size.
    pub fn residual(
        input: Shape,
        hidden: usize,
        kernel: usize,
        skip_span: usize,
        activation: Activation,
        bias: bool,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::Residual,
            in_shape: input,
            out_shape: input,
            kernel: [hidden, input.c, kernel, kernel],
            stride: 1,
            padding: kernel.saturating_sub(1) / 2,
            activation,
            bias,
            skip_span,
        }
    }

    /// The inner linear maps, in evaluation order.
    pub fn maps(&self) -> Vec<MapGeometry> {
        match self.kind {
            LayerKind::FullyConnected => vec![MapGeometry::dense(
                self.in_shape.len(),
                self.out_shape.len(),
                self.bias,
            )],
            LayerKind::Conv2d => vec![self.first_map()],
            LayerKind::Residual => {
                let first = self.first_map();
                if self.skip_span == 2 {
                    let second = MapGeometry {
                        input: first.output(),
                        out_channels: self.in_shape.c,
                        ..first
                    };
                    vec![first, second]
                } else {
                    vec![first]
                }
            }
        }
    }

    fn first_map(&self) -> MapGeometry {
        MapGeometry {
            input: self.in_shape,
            out_channels: self.kernel[0],
            kh: self.kernel[2],
            kw: self.kernel[3],
            stride: self.stride,
            padding: self.padding,
            bias: self.bias,
        }
    }

    /// Activation applied to the layer's output `f`. Span-2 residual blocks
    /// use their activation internally and emit the raw sum.
    pub fn output_activation(&self) -> Activation {
        if self.kind == LayerKind::Residual && self.skip_span == 2 {
            Activation::Identity
        } else {
            self.activation
        }
    }

    pub fn n_params(&self) -> usize {
        self.maps().iter().map(MapGeometry::n_params).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |m: String| Error::invalid(format!("{} layer: {m}", self.kind.name()));
        if let Activation::LeakyRelu { alpha } = self.activation {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(ctx(format!("leaky_relu alpha {alpha} not in (0, 1)")));
            }
        }
        if self.in_shape.is_empty() || self.out_shape.is_empty() {
            return Err(ctx("empty shape".into()));
        }
        match self.kind {
            LayerKind::FullyConnected => {
                if self.skip_span != 0 {
                    return Err(ctx("skip_span is only valid on residual blocks".into()));
                }
            }
            LayerKind::Conv2d => {
                if self.skip_span != 0 {
                    return Err(ctx("skip_span is only valid on residual blocks".into()));
                }
                if self.kernel[1] != self.in_shape.c {
                    return Err(ctx(format!(
                        "kernel expects {} input channels, input has {}",
                        self.kernel[1], self.in_shape.c
                    )));
                }
                let g = self.first_map();
                g.validate()?;
                if g.output() != self.out_shape {
                    return Err(ctx(format!(
                        "declared output {} but convolution yields {}",
                        self.out_shape,
                        g.output()
                    )));
                }
            }
            LayerKind::Residual => {
                if self.skip_span != 1 && self.skip_span != 2 {
                    return Err(ctx(format!("skip_span {} not in {{1, 2}}", self.skip_span)));
                }
                if self.out_shape != self.in_shape {
                    return Err(ctx("identity shortcut requires out == in".into()));
                }
                if self.kernel[1] != self.in_shape.c {
                    return Err(ctx("kernel input channels differ from block input".into()));
                }
                if self.skip_span == 1 && self.kernel[0] != self.in_shape.c {
                    return Err(ctx("span-1 block must preserve channel count".into()));
                }
                for g in self.maps() {
                    g.validate()?;
                }
                let maps = self.maps();
                let last = maps.last().expect("residual block has maps");
                if last.output() != self.in_shape || maps[0].stride != 1 {
                    return Err(ctx(
                        "inner maps must be stride 1 and preserve spatial size".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let net = NetworkSpec { layers };
        net.validate()?;
        Ok(net)
    }

    /// Number of layers, each residual block counting once.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_shape(&self) -> Shape {
        self.layers[0].in_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape().len()
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::invalid("network has no layers"));
        };
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .validate()
                .map_err(|e| Error::invalid(format!("layer {i}: {e}")))?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_shape.len() != pair[1].in_shape.len() {
                return Err(Error::invalid(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].out_shape.len(),
                    i + 1,
                    pair[1].in_shape.len()
                )));
            }
        }
        if last.kind != LayerKind::FullyConnected || last.out_shape.len() != 1 {
            return Err(Error::invalid(
                "last layer must be fully connected with a single output",
            ));
        }
        if last.activation != Activation::Identity {
            return Err(Error::invalid("last layer must use the identity activation"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| Error::Json {
            path: "<network>".into(),
            source: e,
        })?;
        file.into_spec()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetworkFile::from_spec(self)).expect("serializable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        let file: NetworkFile = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        file.into_spec().map_err(|e| match e {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    kind: String,
    #[serde(rename = "in")]
    input: Vec<usize>,
    out: Vec<usize>,
    #[serde(default)]
    kernel: Option<Vec<usize>>,
    #[serde(default)]
    stride: Option<usize>,
    #[serde(default)]
    padding: Option<usize>,
    activation: String,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    bias: Option<bool>,
    #[serde(default)]
    skip_span: Option<usize>,
}

fn shape_from(v: &[usize]) -> Result<Shape> {
    match v {
        [n] => Ok(Shape::vector(*n)),
        [c, h, w] => Ok(Shape::new(*c, *h, *w)),
        _ => Err(Error::invalid(format!(
            "shape {v:?} must have 1 or 3 entries"
        ))),
    }
}

fn shape_to(s: Shape) -> Vec<usize> {
    if s.is_vector() {
        vec![s.c]
    } else {
        vec![s.c, s.h, s.w]
    }
}

fn activation_from(name: &str, alpha: Option<f64>) -> Result<Activation> {
    Ok(match name {
        "identity" | "linear" => Activation::Identity,
        "relu" => Activation::Relu,
        "leaky_relu" | "leaky-relu" | "leakyrelu" => Activation::LeakyRelu {
            alpha: alpha.unwrap_or(0.2),
        },
        "sigmoid" => Activation::Sigmoid,
        "tanh" => Activation::Tanh,
        other => return Err(Error::invalid(format!("unknown activation {other:?}"))),
    })
}

impl LayerFile {
    fn into_spec(self) -> Result<LayerSpec> {
        let activation = activation_from(&self.activation, self.alpha)?;
        let in_shape = shape_from(&self.input)?;
        let out_shape = shape_from(&self.out)?;
        let bias = self.bias.unwrap_or(false);
        let stride = self.stride.unwrap_or(1);
        let padding = self.padding.unwrap_or(0);
        let kind = match self.kind.as_str() {
            "fc" | "dense" | "fully_connected" | "fully-connected" => LayerKind::FullyConnected,
            "conv2d" | "conv" => LayerKind::Conv2d,
            "residual" | "residual_block" | "residual-block" => LayerKind::Residual,
            other => return Err(Error::invalid(format!("unknown layer kind {other:?}"))),
        };
        let kernel = match (kind, self.kernel.as_deref()) {
            (LayerKind::FullyConnected, _) => [out_shape.len(), in_shape.len(), 1, 1],
            (_, Some([o, i, kh, kw])) => [*o, *i, *kh, *kw],
            (LayerKind::Residual, Some([o, i])) => [*o, *i, 1, 1],
            (_, k) => {
                return Err(Error::invalid(format!(
                    "{} layer needs a 4-entry kernel, got {k:?}",
                    kind.name()
                )))
            }
        };
        let in_shape = if kind == LayerKind::FullyConnected {
            Shape::vector(in_shape.len())
        } else {
            in_shape
        };
        Ok(LayerSpec {
            kind,
            in_shape,
            out_shape,
            kernel,
            stride,
            padding,
            activation,
            bias,
            skip_span: self.skip_span.unwrap_or(0),
        })
    }

    fn from_spec(l: &LayerSpec) -> Self {
        LayerFile {
            kind: l.kind.name().to_string(),
            input: shape_to(l.in_shape),
            out: shape_to(l.out_shape),
            kernel: Some(l.kernel.to_vec()),
            stride: Some(l.stride),
            padding: Some(l.padding),
            activation: l.activation.name().to_string(),
            alpha: l.activation.alpha(),
            bias: Some(l.bias),
            skip_span: Some(l.skip_span),
        }
    }
}

impl NetworkFile {
    fn into_spec(self) -> Result<NetworkSpec> {
        let layers = self
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.into_spec()
                    .map_err(|e| Error::invalid(format!("layer {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        NetworkSpec::new(layers)
    }

    fn from_spec(net: &NetworkSpec) -> Self {
        NetworkFile {
            layers: net.layers.iter().map(LayerFile::from_spec).collect(),
        }
    }
}
