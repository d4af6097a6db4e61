//! Network architecture description and shape inference.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Kind-specific layer parameters. Serialized with a `kind` tag next to the
/// layer name, e.g. `{"name":"conv1","kind":"conv","out_channels":8,...}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Input {
        height: usize,
        width: usize,
        channels: usize,
    },
    Conv {
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Maxpool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
    Softmax,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool { .. } => "maxpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Softmax => "softmax",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Dense { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Output shape of a layer. Spatial blobs are stored channel-first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerShape {
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat {
        features: usize,
    },
}

impl LayerShape {
    /// Tensor dimensions in storage order (`[C, H, W]` or `[N]`).
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            LayerShape::Spatial {
                channels,
                height,
                width,
            } => vec![channels, height, width],
            LayerShape::Flat { features } => vec![features],
        }
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerShape::Spatial {
                channels,
                height,
                width,
            } => write!(f, "{height}×{width}×{channels}"),
            LayerShape::Flat { features } => write!(f, "{features}"),
        }
    }
}

/// A learnable tensor declared by the architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub layer: String,
    pub shape: Vec<usize>,
    /// Number of inputs feeding one output unit; drives the init bound.
    pub fan_in: usize,
    pub is_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArchitecture {
    pub layers: Vec<LayerSpec>,
}

/// Conv/pool output size, `None` when the window does not fit.
fn window_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl ModelArchitecture {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        Self { layers }
    }

    /// input 32×32×3 → conv(8) → relu → pool → conv(16) → relu → pool →
    /// flatten → dense(n_classes) → softmax.
    pub fn reference(n_classes: usize) -> Self {
        Self::new(vec![
            LayerSpec::new(
                "input",
                LayerKind::Input {
                    height: 32,
                    width: 32,
                    channels: 3,
                },
            ),
            LayerSpec::new(
                "conv1",
                LayerKind::Conv {
                    out_channels: 8,
                    kernel_size: 3,
                    stride: 1,
                    padding: 1,
                },
            ),
            LayerSpec::new("relu1", LayerKind::Relu),
            LayerSpec::new(
                "pool1",
                LayerKind::Maxpool {
                    window: 2,
                    stride: 2,
                },
            ),
            LayerSpec::new(
                "conv2",
                LayerKind::Conv {
                    out_channels: 16,
                    kernel_size: 3,
                    stride: 1,
                    padding: 1,
                },
            ),
            LayerSpec::new("relu2", LayerKind::Relu),
            LayerSpec::new(
                "pool2",
                LayerKind::Maxpool {
                    window: 2,
                    stride: 2,
                },
            ),
            LayerSpec::new("flatten", LayerKind::Flatten),
            LayerSpec::new(
                "fc1",
                LayerKind::Dense {
                    out_features: n_classes,
                },
            ),
            LayerSpec::new("softmax", LayerKind::Softmax),
        ])
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("architecture JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("architecture serializes")
    }

    /// SHA-256 of the compact JSON serialization, lowercase hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn layer(&self, name: &str) -> Option<(usize, &LayerSpec)> {
        self.layers.iter().enumerate().find(|(_, l)| l.name == name)
    }

    /// `(height, width, channels)` of the input layer.
    pub fn input_dims(&self) -> Result<(usize, usize, usize)> {
        match self.layers.first().map(|l| l.kind) {
            Some(LayerKind::Input {
                height,
                width,
                channels,
            }) => Ok((height, width, channels)),
            _ => Err(Error::Validation("first layer must be input".into())),
        }
    }

    /// Output shape of every layer, in order.
    pub fn infer_shapes(&self) -> Result<Vec<(String, LayerShape)>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut cur: Option<LayerShape> = None;
        for layer in &self.layers {
            let bad = |msg: String| Error::Shape(format!("layer `{}`: {msg}", layer.name));
            let next = match (layer.kind, cur) {
                (
                    LayerKind::Input {
                        height,
                        width,
                        channels,
                    },
                    None,
                ) => {
                    if height == 0 || width == 0 || channels == 0 {
                        return Err(bad("input dimensions must be positive".into()));
                    }
                    LayerShape::Spatial {
                        channels,
                        height,
                        width,
                    }
                }
                (LayerKind::Input { .. }, Some(_)) => {
                    return Err(bad("input layer must come first".into()))
                }
                (_, None) => return Err(bad("first layer must be input".into())),
                (
                    LayerKind::Conv {
                        out_channels,
                        kernel_size,
                        stride,
                        padding,
                    },
                    Some(LayerShape::Spatial { height, width, .. }),
                ) => {
                    if out_channels == 0 {
                        return Err(bad("out_channels must be ≥ 1".into()));
                    }
                    let h = window_out(height, kernel_size, stride, padding);
                    let w = window_out(width, kernel_size, stride, padding);
                    match (h, w) {
                        (Some(h), Some(w)) => LayerShape::Spatial {
                            channels: out_channels,
                            height: h,
                            width: w,
                        },
                        _ => {
                            return Err(bad(format!(
                                "kernel {kernel_size} stride {stride} padding {padding} \
                                 does not fit {height}×{width} input"
                            )))
                        }
                    }
                }
                (
                    LayerKind::Maxpool { window, stride },
                    Some(LayerShape::Spatial {
                        channels,
                        height,
                        width,
                    }),
                ) => match (
                    window_out(height, window, stride, 0),
                    window_out(width, window, stride, 0),
                ) {
                    (Some(h), Some(w)) => LayerShape::Spatial {
                        channels,
                        height: h,
                        width: w,
                    },
                    _ => {
                        return Err(bad(format!(
                            "pool window {window} stride {stride} does not fit {height}×{width}"
                        )))
                    }
                },
                (
                    LayerKind::Conv { .. } | LayerKind::Maxpool { .. },
                    Some(LayerShape::Flat { .. }),
                ) => return Err(bad("needs a spatial input".into())),
                (LayerKind::Relu, Some(s)) => s,
                (LayerKind::Flatten, Some(s)) => LayerShape::Flat {
                    features: s.numel(),
                },
                (LayerKind::Dense { out_features }, Some(LayerShape::Flat { .. })) => {
                    if out_features == 0 {
                        return Err(bad("out_features must be ≥ 1".into()));
                    }
                    LayerShape::Flat {
                        features: out_features,
                    }
                }
                (LayerKind::Dense { .. }, Some(LayerShape::Spatial { .. })) => {
                    return Err(bad("dense layer follows a non-flattened shape".into()))
                }
                (LayerKind::Softmax, Some(s @ LayerShape::Flat { .. })) => s,
                (LayerKind::Softmax, Some(LayerShape::Spatial { .. })) => {
                    return Err(bad("softmax needs a flat input".into()))
                }
            };
            out.push((layer.name.clone(), next));
            cur = Some(next);
        }
        Ok(out)
    }

    /// Every violated invariant, each tagged with the offending layer.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut issues = Vec::new();
        let mut seen = HashSet::new();
        for layer in &self.layers {
            if !seen.insert(layer.name.as_str()) {
                issues.push(format!("layer `{}`: duplicate name", layer.name));
            }
            match layer.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel_size,
                    stride,
                    ..
                } => {
                    if kernel_size == 0 || stride == 0 || out_channels == 0 {
                        issues.push(format!(
                            "layer `{}`: kernel_size, stride and out_channels must be ≥ 1",
                            layer.name
                        ));
                    }
                }
                LayerKind::Maxpool { window, stride } => {
                    if window == 0 || stride == 0 {
                        issues.push(format!(
                            "layer `{}`: window and stride must be ≥ 1",
                            layer.name
                        ));
                    }
                }
                LayerKind::Dense { out_features: 0 } => {
                    issues.push(format!("layer `{}`: out_features must be ≥ 1", layer.name));
                }
                _ => {}
            }
        }
        let inputs = self
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Input { .. }))
            .count();
        if inputs != 1 {
            issues.push(format!("expected exactly one input layer, found {inputs}"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.kind == LayerKind::Softmax && i + 1 != self.layers.len() {
                issues.push(format!(
                    "layer `{}`: softmax must be the last layer",
                    layer.name
                ));
            }
        }
        if self.layers.last().map(|l| l.kind) != Some(LayerKind::Softmax) {
            issues.push("last layer must be softmax".into());
        }
        if let Err(e) = self.infer_shapes() {
            issues.push(e.to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    /// Like [`validate`](Self::validate) but folded into a single error.
    pub fn ensure_valid(&self) -> Result<()> {
        self.validate()
            .map_err(|issues| Error::Validation(issues.join("; ")))
    }

    /// Learnable tensors in layer order, weight before bias.
    ///
    /// Conv weights are `(out_channels, in_channels, k, k)`, dense weights
    /// are `(out_features, in_features)`.
    pub fn param_specs(&self) -> Result<Vec<ParamSpec>> {
        let shapes = self.infer_shapes()?;
        let mut specs = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = match i.checked_sub(1) {
                Some(j) => shapes[j].1,
                None => continue,
            };
            let (wshape, fan_in, out) = match (layer.kind, prev) {
                (
                    LayerKind::Conv {
                        out_channels,
                        kernel_size: k,
                        ..
                    },
                    LayerShape::Spatial { channels, .. },
                ) => (
                    vec![out_channels, channels, k, k],
                    channels * k * k,
                    out_channels,
                ),
                (LayerKind::Dense { out_features }, LayerShape::Flat { features }) => {
                    (vec![out_features, features], features, out_features)
                }
                _ => continue,
            };
            specs.push(ParamSpec {
                name: format!("{}.weight", layer.name),
                layer: layer.name.clone(),
                shape: wshape,
                fan_in,
                is_bias: false,
            });
            specs.push(ParamSpec {
                name: format!("{}.bias", layer.name),
                layer: layer.name.clone(),
                shape: vec![out],
                fan_in,
                is_bias: true,
            });
        }
        Ok(specs)
    }

    /// Σ conv(oc·ic·k·k + oc) + Σ dense(out·in + out).
    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .param_specs()?
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum())
    }
}
