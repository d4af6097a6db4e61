//! An architecture compiled into executable stages, with `f64` forward and
//! backward passes over flat parameter buffers.

use crate::arch::{LayerKind, LayerShape, ModelArchitecture, ParamSpec};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, PoolGeom};

/// Parameter buffers aligned with [`Network::param_specs`].
pub type Params = Vec<Vec<f64>>;

#[derive(Debug, Clone)]
pub(crate) enum Stage {
    Input,
    Conv {
        geom: ConvGeom,
        weight: usize,
        bias: usize,
    },
    Relu,
    MaxPool(PoolGeom),
    Flatten,
    Dense {
        weight: usize,
        bias: usize,
    },
    Softmax,
}

#[derive(Debug, Clone)]
pub struct Network {
    arch: ModelArchitecture,
    stages: Vec<Stage>,
    shapes: Vec<LayerShape>,
    specs: Vec<ParamSpec>,
}

/// Activations of every stage for one input.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `outputs[i]` is the output of layer `i`; `outputs[0]` is the input.
    pub outputs: Vec<Vec<f64>>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl Activations {
    pub fn probabilities(&self) -> &[f64] {
        self.outputs.last().expect("at least one layer")
    }
}

/// Mean cross-entropy over a batch and its gradient.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub correct: usize,
    pub grads: Params,
}

impl Network {
    pub fn new(arch: &ModelArchitecture) -> Result<Self> {
        arch.ensure_valid()?;
        let shapes: Vec<LayerShape> = arch.infer_shapes()?.into_iter().map(|(_, s)| s).collect();
        let specs = arch.param_specs()?;
        let index_of = |name: &str| {
            specs
                .iter()
                .position(|s| s.name == name)
                .expect("param spec")
        };
        let mut stages = Vec::with_capacity(arch.layers.len());
        for (i, layer) in arch.layers.iter().enumerate() {
            let prev = i.checked_sub(1).map(|j| shapes[j]);
            let stage = match (layer.kind, prev) {
                (LayerKind::Input { .. }, _) => Stage::Input,
                (
                    LayerKind::Conv {
                        out_channels,
                        kernel_size,
                        stride,
                        padding,
                    },
                    Some(LayerShape::Spatial {
                        channels,
                        height,
                        width,
                    }),
                ) => Stage::Conv {
                    geom: ConvGeom::new(
                        channels,
                        height,
                        width,
                        out_channels,
                        kernel_size,
                        stride,
                        padding,
                    )?,
                    weight: index_of(&format!("{}.weight", layer.name)),
                    bias: index_of(&format!("{}.bias", layer.name)),
                },
                (LayerKind::Relu, _) => Stage::Relu,
                (
                    LayerKind::Maxpool { window, stride },
                    Some(LayerShape::Spatial {
                        channels,
                        height,
                        width,
                    }),
                ) => Stage::MaxPool(PoolGeom::new(channels, height, width, window, stride)?),
                (LayerKind::Flatten, _) => Stage::Flatten,
                (LayerKind::Dense { .. }, _) => Stage::Dense {
                    weight: index_of(&format!("{}.weight", layer.name)),
                    bias: index_of(&format!("{}.bias", layer.name)),
                },
                (LayerKind::Softmax, _) => Stage::Softmax,
                _ => unreachable!("validated architecture"),
            };
            stages.push(stage);
        }
        Ok(Self {
            arch: arch.clone(),
            stages,
            shapes,
            specs,
        })
    }

    pub fn arch(&self) -> &ModelArchitecture {
        &self.arch
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn num_layers(&self) -> usize {
        self.stages.len()
    }

    /// Layer index owning parameter tensor `p`.
    pub fn layer_of_param(&self, p: usize) -> usize {
        self.stages
            .iter()
            .position(|s| match s {
                Stage::Conv { weight, bias, .. } | Stage::Dense { weight, bias } => {
                    *weight == p || *bias == p
                }
                _ => false,
            })
            .expect("every parameter belongs to a layer")
    }

    /// Checkpoint tensors widened to `f64`, in parameter order.
    pub fn params_from(&self, ckpt: &Checkpoint) -> Result<Params> {
        ckpt.validate_against(&self.arch)?;
        self.specs
            .iter()
            .map(|s| Ok(ckpt.tensor(&s.name)?.to_f64()))
            .collect()
    }

    /// Input length expected by [`forward`](Self::forward) (`C×H×W`).
    pub fn input_len(&self) -> usize {
        self.shapes[0].numel()
    }

    /// Applies layer `i` to the output of layer `i - 1`.
    pub(crate) fn run_stage(
        &self,
        i: usize,
        params: &Params,
        input: &[f64],
        argmax: Option<&mut Option<Vec<usize>>>,
    ) -> Vec<f64> {
        match &self.stages[i] {
            Stage::Input | Stage::Flatten => input.to_vec(),
            Stage::Conv { geom, weight, bias } => {
                let mut out = vec![0.0; geom.output_len()];
                kernels::conv2d(geom, input, &params[*weight], &params[*bias], &mut out);
                out
            }
            Stage::Relu => kernels::relu(input),
            Stage::MaxPool(g) => {
                let (out, arg) = kernels::maxpool(g, input);
                if let Some(slot) = argmax {
                    *slot = Some(arg);
                }
                out
            }
            Stage::Dense { weight, bias } => {
                kernels::dense(input, &params[*weight], &params[*bias])
            }
            Stage::Softmax => kernels::softmax(input),
        }
    }

    pub fn forward(&self, params: &Params, input: &[f64]) -> Result<Activations> {
        if input.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "network input needs {} values, got {}",
                self.input_len(),
                input.len()
            )));
        }
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.stages.len());
        let mut argmax = vec![None; self.stages.len()];
        for i in 0..self.stages.len() {
            let src = if i == 0 { input } else { &outputs[i - 1] };
            let out = self.run_stage(i, params, src, Some(&mut argmax[i]));
            outputs.push(out);
        }
        Ok(Activations { outputs, argmax })
    }

    /// Runs layers `start..` given the output of layer `start - 1` and
    /// returns the final probabilities.
    pub fn forward_from(&self, params: &Params, start: usize, prev_output: &[f64]) -> Vec<f64> {
        let mut cur = prev_output.to_vec();
        for i in start..self.stages.len() {
            cur = self.run_stage(i, params, &cur, None);
        }
        cur
    }

    /// Mean cross-entropy of a batch of `(C×H×W input, label)` pairs.
    pub fn loss(&self, params: &Params, batch: &[(Vec<f64>, usize)]) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in batch {
            let acts = self.forward(params, x)?;
            total += cross_entropy(acts.probabilities(), *y)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Exact gradients of the mean cross-entropy w.r.t. every parameter.
    pub fn loss_and_grads(
        &self,
        params: &Params,
        batch: &[(Vec<f64>, usize)],
    ) -> Result<BatchGradients> {
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let mut grads: Params = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut correct = 0;
        for (x, y) in batch {
            let acts = self.forward(params, x)?;
            let probs = acts.probabilities();
            loss += cross_entropy(probs, *y)?;
            if argmax(probs) == *y {
                correct += 1;
            }
            self.backward_one(params, &acts, *y, scale, &mut grads);
        }
        Ok(BatchGradients {
            loss: loss * scale,
            correct,
            grads,
        })
    }

    fn backward_one(
        &self,
        params: &Params,
        acts: &Activations,
        label: usize,
        scale: f64,
        grads: &mut Params,
    ) {
        let last = self.stages.len() - 1;
        // softmax + cross-entropy: d/dlogits = p − onehot
        let mut g: Vec<f64> = acts.outputs[last]
            .iter()
            .enumerate()
            .map(|(k, &p)| scale * (p - if k == label { 1.0 } else { 0.0 }))
            .collect();
        for i in (1..last).rev() {
            let input = &acts.outputs[i - 1];
            g = match &self.stages[i] {
                Stage::Input | Stage::Softmax => unreachable!("validated architecture"),
                Stage::Flatten => g,
                Stage::Relu => kernels::relu_backward(input, &g),
                Stage::MaxPool(geom) => {
                    let arg = acts.argmax[i].as_ref().expect("argmax recorded");
                    kernels::maxpool_backward(geom, arg, &g)
                }
                Stage::Dense { weight, bias } => {
                    let (gw, gb) = two_mut(grads, *weight, *bias);
                    kernels::dense_backward(input, &params[*weight], &g, gw, gb)
                }
                Stage::Conv { geom, weight, bias } => {
                    let (gw, gb) = two_mut(grads, *weight, *bias);
                    if i == 1 {
                        kernels::conv2d_backward(geom, input, &params[*weight], &g, gw, gb, None);
                        Vec::new()
                    } else {
                        let mut gi = vec![0.0; geom.input_len()];
                        kernels::conv2d_backward(
                            geom,
                            input,
                            &params[*weight],
                            &g,
                            gw,
                            gb,
                            Some(&mut gi),
                        );
                        gi
                    }
                }
            };
        }
    }
}

fn two_mut(v: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b, "weight precedes bias");
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs
        .get(label)
        .ok_or_else(|| Error::OutOfRange(format!("label {label} ≥ {} classes", probs.len())))?;
    Ok(-p.max(f64::MIN_POSITIVE).ln())
}

/// Index of the largest value, first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
