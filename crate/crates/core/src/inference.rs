//! Forward pass over a checkpoint, producing per-layer blob activations and
//! class probabilities.
//!
//! All arithmetic runs in `f64`; every layer output is rounded to `f32` before
//! it is stored and fed to the next layer.

use indexmap::IndexMap;

use crate::arch::ModelArchitecture;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::InputImage;
use crate::kernels::{self, ConvGeom, PoolGeom};
use crate::network::{self, Network};
use crate::tensor::Tensor;

/// Blob activations of every layer for one input image.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Layer name → output tensor (`C×H×W` or `[N]`), in layer order.
    pub activations: IndexMap<String, Tensor>,
    pub probabilities: Tensor,
}

impl ForwardTrace {
    pub fn activation(&self, layer: &str) -> Result<&Tensor> {
        self.activations
            .get(layer)
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
    }

    pub fn predicted(&self) -> usize {
        network::argmax(&self.probabilities.to_f64())
    }
}

/// Convolution of a `C×H×W` tensor with `(oc, ic, k, k)` weights.
pub fn conv_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [ic, h, w] = input.dims3()?;
    let (oc, k) = match *weight.shape() {
        [oc, wic, k, k2] if wic == ic && k == k2 => (oc, k),
        _ => {
            return Err(Error::Shape(format!(
                "weight {:?} does not match {ic}-channel input",
                weight.shape()
            )))
        }
    };
    if bias.shape() != [oc] {
        return Err(Error::Shape(format!(
            "bias {:?} does not match {oc} output channels",
            bias.shape()
        )));
    }
    let geom = ConvGeom::new(ic, h, w, oc, k, stride, padding)?;
    let mut out = vec![0.0; geom.output_len()];
    kernels::conv2d(
        &geom,
        &input.to_f64(),
        &weight.to_f64(),
        &bias.to_f64(),
        &mut out,
    );
    Tensor::from_f64(vec![oc, geom.out_h, geom.out_w], &out)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Windowed max over a `C×H×W` tensor.
pub fn maxpool_forward(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let [c, h, w] = input.dims3()?;
    let geom = PoolGeom::new(c, h, w, window, stride)?;
    let (out, _) = kernels::maxpool(&geom, &input.to_f64());
    Tensor::from_f64(vec![c, geom.out_h, geom.out_w], &out)
}

/// `W·x + b` for `x` of shape `[n]`, `W` of shape `(out, n)`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = input.len();
    match *weight.shape() {
        [out, wn] if wn == n && bias.shape() == [out] => {
            let y = kernels::dense(&input.to_f64(), &weight.to_f64(), &bias.to_f64());
            Tensor::from_f64(vec![out], &y)
        }
        _ => Err(Error::Shape(format!(
            "dense weight {:?} / bias {:?} do not fit input of {n}",
            weight.shape(),
            bias.shape()
        ))),
    }
}

pub fn softmax(logits: &Tensor) -> Tensor {
    let p = kernels::softmax(&logits.to_f64());
    Tensor::from_f64(logits.shape().to_vec(), &p).expect("softmax is finite")
}

/// Full forward pass of an image already sized to the input layer.
pub fn forward(
    arch: &ModelArchitecture,
    ckpt: &Checkpoint,
    image: &InputImage,
) -> Result<ForwardTrace> {
    forward_pixels(arch, ckpt, &image.pixels)
}

/// Forward pass of an `H×W×C` pixel tensor.
pub fn forward_pixels(
    arch: &ModelArchitecture,
    ckpt: &Checkpoint,
    pixels: &Tensor,
) -> Result<ForwardTrace> {
    let net = Network::new(arch)?;
    let params = net.params_from(ckpt)?;
    let mut acts = forward_until(&net, &params, pixels, net.num_layers() - 1)?;
    let probabilities = acts.last().expect("layers").clone();
    let activations = arch
        .layers
        .iter()
        .map(|l| l.name.clone())
        .zip(acts.drain(..))
        .collect();
    Ok(ForwardTrace {
        activations,
        probabilities,
    })
}

/// Outputs of layers `0..=last`, each rounded to `f32`.
pub(crate) fn forward_until(
    net: &Network,
    params: &network::Params,
    pixels: &Tensor,
    last: usize,
) -> Result<Vec<Tensor>> {
    let (h, w, c) = net.arch().input_dims()?;
    if pixels.shape() != [h, w, c] {
        return Err(Error::Shape(format!(
            "image is {:?}, network input is {h}×{w}×{c}",
            pixels.shape()
        )));
    }
    let mut out = Vec::with_capacity(last + 1);
    let mut cur = pixels.hwc_to_chw()?;
    out.push(cur.clone());
    for i in 1..=last {
        let y = net.run_stage(i, params, &cur.to_f64(), None);
        cur = Tensor::from_f64(net.shapes()[i].dims(), &y)?;
        out.push(cur.clone());
    }
    Ok(out)
}
