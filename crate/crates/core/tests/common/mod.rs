//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use cnndiff_core::network::{cross_entropy, Network, Params};

/// Naive six-loop cross-correlation over `C×H×W` input, all in f64. The
/// input is zero-padded into a scratch buffer first.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    input: &[f64],
    ic: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    oc: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0.0; ic * ph * pw];
    for c in 0..ic {
        for y in 0..h {
            for x in 0..w {
                padded[(c * ph + y + pad) * pw + x + pad] = input[(c * h + y) * w + x];
            }
        }
    }
    let oh = (ph - k) / stride + 1;
    let ow = (pw - k) / stride + 1;
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[o];
                for c in 0..ic {
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += weight[((o * ic + c) * k + ky) * k + kx]
                                * padded[(c * ph + y * stride + ky) * pw + x * stride + kx];
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    (out, oh, ow)
}

/// Central finite-difference gradient of the mean cross-entropy w.r.t. every
/// parameter. Only the layers downstream of each parameter are re-run.
pub fn finite_difference_grads(
    net: &Network,
    params: &Params,
    batch: &[(Vec<f64>, usize)],
    eps: f64,
) -> Params {
    let acts: Vec<_> = batch
        .iter()
        .map(|(x, _)| net.forward(params, x).unwrap())
        .collect();
    let mut work = params.clone();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let layer = net.layer_of_param(p);
        let mut g = vec![0.0; params[p].len()];
        for j in 0..params[p].len() {
            let orig = work[p][j];
            let mut loss_at = |v: f64| {
                work[p][j] = v;
                let mut total = 0.0;
                for (a, (_, y)) in acts.iter().zip(batch) {
                    let probs = net.forward_from(&work, layer, &a.outputs[layer - 1]);
                    total += cross_entropy(&probs, *y).unwrap();
                }
                total / batch.len() as f64
            };
            let plus = loss_at(orig + eps);
            let minus = loss_at(orig - eps);
            work[p][j] = orig;
            g[j] = (plus - minus) / (2.0 * eps);
        }
        grads.push(g);
    }
    grads
}

use cnndiff_core::{LayerKind, LayerShape, ModelArchitecture};

/// Activation pattern of one forward pass: ReLU on/off masks and max-pool
/// winners, per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub relu: Vec<Option<Vec<bool>>>,
    pub pool: Vec<Option<Vec<usize>>>,
}

/// Loop-level reference forward pass, written independently of the library.
/// Parameters are ordered weight, bias per conv/dense layer.
pub struct OracleNet {
    arch: ModelArchitecture,
    shapes: Vec<LayerShape>,
    param_of_layer: Vec<Option<usize>>,
}

impl OracleNet {
    pub fn new(arch: &ModelArchitecture) -> Self {
        let shapes = arch
            .infer_shapes()
            .unwrap()
            .into_iter()
            .map(|(_, s)| s)
            .collect();
        let mut next = 0;
        let param_of_layer = arch
            .layers
            .iter()
            .map(|l| {
                if matches!(l.kind, LayerKind::Conv { .. } | LayerKind::Dense { .. }) {
                    next += 2;
                    Some(next - 2)
                } else {
                    None
                }
            })
            .collect();
        Self {
            arch: arch.clone(),
            shapes,
            param_of_layer,
        }
    }

    pub fn layer_of_param(&self, p: usize) -> usize {
        self.param_of_layer
            .iter()
            .position(|&q| q == Some(p - p % 2))
            .unwrap()
    }

    /// Runs layers `start..`, returning every layer output from `start - 1`
    /// on (index 0 = `prev`). When `frozen` is given, ReLU masks and pool
    /// winners are taken from it instead of recomputed.
    pub fn run(
        &self,
        params: &[Vec<f64>],
        start: usize,
        prev: &[f64],
        frozen: Option<&Pattern>,
        record: &mut Pattern,
    ) -> Vec<Vec<f64>> {
        let mut outs = vec![prev.to_vec()];
        for i in start..self.arch.layers.len() {
            let x = outs.last().unwrap();
            let in_shape = self.shapes[i - 1];
            let y = match self.arch.layers[i].kind {
                LayerKind::Input { .. } => unreachable!(),
                LayerKind::Conv {
                    out_channels,
                    kernel_size,
                    stride,
                    padding,
                } => {
                    let LayerShape::Spatial {
                        channels,
                        height,
                        width,
                    } = in_shape
                    else {
                        unreachable!()
                    };
                    let p = self.param_of_layer[i].unwrap();
                    naive_conv(
                        x,
                        channels,
                        height,
                        width,
                        &params[p],
                        &params[p + 1],
                        out_channels,
                        kernel_size,
                        stride,
                        padding,
                    )
                    .0
                }
                LayerKind::Relu => {
                    let mask: Vec<bool> = match frozen.and_then(|f| f.relu[i].clone()) {
                        Some(m) => m,
                        None => x.iter().map(|&v| v > 0.0).collect(),
                    };
                    let y = x
                        .iter()
                        .zip(&mask)
                        .map(|(&v, &m)| if m { v } else { 0.0 })
                        .collect();
                    record.relu[i] = Some(mask);
                    y
                }
                LayerKind::Maxpool { window, stride } => {
                    let LayerShape::Spatial {
                        channels,
                        height,
                        width,
                    } = in_shape
                    else {
                        unreachable!()
                    };
                    let oh = (height - window) / stride + 1;
                    let ow = (width - window) / stride + 1;
                    let mut winners = Vec::with_capacity(channels * oh * ow);
                    for c in 0..channels {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut best = (f64::NEG_INFINITY, 0);
                                for wy in 0..window {
                                    for wx in 0..window {
                                        let idx = (c * height + y * stride + wy) * width
                                            + xx * stride
                                            + wx;
                                        if x[idx] > best.0 {
                                            best = (x[idx], idx);
                                        }
                                    }
                                }
                                winners.push(best.1);
                            }
                        }
                    }
                    if let Some(f) = frozen.and_then(|f| f.pool[i].clone()) {
                        winners = f;
                    }
                    let y = winners.iter().map(|&j| x[j]).collect();
                    record.pool[i] = Some(winners);
                    y
                }
                LayerKind::Flatten => x.clone(),
                LayerKind::Dense { out_features } => {
                    let p = self.param_of_layer[i].unwrap();
                    let n = x.len();
                    (0..out_features)
                        .map(|o| {
                            let mut acc = params[p + 1][o];
                            for j in 0..n {
                                acc += params[p][o * n + j] * x[j];
                            }
                            acc
                        })
                        .collect()
                }
                LayerKind::Softmax => {
                    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter().map(|v| v / s).collect()
                }
            };
            outs.push(y);
        }
        outs
    }

    pub fn empty_pattern(&self) -> Pattern {
        let n = self.arch.layers.len();
        Pattern {
            relu: vec![None; n],
            pool: vec![None; n],
        }
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Parameters whose ±ε stencil changed a ReLU mask or pool winner.
    pub kink_crossings: usize,
    /// Worst error counted against the tolerance.
    pub worst_rel: f64,
    /// Worst error of the plain ε quotient, before any extrapolation.
    pub worst_rel_plain: f64,
    pub worst_rel_smooth_only: f64,
    /// Entries whose plain quotient missed the tolerance by no more than its
    /// own O(ε²) truncation error and whose extrapolated value passed.
    pub truncation_explained: usize,
    pub worst_rel_extrapolated: f64,
    pub failures: Vec<String>,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares `analytic` against central differences of the mean
/// cross-entropy computed with [`OracleNet`].
///
/// Where the ±ε stencil crosses a ReLU/max-pool kink the plain difference
/// quotient straddles two linear pieces and does not estimate the
/// derivative; there the difference is taken with the activation pattern
/// held at the unperturbed point (the same function on the piece containing
/// the point).
pub fn grad_check(
    arch: &ModelArchitecture,
    params: &[Vec<f64>],
    batch: &[(Vec<f64>, usize)],
    analytic: &[Vec<f64>],
    eps: f64,
    tol: f64,
    floor: f64,
) -> GradCheck {
    let net = OracleNet::new(arch);
    let base: Vec<(Vec<Vec<f64>>, Pattern)> = batch
        .iter()
        .map(|(x, _)| {
            let mut pat = net.empty_pattern();
            let outs = net.run(params, 1, x, None, &mut pat);
            (outs, pat)
        })
        .collect();
    let mut work = params.to_vec();
    let mut report = GradCheck::default();
    for p in 0..params.len() {
        let layer = net.layer_of_param(p);
        for j in 0..params[p].len() {
            let orig = work[p][j];
            let eval = |v: f64, frozen: bool, work: &mut Vec<Vec<f64>>| {
                work[p][j] = v;
                let mut loss = 0.0;
                let mut crossed = false;
                for ((outs, pat), (_, y)) in base.iter().zip(batch) {
                    let mut rec = net.empty_pattern();
                    let res = net.run(
                        work,
                        layer,
                        &outs[layer - 1],
                        frozen.then_some(pat),
                        &mut rec,
                    );
                    for i in layer..pat.relu.len() {
                        if rec.relu[i] != pat.relu[i] || rec.pool[i] != pat.pool[i] {
                            crossed = true;
                        }
                    }
                    loss -= res.last().unwrap()[*y].ln();
                }
                work[p][j] = orig;
                (loss / batch.len() as f64, crossed)
            };
            let (lp, cp) = eval(orig + eps, false, &mut work);
            let (lm, cm) = eval(orig - eps, false, &mut work);
            let frozen = cp || cm;
            let a = analytic[p][j];
            let quotient = |h: f64, work: &mut Vec<Vec<f64>>| {
                (eval(orig + h, frozen, work).0 - eval(orig - h, frozen, work).0) / (2.0 * h)
            };
            let numeric = if frozen {
                report.kink_crossings += 1;
                quotient(eps, &mut work)
            } else {
                let n = (lp - lm) / (2.0 * eps);
                report.worst_rel_smooth_only =
                    report.worst_rel_smooth_only.max(rel_error(a, n, floor));
                n
            };
            let mut r = rel_error(a, numeric, floor);
            if r > tol {
                // One Richardson step cancels the O(ε²) term. Accept only when
                // the extrapolated value agrees and the miss is no larger
                // than the truncation error it removed.
                let half = quotient(eps / 2.0, &mut work);
                let extrapolated = (4.0 * half - numeric) / 3.0;
                let truncation = (numeric - extrapolated).abs();
                let re = rel_error(a, extrapolated, floor);
                if re <= tol && (a - numeric).abs() <= 2.0 * truncation {
                    report.truncation_explained += 1;
                    report.worst_rel_extrapolated = report.worst_rel_extrapolated.max(re);
                    r = re;
                }
            }
            report.worst_rel_plain = report.worst_rel_plain.max(rel_error(a, numeric, floor));
            report.worst_rel = report.worst_rel.max(r);
            if r > tol && report.failures.len() < 10 {
                report.failures.push(format!(
                    "param {p}[{j}]: analytic {a:e} numeric {numeric:e} rel {r:e}"
                ));
            }
            report.checked += 1;
        }
    }
    report
}

use cnndiff_core::{init_weights, Checkpoint, LayerSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// input 8×8×2 → conv(3,k3,p1) → relu → pool 2 → conv(4,k2) → relu →
/// flatten → dense(3) → softmax.
pub fn small_arch() -> ModelArchitecture {
    ModelArchitecture::new(vec![
        LayerSpec::new(
            "input",
            LayerKind::Input {
                height: 8,
                width: 8,
                channels: 2,
            },
        ),
        LayerSpec::new(
            "conv1",
            LayerKind::Conv {
                out_channels: 3,
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
                out_channels: 4,
                kernel_size: 2,
                stride: 1,
                padding: 0,
            },
        ),
        LayerSpec::new("relu2", LayerKind::Relu),
        LayerSpec::new("flatten", LayerKind::Flatten),
        LayerSpec::new("fc", LayerKind::Dense { out_features: 3 }),
        LayerSpec::new("softmax", LayerKind::Softmax),
    ])
}

/// Two comparable checkpoints: B is A with a random mix of unchanged,
/// zeroed, sign-flipped and perturbed entries.
pub fn random_pair(arch: &ModelArchitecture, seed: u64) -> (Checkpoint, Checkpoint) {
    let a = init_weights(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let mut b = a.clone();
    b.epoch = 7;
    for t in b.tensors.values_mut() {
        let data: Vec<f32> = t
            .data()
            .iter()
            .map(|&v| match rng.random_range(0..5) {
                0 => v,
                1 => 0.0,
                2 => -v,
                _ => v + rng.random_range(-0.5f32..0.5),
            })
            .collect();
        *t = Tensor::new(t.shape().to_vec(), data).unwrap();
    }
    (a, b)
}

pub fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Independent crop + half-pixel bilinear resize of an `H×W×3` image,
/// returned channel-first and rounded to `f32` like any model input.
pub fn oracle_patch(
    img: &Tensor,
    (x, y, w, h): (usize, usize, usize, usize),
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let src_w = img.shape()[1];
    let px = |r: usize, c: usize, ch: usize| img.data()[((y + r) * src_w + x + c) * 3 + ch] as f64;
    let mut out = vec![0.0; 3 * out_h * out_w];
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5)
            .max(0.0)
            .min((h - 1) as f64);
        let (y0, fy) = (sy.floor() as usize, sy - sy.floor());
        let y1 = (y0 + 1).min(h - 1);
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5)
                .max(0.0)
                .min((w - 1) as f64);
            let (x0, fx) = (sx.floor() as usize, sx - sx.floor());
            let x1 = (x0 + 1).min(w - 1);
            for ch in 0..3 {
                let top = px(y0, x0, ch) * (1.0 - fx) + px(y0, x1, ch) * fx;
                let bot = px(y1, x0, ch) * (1.0 - fx) + px(y1, x1, ch) * fx;
                let v = if (h, w) == (out_h, out_w) {
                    px(oy, ox, ch)
                } else {
                    top * (1.0 - fy) + bot * fy
                };
                out[(ch * out_h + oy) * out_w + ox] = v as f32 as f64;
            }
        }
    }
    out
}
