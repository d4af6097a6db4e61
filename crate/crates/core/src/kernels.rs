//! `f64` layer kernels over flat buffers, forward and backward.
//!
//! Spatial buffers are channel-first (`C×H×W`), conv weights are
//! `(out_channels, in_channels, k, k)`, dense weights `(out, in)`.

use crate::error::{Error, Result};

/// Geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let fits = |n: usize| k >= 1 && stride >= 1 && n + 2 * pad >= k;
        if in_c == 0 || out_c == 0 || !fits(in_h) || !fits(in_w) {
            return Err(Error::Shape(format!(
                "conv k={k} s={stride} p={pad} does not fit {in_c}×{in_h}×{in_w}"
            )));
        }
        Ok(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            k,
            stride,
            pad,
            out_h: (in_h + 2 * pad - k) / stride + 1,
            out_w: (in_w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn input_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    /// Output indices `o` along one axis whose source `o·s + tap − pad`
    /// lands inside `[0, size)`.
    fn valid_range(&self, tap: usize, size: usize, out: usize) -> std::ops::Range<usize> {
        let s = self.stride;
        let lo = if tap >= self.pad {
            0
        } else {
            (self.pad - tap).div_ceil(s).min(out)
        };
        // o·s + tap − pad ≤ size − 1
        let hi = if size + self.pad > tap {
            ((size - 1 + self.pad - tap) / s + 1).min(out)
        } else {
            0
        };
        lo..hi.max(lo)
    }
}

/// Cross-correlation with zero padding. `out` has `geom.output_len()` slots.
pub fn conv2d(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    debug_assert_eq!(input.len(), g.input_len());
    debug_assert_eq!(weight.len(), g.weight_len());
    debug_assert_eq!(out.len(), g.output_len());
    let plane = g.out_h * g.out_w;
    for oc in 0..g.out_c {
        let dst = &mut out[oc * plane..(oc + 1) * plane];
        dst.fill(bias[oc]);
        for ic in 0..g.in_c {
            let src = &input[ic * g.in_h * g.in_w..(ic + 1) * g.in_h * g.in_w];
            for ky in 0..g.k {
                let oys = g.valid_range(ky, g.in_h, g.out_h);
                for kx in 0..g.k {
                    let w = weight[((oc * g.in_c + ic) * g.k + ky) * g.k + kx];
                    let oxs = g.valid_range(kx, g.in_w, g.out_w);
                    if oxs.is_empty() {
                        continue;
                    }
                    for oy in oys.clone() {
                        let iy = oy * g.stride + ky - g.pad;
                        let row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                        let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            let x0 = oxs.start + kx - g.pad;
                            let n = oxs.len();
                            for (d, &v) in drow[oxs.clone()].iter_mut().zip(&row[x0..x0 + n]) {
                                *d += w * v;
                            }
                        } else {
                            for ox in oxs.clone() {
                                drow[ox] += w * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a convolution. `grad_input` is skipped when `None`;
/// `grad_weight`/`grad_bias` are accumulated into, not overwritten.
pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    mut grad_input: Option<&mut [f64]>,
) {
    let plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    // per-column partial sums so the stride-1 inner loop vectorizes
    let mut lanes = vec![0.0; g.out_w];
    for oc in 0..g.out_c {
        let go = &grad_out[oc * plane..(oc + 1) * plane];
        grad_bias[oc] += go.iter().sum::<f64>();
        for ic in 0..g.in_c {
            let src = &input[ic * in_plane..(ic + 1) * in_plane];
            for ky in 0..g.k {
                let oys = g.valid_range(ky, g.in_h, g.out_h);
                for kx in 0..g.k {
                    let widx = ((oc * g.in_c + ic) * g.k + ky) * g.k + kx;
                    let w = weight[widx];
                    let oxs = g.valid_range(kx, g.in_w, g.out_w);
                    if oxs.is_empty() {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in oys.clone() {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &go[oy * g.out_w..(oy + 1) * g.out_w];
                        let row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                        let gin = grad_input.as_deref_mut().map(|gi| {
                            &mut gi[ic * in_plane + iy * g.in_w..ic * in_plane + (iy + 1) * g.in_w]
                        });
                        if g.stride == 1 {
                            let x0 = oxs.start + kx - g.pad;
                            let n = oxs.len();
                            let gslice = &grow[oxs.clone()];
                            for ((l, a), b) in
                                lanes[..n].iter_mut().zip(gslice).zip(&row[x0..x0 + n])
                            {
                                *l += a * b;
                            }
                            if let Some(gin) = gin {
                                for (d, &v) in gin[x0..x0 + n].iter_mut().zip(gslice) {
                                    *d += w * v;
                                }
                            }
                        } else {
                            for ox in oxs.clone() {
                                acc += grow[ox] * row[ox * g.stride + kx - g.pad];
                            }
                            if let Some(gin) = gin {
                                for ox in oxs.clone() {
                                    gin[ox * g.stride + kx - g.pad] += w * grow[ox];
                                }
                            }
                        }
                    }
                    grad_weight[widx] += acc + lanes.iter().sum::<f64>();
                    lanes.fill(0.0);
                }
            }
        }
    }
}

pub fn relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| v.max(0.0)).collect()
}

/// Passes gradient where the forward input was positive.
pub fn relu_backward(input: &[f64], grad_out: &[f64]) -> Vec<f64> {
    input
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub window: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new(c: usize, in_h: usize, in_w: usize, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 || in_h < window || in_w < window || c == 0 {
            return Err(Error::Shape(format!(
                "pool window {window} stride {stride} does not fit {c}×{in_h}×{in_w}"
            )));
        }
        Ok(Self {
            c,
            in_h,
            in_w,
            window,
            stride,
            out_h: (in_h - window) / stride + 1,
            out_w: (in_w - window) / stride + 1,
        })
    }
}

/// Windowed max. Returns the output and, per output, the flat input index
/// that won (first maximum in row-major window order).
pub fn maxpool(g: &PoolGeom, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.c * g.out_h * g.out_w);
    let mut arg = Vec::with_capacity(out.capacity());
    for c in 0..g.c {
        let base = c * g.in_h * g.in_w;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for wy in 0..g.window {
                    for wx in 0..g.window {
                        let i = base + (oy * g.stride + wy) * g.in_w + ox * g.stride + wx;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(g: &PoolGeom, argmax: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let mut gi = vec![0.0; g.c * g.in_h * g.in_w];
    for (&i, &go) in argmax.iter().zip(grad_out) {
        gi[i] += go;
    }
    gi
}

/// `y = W·x + b` with `W` shaped `(out, in)`.
pub fn dense(input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            b + weight[o * n..(o + 1) * n]
                .iter()
                .zip(input)
                .map(|(w, x)| w * x)
                .sum::<f64>()
        })
        .collect()
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub fn dense_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let n = input.len();
    let mut gi = vec![0.0; n];
    for (o, &g) in grad_out.iter().enumerate() {
        grad_bias[o] += g;
        let row = &weight[o * n..(o + 1) * n];
        for ((gw, &x), (gx, &w)) in grad_weight[o * n..(o + 1) * n]
            .iter_mut()
            .zip(input)
            .zip(gi.iter_mut().zip(row))
        {
            *gw += g * x;
            *gx += g * w;
        }
    }
    gi
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
