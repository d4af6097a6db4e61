//! Region proposals ranked by how strongly they activate one channel.
//!
//! Proposals come from multi-scale sliding windows: square sides `m/2`,
//! `m/3`, `m/4` of the shorter image side `m` (sides under 8 px dropped),
//! stride half the side, scanned scale by scale in row-major order.

use serde::{Deserialize, Serialize};

use crate::arch::{LayerKind, ModelArchitecture};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::{crop, resize_bilinear, InputImage};
use crate::inference::forward_until;
use crate::network::Network;

pub const MIN_PATCH_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchProposal {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PatchProposal {
    pub fn iou(&self, other: &PatchProposal) -> f64 {
        let ix = (self.x + self.w)
            .min(other.x + other.w)
            .saturating_sub(self.x.max(other.x));
        let iy = (self.y + self.h)
            .min(other.y + other.h)
            .saturating_sub(self.y.max(other.y));
        let inter = (ix * iy) as f64;
        let union = (self.w * self.h + other.w * other.h) as f64 - inter;
        inter / union
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPatch {
    pub proposal: PatchProposal,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    pub snapshot: String,
}

/// How a channel's activation map is reduced to one score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

/// Window sides used for an image of shorter side `m`.
pub fn window_sides(m: usize) -> Vec<usize> {
    let mut sides: Vec<usize> = [m / 2, m / 3, m / 4]
        .into_iter()
        .filter(|&s| s >= MIN_PATCH_SIDE)
        .collect();
    sides.dedup();
    sides
}

pub fn propose_regions(width: usize, height: usize) -> Result<Vec<PatchProposal>> {
    if width < 16 || height < 16 {
        return Err(Error::ImageTooSmall { width, height });
    }
    let mut out = Vec::new();
    for s in window_sides(width.min(height)) {
        let stride = s / 2;
        for y in (0..=height - s).step_by(stride) {
            for x in (0..=width - s).step_by(stride) {
                out.push(PatchProposal { x, y, w: s, h: s });
            }
        }
    }
    Ok(out)
}

/// Scores every proposal of `image` on `channel` of conv layer `layer`.
pub fn score_proposals(
    arch: &ModelArchitecture,
    ckpt: &Checkpoint,
    image: &InputImage,
    layer: &str,
    channel: usize,
    aggregation: Aggregation,
) -> Result<(Vec<PatchProposal>, Vec<f64>)> {
    let (layer_idx, spec) = arch
        .layer(layer)
        .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
    let out_channels = match spec.kind {
        LayerKind::Conv { out_channels, .. } => out_channels,
        _ => return Err(Error::Validation(format!("`{layer}` is not a conv layer"))),
    };
    if channel >= out_channels {
        return Err(Error::OutOfRange(format!(
            "channel {channel} ≥ {out_channels} channels of `{layer}`"
        )));
    }
    let net = Network::new(arch)?;
    let params = net.params_from(ckpt)?;
    let (in_h, in_w, _) = arch.input_dims()?;
    let proposals = propose_regions(image.width(), image.height())?;
    let mut scores = Vec::with_capacity(proposals.len());
    for p in &proposals {
        let patch = resize_bilinear(&crop(&image.pixels, p.x, p.y, p.w, p.h)?, in_h, in_w)?;
        let acts = forward_until(&net, &params, &patch, layer_idx)?;
        let blob = &acts[layer_idx];
        let [_, h, w] = blob.dims3()?;
        let map = &blob.data()[channel * h * w..(channel + 1) * h * w];
        scores.push(aggregate(map, aggregation));
    }
    Ok((proposals, scores))
}

fn aggregate(map: &[f32], aggregation: Aggregation) -> f64 {
    match aggregation {
        Aggregation::Max => map
            .iter()
            .map(|&v| f64::from(v))
            .fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => map.iter().map(|&v| f64::from(v)).sum::<f64>() / map.len() as f64,
    }
}

/// Orders scored proposals by score descending, then proposal index, and
/// keeps the first `k`.
pub fn rank_scored(
    proposals: &[PatchProposal],
    scores: &[f64],
    k: usize,
    snapshot: &str,
) -> Vec<RankedPatch> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    order
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(r, i)| RankedPatch {
            proposal: proposals[i],
            score: scores[i],
            rank: r + 1,
            snapshot: snapshot.to_string(),
        })
        .collect()
}

/// Top-`k` proposals of `image` by spatial-max activation of `channel`.
#[allow(clippy::too_many_arguments)]
pub fn rank_patches(
    arch: &ModelArchitecture,
    ckpt: &Checkpoint,
    image: &InputImage,
    layer: &str,
    channel: usize,
    k: usize,
    snapshot: &str,
) -> Result<Vec<RankedPatch>> {
    if k == 0 {
        return Err(Error::Validation("k must be ≥ 1".into()));
    }
    let (proposals, scores) = score_proposals(arch, ckpt, image, layer, channel, Aggregation::Max)?;
    Ok(rank_scored(&proposals, &scores, k, snapshot))
}
