//! Parameter and blob differences between two snapshots.
//!
//! Every reduction accumulates in `f64` in row-major order, so results do not
//! depend on evaluation order and are symmetric in the two snapshots.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::inference::ForwardTrace;
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 16;
pub const DEFAULT_LEVELS: usize = 4;

/// Unsigned relative change `2|x−y| / (|x|+|y|)`, in `[0, 2]`.
/// Defined as 0 when both inputs are zero.
pub fn relative_percent_difference(x: f32, y: f32) -> f64 {
    relative_difference(f64::from(x), f64::from(y))
}

/// [`relative_percent_difference`] on `f64` inputs.
pub fn relative_difference(x: f64, y: f64) -> f64 {
    let denom = x.abs() + y.abs();
    if denom == 0.0 {
        return 0.0;
    }
    (2.0 * (x - y).abs() / denom).min(2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiffSummary {
    pub layer: String,
    pub weight_shape: Vec<usize>,
    /// Euclidean distance over the weight tensor.
    pub kernel_distance: f64,
    pub bias_distance: f64,
    /// Weight plus bias element count.
    pub param_count: usize,
    /// `kernel_distance / sqrt(weight count)`.
    pub normalized_distance: f64,
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Weight tensors of `layer` in both snapshots, shape-checked.
fn weight_pair<'a>(
    a: &'a Checkpoint,
    b: &'a Checkpoint,
    layer: &str,
) -> Result<(&'a Tensor, &'a Tensor)> {
    a.ensure_comparable(b)?;
    let (wa, wb) = (a.weight(layer)?, b.weight(layer)?);
    if wa.shape() != wb.shape() {
        return Err(Error::Incomparable(format!(
            "`{layer}` weight shapes {:?} vs {:?}",
            wa.shape(),
            wb.shape()
        )));
    }
    Ok((wa, wb))
}

pub fn layer_distance(a: &Checkpoint, b: &Checkpoint, layer: &str) -> Result<LayerDiffSummary> {
    let (wa, wb) = weight_pair(a, b, layer)?;
    let (ba, bb) = (a.bias(layer)?, b.bias(layer)?);
    if ba.shape() != bb.shape() {
        return Err(Error::Incomparable(format!("`{layer}` bias shapes differ")));
    }
    let kernel_distance = euclidean(wa.data(), wb.data());
    Ok(LayerDiffSummary {
        layer: layer.to_string(),
        weight_shape: wa.shape().to_vec(),
        kernel_distance,
        bias_distance: euclidean(ba.data(), bb.data()),
        param_count: wa.len() + ba.len(),
        normalized_distance: kernel_distance / (wa.len() as f64).sqrt(),
    })
}

/// Summaries for every parameterized layer, in storage order.
pub fn all_layer_distances(a: &Checkpoint, b: &Checkpoint) -> Result<Vec<LayerDiffSummary>> {
    a.param_layers()
        .into_iter()
        .map(|l| layer_distance(a, b, l))
        .collect()
}

/// A band of relative-change values. Half-open `[lo, hi)` except the last,
/// which is closed at 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeLevel {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Equal-width levels partitioning `[0, 2]`.
pub fn change_levels(n_levels: usize) -> Result<Vec<ChangeLevel>> {
    if n_levels == 0 {
        return Err(Error::Validation("need at least one change level".into()));
    }
    let edges = linear_edges(2.0, n_levels);
    Ok((0..n_levels)
        .map(|i| ChangeLevel {
            index: i,
            lo: edges[i],
            hi: edges[i + 1],
        })
        .collect())
}

fn linear_edges(max: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            if i == n {
                max
            } else {
                max * i as f64 / n as f64
            }
        })
        .collect()
}

/// Index `i` with `edges[i] ≤ v < edges[i+1]`; the last interval is closed
/// and values past either end are clamped into it.
fn interval_of(edges: &[f64], v: f64) -> usize {
    let n = edges.len() - 1;
    let span = edges[n] - edges[0];
    if n == 1 || span <= 0.0 {
        return 0;
    }
    let mut i = (((v - edges[0]) / span) * n as f64)
        .floor()
        .clamp(0.0, (n - 1) as f64) as usize;
    while i > 0 && v < edges[i] {
        i -= 1;
    }
    while i + 1 < n && v >= edges[i + 1] {
        i += 1;
    }
    i
}

/// Weight-change histogram: bins over `|Δw|`, each split by change level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffHistogram {
    pub layer: String,
    /// `n_bins + 1` edges over `[0, max|Δw|]`, or `[0, 0]` when nothing changed.
    pub edges: Vec<f64>,
    pub levels: Vec<ChangeLevel>,
    /// `counts[bin][level]`.
    pub counts: Vec<Vec<u64>>,
}

impl DiffHistogram {
    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `(bin, level)` of one weight pair under this histogram's edges.
    pub fn bucket_of(&self, a: f32, b: f32) -> (usize, usize) {
        let level_edges: Vec<f64> = self
            .levels
            .iter()
            .map(|l| l.lo)
            .chain(self.levels.last().map(|l| l.hi))
            .collect();
        (
            interval_of(&self.edges, abs_delta(a, b)),
            interval_of(&level_edges, relative_percent_difference(a, b)),
        )
    }
}

fn abs_delta(a: f32, b: f32) -> f64 {
    (f64::from(b) - f64::from(a)).abs()
}

/// A histogram, the `(bin, level)` of every weight, and the weights of A.
type Assignment = (DiffHistogram, Vec<(usize, usize)>, Tensor);

fn bucket_assignments(
    a: &Checkpoint,
    b: &Checkpoint,
    layer: &str,
    n_bins: usize,
    n_levels: usize,
) -> Result<Assignment> {
    if n_bins == 0 {
        return Err(Error::Validation("need at least one bin".into()));
    }
    let (wa, wb) = weight_pair(a, b, layer)?;
    let levels = change_levels(n_levels)?;
    let max = wa
        .data()
        .iter()
        .zip(wb.data())
        .map(|(&x, &y)| abs_delta(x, y))
        .fold(0.0, f64::max);
    let edges = if max == 0.0 {
        vec![0.0, 0.0]
    } else {
        linear_edges(max, n_bins)
    };
    let mut hist = DiffHistogram {
        layer: layer.to_string(),
        counts: vec![vec![0; n_levels]; edges.len() - 1],
        edges,
        levels,
    };
    let assigned: Vec<(usize, usize)> = wa
        .data()
        .iter()
        .zip(wb.data())
        .map(|(&x, &y)| hist.bucket_of(x, y))
        .collect();
    for &(bin, level) in &assigned {
        hist.counts[bin][level] += 1;
    }
    Ok((hist, assigned, wa.clone()))
}

pub fn build_histogram(
    a: &Checkpoint,
    b: &Checkpoint,
    layer: &str,
    n_bins: usize,
    n_levels: usize,
) -> Result<DiffHistogram> {
    Ok(bucket_assignments(a, b, layer, n_bins, n_levels)?.0)
}

/// Multi-indices (`(oc, ic, ky, kx)` or `(row, col)`) of the weights falling
/// in one histogram bucket, row-major.
pub fn locate_bucket(
    a: &Checkpoint,
    b: &Checkpoint,
    layer: &str,
    n_bins: usize,
    n_levels: usize,
    bin: usize,
    level: usize,
) -> Result<Vec<Vec<usize>>> {
    let (hist, assigned, weight) = bucket_assignments(a, b, layer, n_bins, n_levels)?;
    if bin >= hist.n_bins() || level >= n_levels {
        return Err(Error::OutOfRange(format!(
            "bucket ({bin}, {level}) outside {} bins × {n_levels} levels",
            hist.n_bins()
        )));
    }
    Ok(assigned
        .iter()
        .enumerate()
        .filter(|(_, &bl)| bl == (bin, level))
        .map(|(i, _)| weight.unravel(i))
        .collect())
}

/// Per-(input channel, kernel) distances of a conv layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelMap {
    pub layer: String,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `cells[ic][oc]`: distance between the `k×k` slices `weight[oc][ic]`.
    pub cells: Vec<Vec<f64>>,
}

fn conv_dims(w: &Tensor, layer: &str) -> Result<(usize, usize, usize)> {
    match *w.shape() {
        [oc, ic, k, k2] if k == k2 => Ok((oc, ic, k)),
        _ => Err(Error::NoParams(format!("{layer} (not a conv layer)"))),
    }
}

pub fn build_pixel_map(a: &Checkpoint, b: &Checkpoint, layer: &str) -> Result<PixelMap> {
    let (wa, wb) = weight_pair(a, b, layer)?;
    let (oc, ic, k) = conv_dims(wa, layer)?;
    let slice = k * k;
    let cells = (0..ic)
        .map(|i| {
            (0..oc)
                .map(|o| {
                    let start = (o * ic + i) * slice;
                    euclidean(
                        &wa.data()[start..start + slice],
                        &wb.data()[start..start + slice],
                    )
                })
                .collect()
        })
        .collect();
    Ok(PixelMap {
        layer: layer.to_string(),
        in_channels: ic,
        out_channels: oc,
        cells,
    })
}

/// Raw `k×k` weights of `weight[oc][ic]`, row-major.
pub fn kernel_slice(ckpt: &Checkpoint, layer: &str, oc: usize, ic: usize) -> Result<Vec<Vec<f32>>> {
    let w = ckpt.weight(layer)?;
    let (n_oc, n_ic, k) = conv_dims(w, layer)?;
    if oc >= n_oc || ic >= n_ic {
        return Err(Error::OutOfRange(format!(
            "kernel ({oc}, {ic}) outside {n_oc} kernels × {n_ic} channels"
        )));
    }
    let start = (oc * n_ic + ic) * k * k;
    Ok(w.data()[start..start + k * k]
        .chunks(k)
        .map(|r| r.to_vec())
        .collect())
}

/// Per-channel activation distance of one layer between two traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobChannelDiff {
    pub layer: String,
    pub channels: Vec<f64>,
}

pub fn blob_diff(a: &ForwardTrace, b: &ForwardTrace, layer: &str) -> Result<BlobChannelDiff> {
    let (ta, tb) = (a.activation(layer)?, b.activation(layer)?);
    if ta.shape() != tb.shape() {
        return Err(Error::Shape(format!(
            "`{layer}` activations {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        )));
    }
    let [c, h, w] = ta.dims3()?;
    let plane = h * w;
    Ok(BlobChannelDiff {
        layer: layer.to_string(),
        channels: (0..c)
            .map(|ch| {
                let r = ch * plane..(ch + 1) * plane;
                euclidean(&ta.data()[r.clone()], &tb.data()[r])
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;

    fn ckpt(weights: Vec<f32>, shape: Vec<usize>) -> Checkpoint {
        let out = shape[0];
        let mut tensors = IndexMap::new();
        tensors.insert("l.weight".to_string(), Tensor::new(shape, weights).unwrap());
        tensors.insert("l.bias".to_string(), Tensor::zeros(vec![out]));
        Checkpoint {
            epoch: 0,
            arch_hash: "h".into(),
            tensors,
        }
    }

    #[test]
    fn rpd_examples() {
        assert_eq!(relative_percent_difference(1.0, 1.0), 0.0);
        assert_eq!(relative_percent_difference(1.0, -1.0), 2.0);
        assert_eq!(relative_percent_difference(0.0, 0.0), 0.0);
        assert!((relative_percent_difference(0.1, 0.3) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn three_four_five() {
        let a = ckpt(vec![0.0, 0.0], vec![1, 2]);
        let b = ckpt(vec![3.0, 4.0], vec![1, 2]);
        let s = layer_distance(&a, &b, "l").unwrap();
        assert_eq!(s.kernel_distance, 5.0);
        assert_eq!(s.bias_distance, 0.0);
        assert_eq!(s.param_count, 3);
        assert_eq!(s.normalized_distance, 5.0 / 2f64.sqrt());
    }

    #[test]
    fn missing_layer_and_mismatch() {
        let a = ckpt(vec![0.0, 0.0], vec![1, 2]);
        let mut b = a.clone();
        assert!(matches!(
            layer_distance(&a, &b, "relu"),
            Err(Error::NoParams(_))
        ));
        b.arch_hash = "other".into();
        assert!(matches!(
            layer_distance(&a, &b, "l"),
            Err(Error::Incomparable(_))
        ));
    }

    fn worked_example() -> (Checkpoint, Checkpoint) {
        (
            ckpt(vec![0.0, 0.1, -0.2, 0.5], vec![1, 4]),
            ckpt(vec![0.0, 0.3, -0.2, 0.1], vec![1, 4]),
        )
    }

    #[test]
    fn histogram_worked_example() {
        let (a, b) = worked_example();
        let h = build_histogram(&a, &b, "l", 2, 4).unwrap();
        assert_eq!(h.edges.len(), 3);
        assert_eq!(h.counts, vec![vec![2, 0, 0, 0], vec![0, 0, 2, 0]]);
        assert_eq!(h.total(), 4);
        let levels: Vec<(f64, f64)> = h.levels.iter().map(|l| (l.lo, l.hi)).collect();
        assert_eq!(levels, vec![(0.0, 0.5), (0.5, 1.0), (1.0, 1.5), (1.5, 2.0)]);
    }

    #[test]
    fn locate_worked_example() {
        let (a, b) = worked_example();
        let coords = locate_bucket(&a, &b, "l", 2, 4, 1, 2).unwrap();
        assert_eq!(coords, vec![vec![0, 1], vec![0, 3]]);
        assert_eq!(
            locate_bucket(&a, &b, "l", 2, 4, 0, 0).unwrap(),
            vec![vec![0, 0], vec![0, 2]]
        );
        assert!(matches!(
            locate_bucket(&a, &b, "l", 2, 4, 2, 0),
            Err(Error::OutOfRange(_))
        ));
        assert!(locate_bucket(&a, &b, "l", 2, 4, 0, 4).is_err());
    }

    #[test]
    fn identical_snapshots_single_bucket() {
        let (a, _) = worked_example();
        let h = build_histogram(&a, &a, "l", 16, 4).unwrap();
        assert_eq!(h.edges, vec![0.0, 0.0]);
        assert_eq!(h.counts, vec![vec![4, 0, 0, 0]]);
        assert_eq!(locate_bucket(&a, &a, "l", 16, 4, 0, 0).unwrap().len(), 4);
    }

    #[test]
    fn pixel_map_layout_and_slices() {
        // oc=4, ic=2, k=1
        let a = ckpt((0..8).map(|v| v as f32).collect(), vec![4, 2, 1, 1]);
        let b = ckpt(vec![0.0; 8], vec![4, 2, 1, 1]);
        let pm = build_pixel_map(&a, &b, "l").unwrap();
        assert_eq!((pm.in_channels, pm.out_channels), (2, 4));
        assert_eq!(pm.cells.len(), 2);
        assert_eq!(pm.cells[1], vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(kernel_slice(&a, "l", 3, 1).unwrap(), vec![vec![7.0]]);
        assert!(matches!(
            kernel_slice(&a, "l", 4, 0),
            Err(Error::OutOfRange(_))
        ));
        let dense = ckpt(vec![0.0; 4], vec![2, 2]);
        assert!(matches!(
            build_pixel_map(&dense, &dense, "l"),
            Err(Error::NoParams(_))
        ));
    }

    #[test]
    fn interval_boundaries_half_open() {
        let e = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(interval_of(&e, 0.0), 0);
        assert_eq!(interval_of(&e, 0.999), 0);
        assert_eq!(interval_of(&e, 1.0), 1);
        assert_eq!(interval_of(&e, 2.0), 2);
        assert_eq!(interval_of(&e, 3.0), 2);
    }

    #[test]
    fn blob_single_channel() {
        let trace = |v: f32| ForwardTrace {
            activations: [("c".to_string(), Tensor::filled(vec![1, 1, 1], v))]
                .into_iter()
                .collect(),
            probabilities: Tensor::filled(vec![1], 1.0),
        };
        let d = blob_diff(&trace(2.0), &trace(5.0), "c").unwrap();
        assert_eq!(d.channels, vec![3.0]);
        assert_eq!(
            blob_diff(&trace(2.0), &trace(2.0), "c").unwrap().channels,
            vec![0.0]
        );
    }
}
