//! The `train`, `diff` and `report` subcommands, writing to any sink.

use std::io::Write;
use std::path::Path;

use serde_json::json;

use cnndiff_core::{
    all_layer_distances, build_histogram, build_pixel_map, layer_distance, load_checkpoint,
    train_to_dir, Checkpoint, DiffHistogram, Error, LayerDiffSummary, PixelMap, Result,
    TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Everything `diff` reports for one layer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LayerDiff {
    pub summary: LayerDiffSummary,
    pub histogram: DiffHistogram,
    /// Conv layers only.
    pub pixel_map: Option<PixelMap>,
}

pub fn load_pair(a: &Path, b: &Path) -> Result<(Checkpoint, Checkpoint)> {
    let (a, b) = (load_checkpoint(a)?, load_checkpoint(b)?);
    a.ensure_comparable(&b)?;
    Ok((a, b))
}

pub fn layer_diff(
    a: &Checkpoint,
    b: &Checkpoint,
    layer: &str,
    bins: usize,
    levels: usize,
) -> Result<LayerDiff> {
    let summary = layer_distance(a, b, layer)?;
    let histogram = build_histogram(a, b, layer, bins, levels)?;
    let pixel_map = match summary.weight_shape.len() {
        4 => Some(build_pixel_map(a, b, layer)?),
        _ => None,
    };
    Ok(LayerDiff {
        summary,
        histogram,
        pixel_map,
    })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn write_summaries(out: &mut dyn Write, rows: &[LayerDiffSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "layer",
        "weight_shape",
        "kernel_distance",
        "bias_distance",
        "param_count",
        "normalized_distance",
    ])
    .map_err(csv_error)?;
    for s in rows {
        let shape = s
            .weight_shape
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("x");
        w.write_record([
            s.layer.clone(),
            shape,
            s.kernel_distance.to_string(),
            s.bias_distance.to_string(),
            s.param_count.to_string(),
            s.normalized_distance.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn write_histogram(out: &mut dyn Write, h: &DiffHistogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "bin", "delta_lo", "delta_hi", "level", "rpd_lo", "rpd_hi", "count",
    ])
    .map_err(csv_error)?;
    for (bin, row) in h.counts.iter().enumerate() {
        for (level, count) in row.iter().enumerate() {
            let l = &h.levels[level];
            w.write_record([
                bin.to_string(),
                h.edges[bin].to_string(),
                h.edges[bin + 1].to_string(),
                level.to_string(),
                l.lo.to_string(),
                l.hi.to_string(),
                count.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_pixel_map(out: &mut dyn Write, p: &PixelMap) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["in_channel", "out_channel", "distance"])
        .map_err(csv_error)?;
    for (ic, row) in p.cells.iter().enumerate() {
        for (oc, d) in row.iter().enumerate() {
            w.write_record([ic.to_string(), oc.to_string(), d.to_string()])
                .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// JSON: one object. CSV: summary, histogram and pixel-map tables separated
/// by blank lines.
pub fn write_layer_diff(out: &mut dyn Write, d: &LayerDiff, format: Format) -> Result<()> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, d).map_err(|e| Error::Io(e.into()))?;
            writeln!(out)?;
        }
        Format::Csv => {
            write_summaries(out, std::slice::from_ref(&d.summary))?;
            writeln!(out)?;
            write_histogram(out, &d.histogram)?;
            if let Some(p) = &d.pixel_map {
                writeln!(out)?;
                write_pixel_map(out, p)?;
            }
        }
    }
    Ok(())
}

pub fn write_report(
    out: &mut dyn Write,
    a: &Checkpoint,
    b: &Checkpoint,
    format: Format,
) -> Result<()> {
    let rows = all_layer_distances(a, b)?;
    match format {
        Format::Json => {
            let body = json!({
                "epochs": { "a": a.epoch, "b": b.epoch },
                "arch_hash": a.arch_hash,
                "layers": rows,
            });
            serde_json::to_writer_pretty(&mut *out, &body).map_err(|e| Error::Io(e.into()))?;
            writeln!(out)?;
        }
        Format::Csv => write_summaries(out, &rows)?,
    }
    Ok(())
}

/// Trains, writes the run directory and prints the per-epoch log.
pub fn run_training(out: &mut dyn Write, config: &TrainConfig, dir: &Path) -> Result<()> {
    let paths = train_to_dir(config, dir)?;
    out.write_all(std::fs::read(dir.join("trainlog.csv"))?.as_slice())?;
    for p in paths {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}
