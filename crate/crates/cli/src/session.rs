//! Immutable state behind the HTTP service: one architecture, two comparable
//! snapshots and an image catalog.
//!
//! Parameter views are computed once at startup. Forward traces and patch
//! rankings are computed on first request and kept in small LRU memos, the
//! only mutable state.

use std::collections::BTreeMap;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use lru::LruCache;

use cnndiff_core::diff::{DEFAULT_BINS, DEFAULT_LEVELS};
use cnndiff_core::image::resize_bilinear;
use cnndiff_core::{
    all_layer_distances, build_histogram, build_pixel_map, decode_image, forward, load_checkpoint,
    rank_patches, Checkpoint, DiffHistogram, Error, ForwardTrace, InputImage, LayerDiffSummary,
    LayerKind, LayerShape, ModelArchitecture, PixelMap, RankedPatch, Result,
};

const MEMO_CAPACITY: usize = 64;

/// Which of the two loaded checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Snapshot {
    A,
    B,
}

impl Snapshot {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "a" => Some(Snapshot::A),
            "b" => Some(Snapshot::B),
            _ => None,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Snapshot::A => "a",
            Snapshot::B => "b",
        }
    }
}

/// Paths the service is started from.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub arch: PathBuf,
    pub a: PathBuf,
    pub b: PathBuf,
    pub images: PathBuf,
}

type PatchKey = (String, String, usize, Snapshot);

pub struct SessionState {
    pub arch: ModelArchitecture,
    pub a: Checkpoint,
    pub b: Checkpoint,
    pub shapes: Vec<(String, LayerShape)>,
    pub summaries: IndexMap<String, LayerDiffSummary>,
    histograms: IndexMap<String, DiffHistogram>,
    pixel_maps: IndexMap<String, PixelMap>,
    images: BTreeMap<String, PathBuf>,
    traces: Mutex<LruCache<String, Arc<(ForwardTrace, ForwardTrace)>>>,
    rankings: Mutex<LruCache<PatchKey, Arc<Vec<RankedPatch>>>>,
}

impl SessionState {
    pub fn load(config: &SessionConfig) -> Result<Self> {
        let arch = ModelArchitecture::from_json(&fs::read_to_string(&config.arch)?)?;
        let a = load_checkpoint(&config.a)?;
        let b = load_checkpoint(&config.b)?;
        Self::new(arch, a, b, &config.images)
    }

    pub fn new(
        arch: ModelArchitecture,
        a: Checkpoint,
        b: Checkpoint,
        image_dir: &Path,
    ) -> Result<Self> {
        arch.ensure_valid()?;
        a.ensure_comparable(&b)?;
        a.validate_against(&arch)?;
        b.validate_against(&arch)?;

        let summaries = all_layer_distances(&a, &b)?
            .into_iter()
            .map(|s| (s.layer.clone(), s))
            .collect();
        let mut histograms = IndexMap::new();
        let mut pixel_maps = IndexMap::new();
        for layer in &arch.layers {
            match layer.kind {
                LayerKind::Conv { .. } => {
                    pixel_maps.insert(layer.name.clone(), build_pixel_map(&a, &b, &layer.name)?);
                }
                LayerKind::Dense { .. } => {}
                _ => continue,
            }
            let h = build_histogram(&a, &b, &layer.name, DEFAULT_BINS, DEFAULT_LEVELS)?;
            histograms.insert(layer.name.clone(), h);
        }
        Ok(Self {
            shapes: arch.infer_shapes()?,
            images: scan_images(image_dir)?,
            arch,
            a,
            b,
            summaries,
            histograms,
            pixel_maps,
            traces: memo(),
            rankings: memo(),
        })
    }

    pub fn checkpoint(&self, snapshot: Snapshot) -> &Checkpoint {
        match snapshot {
            Snapshot::A => &self.a,
            Snapshot::B => &self.b,
        }
    }

    /// Looks a layer up by name, failing with `UnknownLayer`.
    pub fn layer(&self, name: &str) -> Result<(usize, &LayerKind)> {
        self.arch
            .layer(name)
            .map(|(i, l)| (i, &l.kind))
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn class_names(&self) -> Vec<String> {
        let n = match self.shapes.last() {
            Some((_, s)) => s.numel(),
            None => 0,
        };
        (0..n)
            .map(|i| match cnndiff_core::dataset::CLASS_NAMES.get(i) {
                Some(name) if n <= cnndiff_core::dataset::CLASS_NAMES.len() => name.to_string(),
                _ => format!("class{i}"),
            })
            .collect()
    }

    /// Histogram at the given resolution; the default one is precomputed.
    pub fn histogram(&self, layer: &str, bins: usize, levels: usize) -> Result<DiffHistogram> {
        let (_, kind) = self.layer(layer)?;
        if !kind.has_params() {
            return Err(Error::NoParams(layer.to_string()));
        }
        if (bins, levels) == (DEFAULT_BINS, DEFAULT_LEVELS) {
            if let Some(h) = self.histograms.get(layer) {
                return Ok(h.clone());
            }
        }
        build_histogram(&self.a, &self.b, layer, bins, levels)
    }

    pub fn pixel_map(&self, layer: &str) -> Result<&PixelMap> {
        let (_, kind) = self.layer(layer)?;
        match kind {
            LayerKind::Conv { .. } => Ok(&self.pixel_maps[layer]),
            _ if kind.has_params() => {
                Err(Error::Validation(format!("`{layer}` is not a conv layer")))
            }
            _ => Err(Error::NoParams(layer.to_string())),
        }
    }

    /// Catalog ids, sorted.
    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.images.keys().map(String::as_str)
    }

    pub fn image(&self, id: &str) -> std::result::Result<InputImage, ImageLookup> {
        let path = self.images.get(id).ok_or(ImageLookup::NotFound)?;
        decode_image(path).map_err(ImageLookup::Failed)
    }

    /// Forward traces of both snapshots on one catalog image.
    pub fn traces(
        &self,
        id: &str,
    ) -> std::result::Result<Arc<(ForwardTrace, ForwardTrace)>, ImageLookup> {
        if let Some(t) = self.traces.lock().unwrap().get(id) {
            return Ok(t.clone());
        }
        let mut image = self.image(id)?;
        let (h, w, _) = self.arch.input_dims()?;
        image.pixels = resize_bilinear(&image.pixels, h, w)?;
        let run = |c| forward(&self.arch, c, &image).map_err(ImageLookup::Failed);
        let pair = Arc::new((run(&self.a)?, run(&self.b)?));
        self.traces
            .lock()
            .unwrap()
            .put(id.to_string(), pair.clone());
        Ok(pair)
    }

    /// Every proposal of one image ranked for one channel and snapshot.
    pub fn ranking(
        &self,
        id: &str,
        layer: &str,
        channel: usize,
        snapshot: Snapshot,
    ) -> std::result::Result<(InputImage, Arc<Vec<RankedPatch>>), ImageLookup> {
        let image = self.image(id)?;
        let key = (id.to_string(), layer.to_string(), channel, snapshot);
        if let Some(r) = self.rankings.lock().unwrap().get(&key) {
            return Ok((image, r.clone()));
        }
        let ranked = rank_patches(
            &self.arch,
            self.checkpoint(snapshot),
            &image,
            layer,
            channel,
            usize::MAX,
            snapshot.id(),
        )
        .map_err(ImageLookup::Failed)?;
        let ranked = Arc::new(ranked);
        self.rankings.lock().unwrap().put(key, ranked.clone());
        Ok((image, ranked))
    }
}

fn memo<K: std::hash::Hash + Eq, V>() -> Mutex<LruCache<K, V>> {
    Mutex::new(LruCache::new(NonZeroUsize::new(MEMO_CAPACITY).unwrap()))
}

/// Failure to resolve or process a catalog image.
#[derive(Debug)]
pub enum ImageLookup {
    NotFound,
    Failed(Error),
}

impl From<Error> for ImageLookup {
    fn from(e: Error) -> Self {
        ImageLookup::Failed(e)
    }
}

/// PNG and PPM files in `dir`, keyed by file stem.
fn scan_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png" | "ppm")) || !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
            return Err(Error::Validation(format!(
                "image id `{stem}` is ambiguous: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}
