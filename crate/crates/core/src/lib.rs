//! Compare two training snapshots of a small convolutional network.
//!
//! The crate covers the whole pipeline: architecture description and shape
//! inference ([`arch`]), the CNDF checkpoint container ([`checkpoint`]),
//! a reference forward/backward implementation ([`inference`], [`network`]),
//! a deterministic trainer that produces real snapshot pairs ([`trainer`]),
//! parameter and blob diffs ([`diff`]) and activation-ranked image patches
//! ([`patches`]).

pub mod arch;
pub mod checkpoint;
pub mod dataset;
pub mod diff;
pub mod error;
pub mod image;
pub mod inference;
pub mod kernels;
pub mod network;
pub mod patches;
pub mod tensor;
pub mod trainer;

pub use arch::{LayerKind, LayerShape, LayerSpec, ModelArchitecture, ParamSpec};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
};
pub use diff::{
    all_layer_distances, blob_diff, build_histogram, build_pixel_map, kernel_slice, layer_distance,
    locate_bucket, relative_difference, relative_percent_difference, BlobChannelDiff, ChangeLevel,
    DiffHistogram, LayerDiffSummary, PixelMap,
};
pub use error::{Error, Result};
pub use image::{decode_image, load_image, InputImage};
pub use inference::{forward, forward_pixels, ForwardTrace};
pub use patches::{propose_regions, rank_patches, PatchProposal, RankedPatch};
pub use tensor::Tensor;
pub use trainer::{backward, init_weights, train, train_to_dir, TrainConfig, TrainOutcome};
