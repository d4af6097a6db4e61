#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cnndiff_core::dataset::SyntheticDataset;
use cnndiff_core::image::encode_png;
use cnndiff_core::{
    init_weights, save_checkpoint, train, Checkpoint, ModelArchitecture, Tensor, TrainConfig,
};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub arch: ModelArchitecture,
    pub a: Checkpoint,
    pub b: Checkpoint,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn images(&self) -> PathBuf {
        self.path("images")
    }
}

/// A short training run's first and last snapshots, plus an image catalog:
/// three 32×32 dataset images, one 48×40 image and a stray text file.
pub fn fixture() -> Fixture {
    let config = TrainConfig {
        epochs: 3,
        checkpoint_epochs: vec![1, 3],
        n_samples: 64,
        ..TrainConfig::default()
    };
    let run = train(&config).unwrap();
    let (a, b) = (run.checkpoints[0].clone(), run.checkpoints[1].clone());
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("arch.json"), run.arch.to_json()).unwrap();
    save_checkpoint(&a, &run.arch, dir.path().join("a.cndf")).unwrap();
    save_checkpoint(&b, &run.arch, dir.path().join("b.cndf")).unwrap();

    let images = dir.path().join("images");
    std::fs::create_dir(&images).unwrap();
    let data = SyntheticDataset::generate(7, 3, 4, 32).unwrap();
    for (i, s) in data.samples.iter().enumerate() {
        std::fs::write(
            images.join(format!("shape{i}.png")),
            encode_png(&s.pixels).unwrap(),
        )
        .unwrap();
    }
    let wide: Vec<f32> = (0..40 * 48 * 3)
        .map(|i| ((i * 37) % 101) as f32 / 100.0)
        .collect();
    let wide = Tensor::new(vec![40, 48, 3], wide).unwrap();
    std::fs::write(images.join("wide.png"), encode_png(&wide).unwrap()).unwrap();
    std::fs::write(images.join("notes.txt"), "not an image").unwrap();
    Fixture {
        dir,
        arch: run.arch,
        a,
        b,
    }
}

/// A checkpoint of a different architecture.
pub fn foreign_checkpoint(dir: &Path) -> PathBuf {
    let arch = ModelArchitecture::reference(3);
    let c = init_weights(&arch, 1).unwrap();
    let path = dir.join("foreign.cndf");
    save_checkpoint(&c, &arch, &path).unwrap();
    path
}
