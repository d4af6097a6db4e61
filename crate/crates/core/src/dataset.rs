//! Seeded synthetic image-classification data: bars and blobs on noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shape classes, in label order.
pub const CLASS_NAMES: [&str; 4] = ["vertical-bar", "horizontal-bar", "diagonal-bar", "blob"];

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `H×W×3`, values in `[0, 1]`.
    pub pixels: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
    pub size: usize,
}

impl SyntheticDataset {
    /// `n_samples` square images of side `size`; labels cycle `0..n_classes`
    /// so every class gets the same count (±1).
    pub fn generate(seed: u64, n_samples: usize, n_classes: usize, size: usize) -> Result<Self> {
        if n_classes == 0 || n_classes > CLASS_NAMES.len() {
            return Err(Error::Validation(format!(
                "n_classes must be in 1..={}, got {n_classes}",
                CLASS_NAMES.len()
            )));
        }
        if size < 16 {
            return Err(Error::Validation(format!("image size {size} is below 16")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n_samples)
            .map(|i| {
                let label = i % n_classes;
                Sample {
                    pixels: render(&mut rng, label, size),
                    label,
                }
            })
            .collect();
        Ok(Self {
            samples,
            n_classes,
            size,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Draws one image of class `label`.
pub fn render(rng: &mut impl Rng, label: usize, size: usize) -> Tensor {
    let bg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.2));
    let fg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
    let mut mask = vec![false; size * size];
    let mut paint = |x: usize, y: usize| {
        if x < size && y < size {
            mask[y * size + x] = true;
        }
    };
    let thick = rng.random_range(3..=5);
    let len = rng.random_range(size / 2..=size * 3 / 4);
    match label {
        0 | 1 => {
            let along = rng.random_range(0..=size - len);
            let across = rng.random_range(0..=size - thick);
            for a in along..along + len {
                for b in across..across + thick {
                    if label == 0 {
                        paint(b, a);
                    } else {
                        paint(a, b);
                    }
                }
            }
        }
        2 => {
            let x0 = rng.random_range(0..=size - len);
            let y0 = rng.random_range(0..=size - len);
            for d in 0..len {
                for t in 0..thick {
                    paint(x0 + d + t, y0 + d);
                }
            }
        }
        _ => {
            let r = rng.random_range(4..=7) as i64;
            let cx = rng.random_range(r..size as i64 - r);
            let cy = rng.random_range(r..size as i64 - r);
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                        paint(x as usize, y as usize);
                    }
                }
            }
        }
    }
    let mut data = Vec::with_capacity(size * size * 3);
    for m in &mask {
        let base = if *m { fg } else { bg };
        for v in base {
            let noise: f32 = rng.random_range(-0.08..0.08);
            data.push((v + noise).clamp(0.0, 1.0));
        }
    }
    Tensor::new(vec![size, size, 3], data).expect("valid image")
}
