//! Deterministic SGD training of the reference network on synthetic data,
//! producing genuine snapshot pairs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::ModelArchitecture;
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::dataset::{Sample, SyntheticDataset};
use crate::error::{Error, Result};
use crate::network::{argmax, Network, Params};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f32,
    pub epochs: usize,
    pub checkpoint_epochs: Vec<usize>,
    pub batch_size: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    pub image_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            learning_rate: 0.05,
            epochs: 50,
            checkpoint_epochs: vec![1, 10, 50],
            batch_size: 16,
            n_samples: 400,
            n_classes: 4,
            image_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.n_samples == 0 {
            return Err(Error::Validation(
                "epochs, batch_size and n_samples must be ≥ 1".into(),
            ));
        }
        if let Some(e) = self
            .checkpoint_epochs
            .iter()
            .find(|&&e| e == 0 || e > self.epochs)
        {
            return Err(Error::Validation(format!(
                "checkpoint epoch {e} outside [1, {}]",
                self.epochs
            )));
        }
        Ok(())
    }

    /// The reference network with an input matching `image_size`.
    pub fn architecture(&self) -> ModelArchitecture {
        let mut arch = ModelArchitecture::reference(self.n_classes);
        arch.layers[0].kind = crate::arch::LayerKind::Input {
            height: self.image_size,
            width: self.image_size,
            channels: 3,
        };
        arch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches, sample weighted.
    pub loss: f64,
    /// Fraction of samples classified correctly before each batch update.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub arch: ModelArchitecture,
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<EpochStats>,
}

/// Gradients keyed like checkpoint tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub tensors: IndexMap<String, Vec<f64>>,
}

/// Splitmix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// FNV-1a, 64-bit.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Epoch-0 checkpoint: weights uniform in `(−a, a)` with `a = sqrt(6 / fan_in)`,
/// biases zero. Each tensor draws from its own splitmix64 stream seeded with
/// `seed ^ fnv1a(name)`.
pub fn init_weights(arch: &ModelArchitecture, seed: u64) -> Result<Checkpoint> {
    arch.ensure_valid()?;
    let mut tensors = IndexMap::new();
    for spec in arch.param_specs()? {
        let n: usize = spec.shape.iter().product();
        let data = if spec.is_bias {
            vec![0.0; n]
        } else {
            let bound = (6.0 / spec.fan_in as f64).sqrt();
            let mut rng = SplitMix64::new(seed ^ name_hash(&spec.name));
            (0..n)
                .map(|_| (bound * (2.0 * rng.next_f64() - 1.0)) as f32)
                .collect()
        };
        tensors.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?);
    }
    Ok(Checkpoint {
        epoch: 0,
        arch_hash: arch.hash(),
        tensors,
    })
}

pub(crate) fn to_network_batch(samples: &[&Sample]) -> Result<Vec<(Vec<f64>, usize)>> {
    samples
        .iter()
        .map(|s| Ok((s.pixels.hwc_to_chw()?.to_f64(), s.label)))
        .collect()
}

/// Analytic gradients of the mean cross-entropy of `batch`.
pub fn backward(
    arch: &ModelArchitecture,
    ckpt: &Checkpoint,
    batch: &[Sample],
) -> Result<Gradients> {
    let net = Network::new(arch)?;
    let params = net.params_from(ckpt)?;
    let refs: Vec<&Sample> = batch.iter().collect();
    let g = net.loss_and_grads(&params, &to_network_batch(&refs)?)?;
    Ok(Gradients {
        loss: g.loss,
        tensors: net
            .param_specs()
            .iter()
            .map(|s| s.name.clone())
            .zip(g.grads)
            .collect(),
    })
}

fn snapshot(net: &Network, params: &[Vec<f32>], epoch: usize) -> Result<Checkpoint> {
    let mut tensors = IndexMap::new();
    for (spec, data) in net.param_specs().iter().zip(params) {
        tensors.insert(
            spec.name.clone(),
            Tensor::new(spec.shape.clone(), data.clone())?,
        );
    }
    Ok(Checkpoint {
        epoch: epoch as u64,
        arch_hash: net.arch().hash(),
        tensors,
    })
}

/// Runs plain SGD (`w ← w − lr·g` per mini-batch) and returns snapshots at
/// `checkpoint_epochs` plus the per-epoch log. Single-threaded and
/// deterministic for a fixed config.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let arch = config.architecture();
    let net = Network::new(&arch)?;
    let data = SyntheticDataset::generate(
        config.seed,
        config.n_samples,
        config.n_classes,
        config.image_size,
    )?;
    let init = init_weights(&arch, config.seed)?;
    let mut master: Vec<Vec<f32>> = net
        .param_specs()
        .iter()
        .map(|s| Ok(init.tensor(&s.name)?.data().to_vec()))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED));
    let lr = f64::from(config.learning_rate);
    let mut log = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &data.samples[i]).collect();
            let batch = to_network_batch(&samples)?;
            let params: Params = master
                .iter()
                .map(|p| p.iter().map(|&v| f64::from(v)).collect())
                .collect();
            let g = net.loss_and_grads(&params, &batch)?;
            if !g.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: g.loss,
                });
            }
            loss_sum += g.loss * batch.len() as f64;
            correct += g.correct;
            for (w, gw) in master.iter_mut().zip(&g.grads) {
                for (wi, &gi) in w.iter_mut().zip(gw) {
                    *wi = (f64::from(*wi) - lr * gi) as f32;
                }
            }
            if let Some(bad) = master.iter().flatten().find(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    loss: f64::from(*bad),
                });
            }
        }
        log.push(EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
        if config.checkpoint_epochs.contains(&epoch) {
            checkpoints.push(snapshot(&net, &master, epoch)?);
        }
    }
    Ok(TrainOutcome {
        arch,
        checkpoints,
        log,
    })
}

/// Fraction of `data` whose predicted class matches the label.
pub fn accuracy(
    arch: &ModelArchitecture,
    ckpt: &Checkpoint,
    data: &SyntheticDataset,
) -> Result<f64> {
    let net = Network::new(arch)?;
    let params = net.params_from(ckpt)?;
    let mut correct = 0;
    for s in &data.samples {
        let x = s.pixels.hwc_to_chw()?.to_f64();
        if argmax(net.forward(&params, &x)?.probabilities()) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains and writes `epoch_<n>.cndf`, `trainlog.csv` and `arch.json` into
/// `out_dir`. Returns the checkpoint paths.
pub fn train_to_dir(config: &TrainConfig, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let outcome = train(config)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("arch.json"), outcome.arch.to_json())?;
    let mut paths = Vec::new();
    for ckpt in &outcome.checkpoints {
        let path = out_dir.join(format!("epoch_{}.cndf", ckpt.epoch));
        save_checkpoint(ckpt, &outcome.arch, &path)?;
        paths.push(path);
    }
    fs::write(out_dir.join("trainlog.csv"), format_log(&outcome.log))?;
    Ok(paths)
}

pub fn format_log(log: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for e in log {
        writeln!(s, "{},{},{}", e.epoch, e.loss, e.accuracy).unwrap();
    }
    s
}
