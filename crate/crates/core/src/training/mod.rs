//! Optimization of the three networks against the weighted loss, with
//! checkpointing, logging and finite-difference validation.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod log;
pub mod step;

pub use adam::{adam_update, AdamHyper, AdamState};
pub use checkpoint::{Checkpoint, RngState};
pub use gradcheck::{check_gradients, check_model_gradients, GradCheckReport, GroupError};
pub use log::{EpochRecord, StepRecord, TrainLog};
pub use step::{loss_and_grad, BatchTensors, LossConfig};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_batch, Manifest, Split};
use crate::error::{Error, Result};
use crate::identity::IdentityBackbone;
use crate::imageio::resize_bilinear;
use crate::losses::{LossBreakdown, LossWeights, RedundancyMode};
use crate::model::{images_to_map, FaceImage, ModelConfig, ModelParams};
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub redundancy_mode: RedundancyMode,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 200,
            weights: LossWeights::default(),
            redundancy_mode: RedundancyMode::default(),
            seed: 0,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::config(format!("adam_eps must be > 0, got {}", self.adam_eps)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            weights: self.weights,
            redundancy_mode: self.redundancy_mode,
        }
    }
}

/// Expands a top-level seed into an independent per-purpose seed. Results fit
/// in 63 bits so they survive formats with signed integers.
pub fn derive_seed(top: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = top ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) >> 1
}

/// Kaiming-normal weights (fan-in, leaky-rectifier gain) and zero biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::<f32>::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params.params_mut() {
        if p.shape.len() == 1 {
            p.zero_();
        } else {
            let fan_in = p.shape[1..].iter().product();
            p.kaiming_normal(fan_in, config.leaky_slope, &mut rng);
        }
    }
    Ok(params)
}

/// In-memory training corpus with precomputed supervision embeddings.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub originals: Vec<FaceImage>,
    pub fakes: Vec<FaceImage>,
    pub reference_ids: Vec<Vec<f32>>,
}

impl TrainingSet {
    /// Embeds each original with the frozen supervision backbone, resampling
    /// to its declared resolution when needed.
    pub fn new(originals: Vec<FaceImage>, fakes: Vec<FaceImage>, supervisor: &IdentityBackbone) -> Result<Self> {
        if originals.len() != fakes.len() {
            return Err(Error::shape("originals and fakes differ in count"));
        }
        let r = supervisor.resolution();
        let resized: Vec<FaceImage> = originals
            .iter()
            .map(|img| {
                if img.height() == r && img.width() == r {
                    img.clone()
                } else {
                    resize_bilinear(img, r, r)
                }
            })
            .collect();
        let refs: Vec<&FaceImage> = resized.iter().collect();
        let reference_ids = supervisor.embed_batch(&refs)?.into_iter().map(|e| e.0).collect();
        Ok(Self {
            originals,
            fakes,
            reference_ids,
        })
    }

    /// Loads the training split of a manifest at `resolution`.
    pub fn from_manifest(manifest: &Manifest, resolution: usize, supervisor: &IdentityBackbone) -> Result<Self> {
        let idx = manifest.indices(Split::Train);
        if idx.is_empty() {
            return Err(Error::config("manifest has an empty train split"));
        }
        let pairs = load_batch(manifest, &idx, resolution)?;
        let (originals, fakes) = pairs.into_iter().map(|p| (p.original, p.fake)).unzip();
        Self::new(originals, fakes, supervisor)
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> BatchTensors<T> {
        let ori: Vec<&FaceImage> = indices.iter().map(|&i| &self.originals[i]).collect();
        let fake: Vec<&FaceImage> = indices.iter().map(|&i| &self.fakes[i]).collect();
        let dim = self.reference_ids.first().map_or(0, Vec::len);
        let mut ids = Matrix::zeros(indices.len(), dim);
        for (r, &i) in indices.iter().enumerate() {
            for (dst, &v) in ids.row_mut(r).iter_mut().zip(&self.reference_ids[i]) {
                *dst = T::lit(v as f64);
            }
        }
        BatchTensors {
            originals: images_to_map(&ori),
            fakes: images_to_map(&fake),
            reference_ids: ids,
        }
    }
}

/// Shuffled order of the training set for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One Adam update on a batch.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    batch: &BatchTensors<f32>,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let (breakdown, grads) = loss_and_grad(params, batch, &config.loss(), true)?;
    let grads = grads.expect("gradient requested");
    state.apply(params, &grads, &config.adam());
    if let Some(p) = params
        .params()
        .into_iter()
        .find(|p| p.data.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::numeric(
            format!("parameter `{}`", p.name),
            "non-finite after update",
        ));
    }
    Ok(breakdown)
}

/// Where and how often a run persists its state.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    /// Stop after this many epochs of the current invocation.
    pub stop_after: Option<usize>,
}

/// Stateful trainer; its state is exactly what a checkpoint records.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    pub epoch: usize,
    pub step: u64,
    pub log: TrainLog,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = init_params(model, derive_seed(config.seed, "init"))?;
        let adam = AdamState::new(&params);
        Ok(Self {
            config,
            params,
            adam,
            epoch: 0,
            step: 0,
            log: TrainLog::default(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.train_config.validate()?;
        Ok(Self {
            config: ck.train_config,
            params: ck.params,
            adam: ck.adam,
            epoch: ck.epoch,
            step: ck.step,
            log: TrainLog::default(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: RngState {
                seed: self.config.seed,
                next_epoch: self.epoch,
            },
            train_config: self.config.clone(),
        }
    }

    pub fn done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Runs one epoch and appends its records to the log.
    pub fn run_epoch(&mut self, data: &TrainingSet) -> Result<EpochRecord> {
        if data.is_empty() {
            return Err(Error::config("training split is empty"));
        }
        let started = Instant::now();
        let order = epoch_order(self.config.seed, self.epoch, data.len());
        let first = self.log.steps.len();
        for chunk in order.chunks(self.config.batch_size) {
            let batch = data.batch::<f32>(chunk);
            let breakdown = train_step(&mut self.params, &mut self.adam, &batch, &self.config)?;
            self.step += 1;
            self.log.steps.push(StepRecord {
                step: self.step,
                epoch: self.epoch,
                loss: breakdown,
            });
        }
        let record = EpochRecord::aggregate(self.epoch, &self.log.steps[first..]);
        self.log.epochs.push(record.clone());
        self.log.wall_clock_s.push(started.elapsed().as_secs_f64());
        self.epoch += 1;
        Ok(record)
    }

    /// Trains until the configured epoch count (or `out.stop_after`),
    /// streaming step records and writing checkpoints on schedule.
    pub fn fit(&mut self, data: &TrainingSet, out: &RunOutputs) -> Result<()> {
        let start_epoch = self.epoch;
        let mut writer = match &out.log_path {
            Some(p) => Some(log::LogWriter::append(p)?),
            None => None,
        };
        while !self.done() {
            if out.stop_after.is_some_and(|n| self.epoch - start_epoch >= n) {
                break;
            }
            let first = self.log.steps.len();
            let rec = self.run_epoch(data)?;
            if let Some(w) = writer.as_mut() {
                w.write_steps(&self.log.steps[first..])?;
                w.write_epoch(&rec)?;
            }
            ::log::info!("epoch {} total {:.6}", rec.epoch + 1, rec.mean.total);
            if let Some(dir) = &out.checkpoint_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.epoch.is_multiple_of(every) || self.done() {
                    self.save_checkpoints(dir)?;
                }
            }
        }
        if let Some(dir) = &out.checkpoint_dir {
            self.save_checkpoints(dir)?;
        }
        Ok(())
    }

    fn save_checkpoints(&self, dir: &Path) -> Result<()> {
        let ck = self.checkpoint();
        ck.save(&dir.join(format!("epoch_{:04}.safetensors", self.epoch)))?;
        ck.save(&dir.join("latest.safetensors"))
    }
}
