use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

use super::{AdamState, TrainConfig};

/// Shuffling is a pure function of (seed, epoch), so this is the whole RNG
/// state of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub rng: RngState,
    pub train_config: TrainConfig,
}

fn bad(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub(crate) fn insert_params(c: &mut Container, params: &ModelParams, prefix: &str) {
    for p in params.params() {
        c.insert(format!("{prefix}{}", p.name), p.shape.clone(), p.data.clone());
    }
}

pub(crate) fn take_params(c: &mut Container, config: &ModelConfig, prefix: &str, path: &Path) -> Result<ModelParams> {
    let mut params = ModelParams::<f32>::zeros(config)?;
    for p in params.params_mut() {
        p.data = c.take(&format!("{prefix}{}", p.name), &p.shape, path)?;
    }
    Ok(params)
}

fn meta_field<T: for<'de> Deserialize<'de>>(meta: &serde_json::Value, key: &str, path: &Path) -> Result<T> {
    let v = meta
        .get(key)
        .ok_or_else(|| bad(path, format!("metadata lacks `{key}`")))?;
    serde_json::from_value(v.clone()).map_err(|e| bad(path, format!("metadata `{key}`: {e}")))
}

/// Reads the model configuration recorded in a checkpoint's metadata.
pub fn read_model_config(c: &Container, path: &Path) -> Result<ModelConfig> {
    let cfg: ModelConfig = meta_field(&c.metadata, "model_config", path)?;
    cfg.validate()?;
    Ok(cfg)
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        insert_params(&mut c, &self.params, "");
        insert_params(&mut c, &self.adam.first_moment, "adam.m.");
        insert_params(&mut c, &self.adam.second_moment, "adam.v.");
        c.metadata = json!({
            "tracer": "network",
            "model_config": self.params.config,
            "train_config": self.train_config,
            "epoch": self.epoch,
            "step": self.step,
            "adam_step": self.adam.step,
            "rng": self.rng,
        });
        c
    }

    pub fn from_container(mut c: Container, path: &Path) -> Result<Self> {
        let model = read_model_config(&c, path)?;
        let meta = c.metadata.clone();
        let params = take_params(&mut c, &model, "", path)?;
        let first_moment = take_params(&mut c, &model, "adam.m.", path)?;
        let second_moment = take_params(&mut c, &model, "adam.v.", path)?;
        if let Some(extra) = c.tensors.keys().next() {
            return Err(bad(path, format!("unexpected tensor `{extra}`")));
        }
        Ok(Self {
            params,
            adam: AdamState {
                first_moment,
                second_moment,
                step: meta_field(&meta, "adam_step", path)?,
            },
            epoch: meta_field(&meta, "epoch", path)?,
            step: meta_field(&meta, "step", path)?,
            rng: meta_field(&meta, "rng", path)?,
            train_config: meta_field(&meta, "train_config", path)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?, path)
    }
}

/// Loads only the network parameters from a training checkpoint.
pub fn load_params(path: &Path) -> Result<ModelParams> {
    let mut c = Container::load(path)?;
    let model = read_model_config(&c, path)?;
    take_params(&mut c, &model, "", path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{init_params, AdamState};

    fn tiny() -> ModelConfig {
        ModelConfig {
            resolution: 16,
            channels: [2, 2, 3, 3],
            id_dim: 4,
            attr_dim: 4,
            leaky_slope: 0.2,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = init_params(&tiny(), 5).unwrap();
        let mut adam = AdamState::new(&params);
        adam.step = 17;
        adam.first_moment.params_mut()[0].data[0] = 1.5e-7;
        adam.second_moment.params_mut()[1].data[0] = f32::MIN_POSITIVE;
        let ck = Checkpoint {
            params,
            adam,
            epoch: 3,
            step: 17,
            rng: RngState { seed: 9, next_epoch: 3 },
            train_config: TrainConfig {
                seed: 9,
                ..TrainConfig::default()
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.safetensors");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.params().iter().zip(ck.params.params()) {
            assert_eq!(
                a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        assert_eq!(load_params(&path).unwrap(), ck.params);
    }

    #[test]
    fn shape_mismatch_is_a_configuration_error() {
        let params = init_params(&tiny(), 5).unwrap();
        let ck = Checkpoint {
            adam: AdamState::new(&params),
            params,
            epoch: 0,
            step: 0,
            rng: RngState { seed: 0, next_epoch: 0 },
            train_config: TrainConfig::default(),
        };
        let mut c = ck.to_container();
        let mut wrong = tiny();
        wrong.channels[0] = 5;
        c.metadata["model_config"] = serde_json::to_value(&wrong).unwrap();
        let err = Checkpoint::from_container(c, Path::new("x")).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Config);
    }
}
