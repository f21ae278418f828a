//! Run configuration file: `[data]`, `[model]`, `[train]`, `[identity]` and
//! `[eval]` sections, TOML, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{NamingConvention, SyntheticSpec};
use crate::error::{Error, Result};
use crate::identity::{load_or_builtin, IdentityBackbone};
use crate::model::ModelConfig;
use crate::training::{derive_seed, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Manifest consumed by `train` and `eval`.
    pub manifest: Option<PathBuf>,
    /// Seed of the train/test split drawn by `prepare`.
    pub split_seed: u64,
    pub test_fraction: f64,
    /// Frame sampling interval in seconds.
    pub interval: f64,
    pub convention: String,
    pub synthetic: SyntheticSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            manifest: None,
            split_seed: 0,
            test_fraction: 0.1,
            interval: 1.0,
            convention: "celebdf".into(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

/// A frozen recognizer: external weights if present, else the built-in
/// stand-in with `seed`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSection {
    pub weights: Option<PathBuf>,
    pub seed: u64,
    /// Defaults to the identity dimension (supervision) or 128 (evaluation).
    pub output_dim: Option<usize>,
    /// Defaults to the model resolution.
    pub resolution: Option<usize>,
    pub normalize_output: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentitySection {
    pub supervision: BackboneSection,
    pub evaluation: BackboneSection,
}

impl Default for IdentitySection {
    fn default() -> Self {
        Self {
            supervision: BackboneSection {
                weights: None,
                seed: 1,
                output_dim: None,
                resolution: None,
                normalize_output: false,
            },
            evaluation: BackboneSection {
                weights: None,
                seed: 2,
                output_dim: Some(128),
                resolution: None,
                normalize_output: true,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Row label in the summary table.
    pub dataset: String,
    /// Rows in the comparison grid; 0 disables it.
    pub grid: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            grid: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    /// Top-level seed. When set, every per-module seed is derived from it.
    pub seed: Option<u64>,
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub identity: IdentitySection,
    pub eval: EvalSection,
}

impl RunConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies seed derivation and defaults that depend on other sections,
    /// then validates.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(s) = self.seed {
            self.data.synthetic.seed = derive_seed(s, "synthetic");
            self.data.split_seed = derive_seed(s, "split");
            self.train.seed = derive_seed(s, "train");
            self.identity.supervision.seed = derive_seed(s, "supervision");
            self.identity.evaluation.seed = derive_seed(s, "evaluation");
        }
        let r = self.model.resolution;
        let sup = &mut self.identity.supervision;
        sup.output_dim.get_or_insert(self.model.id_dim);
        sup.resolution.get_or_insert(r);
        let ev = &mut self.identity.evaluation;
        ev.output_dim.get_or_insert(128);
        ev.resolution.get_or_insert(r);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.synthetic.validate()?;
        self.convention()?;
        if !(0.0..=1.0).contains(&self.data.test_fraction) {
            return Err(Error::config(format!(
                "data.test_fraction must lie in [0, 1], got {}",
                self.data.test_fraction
            )));
        }
        if !(self.data.interval.is_finite() && self.data.interval > 0.0) {
            return Err(Error::config("data.interval must be > 0"));
        }
        if let Some(d) = self.identity.supervision.output_dim {
            if d != self.model.id_dim {
                return Err(Error::config(format!(
                    "supervision embeddings have {d} dims but model.id_dim is {}",
                    self.model.id_dim
                )));
            }
        }
        Ok(())
    }

    pub fn convention(&self) -> Result<NamingConvention> {
        self.data.convention.parse()
    }

    fn backbone(b: &BackboneSection, dim: usize, res: usize) -> Result<IdentityBackbone> {
        load_or_builtin(
            b.weights.as_deref(),
            b.seed,
            b.output_dim.unwrap_or(dim),
            b.resolution.unwrap_or(res),
            b.normalize_output,
        )
    }

    pub fn supervisor(&self) -> Result<IdentityBackbone> {
        Self::backbone(&self.identity.supervision, self.model.id_dim, self.model.resolution)
    }

    pub fn evaluator(&self) -> Result<IdentityBackbone> {
        Self::backbone(&self.identity.evaluation, 128, self.model.resolution)
    }

    /// Writes the resolved configuration next to a run's outputs.
    pub fn archive(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("resolved_config.toml");
        std::fs::write(&p, self.to_toml()).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfigFile::from_toml("[train]\nlearnig_rate = 0.1\n").is_err());
        assert!(RunConfigFile::from_toml("[bogus]\n").is_err());
        let c = RunConfigFile::from_toml("[train]\nlearning_rate = 0.1\n").unwrap();
        assert_eq!(c.train.learning_rate, 0.1);
        assert_eq!(c.train.batch_size, 32);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfigFile {
            seed: Some(5),
            ..RunConfigFile::default()
        }
        .resolve()
        .unwrap();
        assert_ne!(c.train.seed, c.data.synthetic.seed);
        assert_ne!(c.identity.supervision.seed, c.identity.evaluation.seed);
        let back = RunConfigFile::from_toml(&c.to_toml()).unwrap().resolve().unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn cross_section_checks() {
        let mut c = RunConfigFile::default();
        c.identity.supervision.output_dim = Some(3);
        assert_eq!(c.resolve().unwrap_err().kind(), crate::ErrorKind::Config);
        let mut c = RunConfigFile::default();
        c.data.synthetic.n_identities = 1;
        assert!(c.resolve().is_err());
    }
}
