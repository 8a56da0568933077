use std::path::{Path, PathBuf};

use clap::ValueEnum;
use pat_core::kspace::{SimConfig, SimGrid, BOUNDARY_VERSION, DEFAULT_CFL, DEFAULT_PAD};
use pat_core::models::{MappingConfig, ModelConfig, UNetConfig, Variant};
use pat_core::phantom::{DatasetSizes, DEFAULT_JITTER, PHANTOM_VERSION};
use pat_core::trainer::{GammaCase, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// m = 32, 64/8/16 phantoms, 5000 iterations.
    Desk,
    /// m = 64, 2048/128/512 phantoms, 102400 iterations.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub phantom: PhantomSection,
    pub kspace: KspaceSection,
    pub model: ModelSection,
    pub trainer: TrainerSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    pub m: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KspaceSection {
    pub pad: usize,
    pub cfl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub levels: usize,
    pub base_channels: usize,
    pub hidden: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub gamma_case: GammaCase,
    pub batch_size: usize,
    pub lr_linear: f64,
    pub lr_unet: f64,
    pub lr_mlp: f64,
    pub max_iterations: usize,
    pub eval_interval: usize,
}

/// Everything that determines the cached phantoms and boundary records.
#[derive(Serialize)]
struct CacheKey<'a> {
    phantom_format: u32,
    boundary_format: u32,
    seed: u64,
    gamma_case: GammaCase,
    phantom: &'a PhantomSection,
    kspace: &'a KspaceSection,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let train = TrainConfig::default();
        let (m, sizes, iterations, eval_interval) = match profile {
            Profile::Desk => (32, DatasetSizes::DESK, 5000, 250),
            Profile::Full => (64, DatasetSizes::FULL, 102_400, 1024),
        };
        let unet = UNetConfig::default();
        Self {
            seed: train.seed,
            output_dir: PathBuf::from("runs"),
            cache_dir: PathBuf::from("cache"),
            phantom: PhantomSection {
                m,
                train: sizes.train,
                validation: sizes.validation,
                test: sizes.test,
                jitter: DEFAULT_JITTER,
            },
            kspace: KspaceSection {
                pad: DEFAULT_PAD,
                cfl: DEFAULT_CFL,
            },
            model: ModelSection {
                variant: Variant::Dense,
                levels: unet.levels,
                base_channels: unet.base_channels,
                hidden: MappingConfig::new(0.0, 0.0).hidden,
            },
            trainer: TrainerSection {
                gamma_case: train.gamma_case,
                batch_size: train.batch_size,
                lr_linear: train.lr_linear,
                lr_unet: train.lr_unet,
                lr_mlp: train.lr_mlp,
                max_iterations: iterations,
                eval_interval,
            },
        }
    }

    /// Profile defaults overlaid with the keys present in `path`.
    pub fn load(profile: Profile, path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut base = toml::Table::try_from(Self::profile(profile)).expect("profile serialises");
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let user: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
            merge(&mut base, user);
        }
        let mut config: Self = toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| CliError::Config {
            path: path.map_or_else(|| PathBuf::from("<profile>"), Path::to_path_buf),
            reason: e.to_string(),
        })?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.sizes_checked()?;
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.sim()?;
        if !(self.phantom.jitter >= 0.0) {
            return Err(CliError::invalid("phantom.jitter must be non-negative"));
        }
        Ok(())
    }

    fn sizes_checked(&self) -> Result<DatasetSizes> {
        let s = self.sizes();
        if s.train == 0 || s.validation == 0 || s.test == 0 {
            return Err(CliError::invalid("every split needs at least one phantom"));
        }
        Ok(s)
    }

    pub fn sizes(&self) -> DatasetSizes {
        DatasetSizes {
            train: self.phantom.train,
            validation: self.phantom.validation,
            test: self.phantom.test,
        }
    }

    pub fn gamma(&self) -> GammaCase {
        self.trainer.gamma_case
    }

    /// Grid and schedule; the time step is sized for the fastest speed of
    /// the configured law.
    pub fn sim(&self) -> Result<(SimGrid, SimConfig)> {
        let grid = SimGrid::new(self.phantom.m, self.kspace.pad)?;
        let sim = SimConfig::with_cfl(&grid, self.gamma().max_speed_sq().sqrt(), self.kspace.cfl)?;
        Ok((grid, sim))
    }

    pub fn model_config(&self) -> ModelConfig {
        let gamma = self.gamma();
        ModelConfig {
            m: self.phantom.m,
            variant: self.model.variant,
            unet: UNetConfig {
                levels: self.model.levels,
                base_channels: self.model.base_channels,
            },
            mapping: MappingConfig {
                c0: gamma.c0(),
                c1: gamma.c1(),
                hidden: self.model.hidden.clone(),
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.trainer;
        TrainConfig {
            gamma_case: t.gamma_case,
            m: self.phantom.m,
            batch_size: t.batch_size,
            lr_linear: t.lr_linear,
            lr_unet: t.lr_unet,
            lr_mlp: t.lr_mlp,
            max_iterations: t.max_iterations,
            eval_interval: t.eval_interval,
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hex digest of the resolved configuration.
    pub fn hash(&self) -> String {
        digest(self.to_toml().as_bytes())
    }

    /// Directory holding this configuration's phantoms and records.
    pub fn cache_path(&self) -> PathBuf {
        self.cache_dir.join(&digest(self.cache_key_text().as_bytes())[..16])
    }

    /// Canonical text of the settings the cache depends on.
    pub fn cache_key_text(&self) -> String {
        let key = CacheKey {
            phantom_format: PHANTOM_VERSION,
            boundary_format: BOUNDARY_VERSION,
            seed: self.seed,
            gamma_case: self.gamma(),
            phantom: &self.phantom,
            kspace: &self.kspace,
        };
        toml::to_string(&key).expect("cache key serialises")
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Recursive table overlay; values in `top` win.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_valid() {
        for p in [Profile::Desk, Profile::Full] {
            ExperimentConfig::profile(p).validate().unwrap();
        }
        let full = ExperimentConfig::profile(Profile::Full);
        assert_eq!(full.sizes().total(), 2688);
        assert_eq!(ExperimentConfig::profile(Profile::Desk).sizes().total(), 88);
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::profile(Profile::Desk);
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overlay_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[trainer]\nmax_iterations = 7\n").unwrap();
        let c = ExperimentConfig::load(Profile::Desk, Some(&path), Some(3)).unwrap();
        assert_eq!(c.trainer.max_iterations, 7);
        assert_eq!(c.trainer.eval_interval, 250);
        assert_eq!(c.seed, 3);
        std::fs::write(&path, "[trainer]\nmax_iteration = 7\n").unwrap();
        assert!(ExperimentConfig::load(Profile::Desk, Some(&path), None).is_err());
        std::fs::write(&path, "extra = 1\n").unwrap();
        assert!(ExperimentConfig::load(Profile::Desk, Some(&path), None).is_err());
    }

    #[test]
    fn cache_path_ignores_training_settings() {
        let a = ExperimentConfig::profile(Profile::Desk);
        let mut b = a.clone();
        b.trainer.max_iterations = 1;
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.cache_path(), b.cache_path());
        b.trainer.gamma_case = GammaCase::Gamma3;
        assert_ne!(a.cache_path(), b.cache_path());
        assert_ne!(a.hash(), b.hash());
    }
}
