use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::derive_seed;
use crate::scoring::ScoreVariant;
use crate::seqmodel::{ModelConfig, Precision, TrainConfig};
use crate::synthgen::{InjectionKind, InjectionParams, InjectionSpec, PopulationConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "data".into(),
            checkpoint: "model.ckpt".into(),
            report_dir: "report".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_agents: u32,
    pub n_days: u32,
    /// Weeks ratio train : validation : test.
    pub split: [u32; 3],
    pub n_poi: u32,
    pub city_km: f64,
    /// Write a GPS track and tokenize from it instead of the generated events.
    pub from_gps: bool,
    pub min_dwell: f64,
    pub stay_radius: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_agents: 100,
            n_days: 56,
            split: [3, 1, 4],
            n_poi: 40,
            city_km: 20.0,
            from_gps: false,
            min_dwell: 5.0,
            stay_radius: 0.1,
        }
    }
}

impl DataConfig {
    pub fn population(&self) -> PopulationConfig {
        PopulationConfig {
            n_poi: self.n_poi,
            city_km: self.city_km,
            split_ratio: self.split,
            ..PopulationConfig::default()
        }
    }
}

/// Training settings; the seed comes from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub chunk: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: 32,
            learning_rate: 2e-3,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm,
            chunk: t.chunk,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    /// Monte Carlo passes; defaults to the model's `mc_samples`.
    pub mc_passes: Option<usize>,
    /// Variant written as the event score.
    pub variant: ScoreVariant,
    /// Variants evaluated by the detection table.
    pub variants: Vec<ScoreVariant>,
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection {
            mc_passes: None,
            variant: ScoreVariant::LossKnn,
            variants: ScoreVariant::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionEntry {
    pub kind: InjectionKind,
    pub agent_fraction: f64,
    /// Defaults to a seed derived from the run seed.
    #[serde(default)]
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub params: InjectionParams,
}

/// Everything a pipeline run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default, rename = "injection")]
    pub injections: Vec<InjectionEntry>,
}

/// Named sub-seeds of the run seed.
pub mod streams {
    pub const POPULATION: u64 = 1;
    pub const INJECTION: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const SCORE: u64 = 4;
    pub const REPORT: u64 = 5;
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_config().validate()?;
        let d = &self.data;
        if d.n_agents == 0 || d.n_days < 7 {
            return Err(Error::Config("data needs at least one agent and seven days".into()));
        }
        if (self.model.n_poi as u32) < d.n_poi {
            return Err(Error::Config(format!(
                "model.n_poi = {} is smaller than data.n_poi = {}",
                self.model.n_poi, d.n_poi
            )));
        }
        if !(d.min_dwell > 0.0 && d.stay_radius > 0.0) {
            return Err(Error::Config("min_dwell and stay_radius must be positive".into()));
        }
        if self.mc_passes() == 0 {
            return Err(Error::Config("score.mc_passes must be positive".into()));
        }
        crate::synthgen::Split::from_ratio(d.n_days, d.split)?;
        for (i, spec) in self.injection_specs().iter().enumerate() {
            if !(spec.agent_fraction > 0.0 && spec.agent_fraction <= 1.0) {
                return Err(Error::Config(format!("injection {i}: agent_fraction must lie in (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm,
            seed: self.stream(streams::TRAIN),
            chunk: t.chunk,
        }
    }

    pub fn mc_passes(&self) -> usize {
        self.score.mc_passes.unwrap_or(self.model.mc_samples)
    }

    pub fn stream(&self, id: u64) -> u64 {
        derive_seed(self.seed, &[id])
    }

    pub fn injection_specs(&self) -> Vec<InjectionSpec> {
        self.injections
            .iter()
            .enumerate()
            .map(|(i, e)| InjectionSpec {
                kind: e.kind,
                agent_fraction: e.agent_fraction,
                rng_seed: e
                    .rng_seed
                    .unwrap_or_else(|| derive_seed(self.stream(streams::INJECTION), &[i as u64])),
                params: e.params.clone(),
            })
            .collect()
    }
}
