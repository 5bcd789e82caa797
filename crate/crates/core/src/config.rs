//! Experiment configuration: one TOML document with a section per stage,
//! plus a set of named presets compiled into the library.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_binary, stratified_split, MultimodalDataset, Split, SynthConfig};
use crate::error::{Error, Result};
use crate::inference::{ClassifierPlan, Combine};
use crate::losses::LossConfig;
use crate::mining::MiningConfig;
use crate::model::AutoencoderConfig;
use crate::training::{derive_seed, MappingPlan, TrainingPlan, TripletSensor};
use crate::translation::RegressorPlan;

const PRESETS: &[(&str, &str)] = &[
    ("neon", include_str!("../presets/neon.toml")),
    ("muufl-classify", include_str!("../presets/muufl-classify.toml")),
    ("muufl-translate", include_str!("../presets/muufl-translate.toml")),
    ("berlin", include_str!("../presets/berlin.toml")),
    ("synth", include_str!("../presets/synth.toml")),
    ("synth-quick", include_str!("../presets/synth-quick.toml")),
];

// Seed purposes beyond those used inside training.
const SEED_SPLIT: u64 = 3;
const SEED_INIT: u64 = 4;
const SEED_HEADS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// MMDS1 file; ignored when the command line names a dataset.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SynthConfig>,
    /// The triplet pair: sensor A, then sensor B.
    pub sensors: [String; 2],
    /// Sensor mapped onto the frozen manifold afterwards.
    #[serde(default)]
    pub extra_sensor: Option<String>,
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub n_checkpoints: usize,
    pub epochs_per_checkpoint: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub triplet_sensor: TripletSensor,
    #[serde(default = "default_silhouette_limit")]
    pub silhouette_limit: usize,
}

fn default_silhouette_limit() -> usize {
    4000
}

fn default_networks() -> usize {
    3
}

fn default_sweep() -> Vec<usize> {
    vec![1, 3, 5, 9, 15, 21, 35, 51]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySection {
    pub k: usize,
    #[serde(default = "default_sweep")]
    pub sweep: Vec<usize>,
    /// Networks in the ensemble, each from its own initialization.
    #[serde(default = "default_networks")]
    pub networks: usize,
    #[serde(default)]
    pub combine: Combine,
    pub network: ClassifierPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateSection {
    /// Sensor whose codes are observed.
    pub available: String,
    /// Sensor whose codes and data are predicted.
    pub missing: String,
    pub regressor: RegressorPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub loss: LossConfig,
    pub mining: MiningConfig,
    pub training: TrainingSection,
    pub classify: ClassifySection,
    pub translate: TranslateSection,
    pub mapping: MappingPlan,
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("experiment config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            Error::config(format!("unknown preset {name}; known: {}", preset_names().join(", ")))
        })?;
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b] = &self.data.sensors;
        if a == b {
            return Err(Error::config(format!("triplet pair names sensor {a} twice")));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train_fraction {} outside (0, 1)",
                self.data.train_fraction
            )));
        }
        if self.model.latent_dim == 0 {
            return Err(Error::config("latent_dim must be positive"));
        }
        if self.classify.k == 0 || self.classify.sweep.contains(&0) {
            return Err(Error::config("k must be at least 1"));
        }
        if self.translate.available == self.translate.missing {
            return Err(Error::config("translation needs two different sensors"));
        }
        if let Some(s) = &self.data.synthetic {
            s.validate()?;
        }
        self.classify.network.schedule.validate()?;
        self.translate.regressor.schedule.validate()?;
        self.training_plan().validate()
    }

    pub fn training_plan(&self) -> TrainingPlan {
        TrainingPlan {
            n_checkpoints: self.training.n_checkpoints,
            epochs_per_checkpoint: self.training.epochs_per_checkpoint,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
            triplet_sensor: self.training.triplet_sensor,
            seed: self.seed,
            loss: self.loss,
            mining: self.mining.clone(),
            silhouette_limit: self.training.silhouette_limit,
        }
    }

    /// Autoencoder shape for a sensor of width `input_dim`.
    pub fn autoencoder(&self, sensor_id: &str, input_dim: usize) -> AutoencoderConfig {
        AutoencoderConfig::new(sensor_id, input_dim, self.model.latent_dim).with_hidden(&self.model.hidden)
    }

    /// Initialization seed of the autoencoder with position `slot`.
    pub fn init_seed(&self, slot: u64) -> u64 {
        derive_seed(self.seed, SEED_INIT, slot)
    }

    /// Training schedule of ensemble network `member`.
    pub fn network_plan(&self, member: usize) -> ClassifierPlan {
        let mut plan = self.classify.network.clone();
        plan.schedule.seed = derive_seed(self.seed, SEED_HEADS, member as u64);
        plan
    }

    pub fn regressor_plan(&self) -> RegressorPlan {
        let mut plan = self.translate.regressor.clone();
        plan.schedule.seed = derive_seed(self.seed, SEED_HEADS, 1 << 16);
        plan
    }

    pub fn mapping_plan(&self) -> MappingPlan {
        MappingPlan {
            seed: derive_seed(self.seed, SEED_HEADS, 1 << 17),
            ..self.mapping.clone()
        }
    }

    /// The configured dataset; `path` takes precedence over the config.
    pub fn dataset(&self, path: Option<&Path>) -> Result<MultimodalDataset> {
        match (path.or(self.data.path.as_deref()), &self.data.synthetic) {
            (Some(p), _) => load_binary(p),
            (None, Some(s)) => generate_synthetic(s),
            (None, None) => Err(Error::config("no dataset: set data.path, data.synthetic, or --dataset")),
        }
    }

    pub fn split(&self, dataset: &MultimodalDataset) -> Result<Split> {
        stratified_split(dataset.labels(), self.data.train_fraction, derive_seed(self.seed, SEED_SPLIT, 0))
    }
}
