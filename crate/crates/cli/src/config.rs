use std::path::Path;

use clap::ValueEnum;
use fedransom::corpus::{SizeRange, DEFAULT_MAX_SIZE, DEFAULT_MIN_SIZE};
use fedransom::fedavg::FedConfig;
use fedransom::nn::TrainConfig;
use serde::Deserialize;

use crate::args::{Common, FedFlags, ModelFlags};
use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "FEDRANSOM_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size defaults: side 300, batch 64, 10 epochs; 3 clients x 30 rounds x 30 local epochs.
    Full,
    /// Side 64, batch 16, 10 rounds x 3 local epochs.
    Desk,
}

struct PresetValues {
    side: usize,
    batch_size: usize,
    epochs: usize,
    n_clients: usize,
    n_rounds: u32,
    local_epochs: usize,
    n_per_class: usize,
}

impl Preset {
    fn values(self) -> PresetValues {
        let full = PresetValues {
            side: 300,
            batch_size: 64,
            epochs: 10,
            n_clients: 3,
            n_rounds: 30,
            local_epochs: 30,
            n_per_class: 300,
        };
        match self {
            Preset::Full => full,
            Preset::Desk => PresetValues {
                side: 64,
                batch_size: 16,
                n_rounds: 10,
                local_epochs: 3,
                ..full
            },
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub synth: SynthSection,
    pub train: TrainSection,
    pub fed: FedSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_per_class: Option<usize>,
    pub min_size: Option<usize>,
    pub max_size: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub side: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f32>,
    pub dropout_rate: Option<f32>,
    pub seed: Option<u64>,
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedSection {
    pub clients: Option<usize>,
    pub rounds: Option<u32>,
    pub local_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f32>,
    pub label_skew: Option<f32>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| CliError::ConfigFile {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

/// Settings resolved in order: flag, config file, preset, built-in default.
pub struct Layers {
    common: Common,
    file: FileConfig,
    preset: PresetValues,
    env_seed: Option<u64>,
}

impl Layers {
    pub fn new(common: &Common) -> CliResult<Self> {
        let file = match &common.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let preset = common.preset.or(file.preset).unwrap_or(Preset::Full).values();
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
            ),
            Err(_) => None,
        };
        Ok(Self {
            common: common.clone(),
            file,
            preset,
            env_seed,
        })
    }

    fn seed(&self, section: Option<u64>) -> u64 {
        self.common
            .seed
            .or(section)
            .or(self.file.seed)
            .or(self.env_seed)
            .unwrap_or(0)
    }

    pub fn synth(&self, n_per_class: Option<usize>, min: Option<usize>, max: Option<usize>) -> (usize, SizeRange, u64) {
        let s = &self.file.synth;
        let sizes = SizeRange {
            min: min.or(s.min_size).unwrap_or(DEFAULT_MIN_SIZE),
            max: max.or(s.max_size).unwrap_or(DEFAULT_MAX_SIZE),
        };
        let n = n_per_class.or(s.n_per_class).unwrap_or(self.preset.n_per_class);
        (n, sizes, self.seed(s.seed))
    }

    /// Centralized training settings plus the shuffle/dropout seed.
    pub fn train(
        &self,
        m: &ModelFlags,
        epochs: Option<usize>,
        shuffle_seed: Option<u64>,
    ) -> CliResult<(TrainConfig, u64)> {
        let t = &self.file.train;
        let defaults = TrainConfig::default();
        let seed = self.seed(t.seed);
        let config = TrainConfig {
            side: m.side.or(t.side).unwrap_or(self.preset.side),
            epochs: epochs.or(t.epochs).unwrap_or(self.preset.epochs),
            batch_size: m.batch.or(t.batch_size).unwrap_or(self.preset.batch_size),
            learning_rate: m.lr.or(t.learning_rate).unwrap_or(defaults.learning_rate),
            dropout_rate: m.dropout.or(t.dropout_rate).unwrap_or(defaults.dropout_rate),
            seed,
        };
        config.validate().map_err(CliError::core("invalid training settings"))?;
        Ok((config, shuffle_seed.or(t.shuffle_seed).unwrap_or(seed)))
    }

    /// Federation settings and the model-shape settings that go with them.
    pub fn fed(&self, m: &ModelFlags, f: &FedFlags) -> CliResult<(FedConfig, TrainConfig)> {
        let fs = &self.file.fed;
        let t = &self.file.train;
        let defaults = FedConfig::default();
        let fed = FedConfig {
            n_clients: f.clients.or(fs.clients).unwrap_or(self.preset.n_clients),
            n_rounds: f.rounds.or(fs.rounds).unwrap_or(self.preset.n_rounds),
            local_epochs: f.local_epochs.or(fs.local_epochs).unwrap_or(self.preset.local_epochs),
            batch_size: m.batch.or(fs.batch_size).unwrap_or(self.preset.batch_size),
            learning_rate: m.lr.or(fs.learning_rate).unwrap_or(defaults.learning_rate),
            seed: self.seed(fs.seed),
            label_skew: f.label_skew.or(fs.label_skew).unwrap_or(defaults.label_skew),
        };
        fed.validate().map_err(CliError::core("invalid federation settings"))?;
        let train = TrainConfig {
            side: m.side.or(t.side).unwrap_or(self.preset.side),
            dropout_rate: m
                .dropout
                .or(t.dropout_rate)
                .unwrap_or(TrainConfig::default().dropout_rate),
            ..TrainConfig::default()
        };
        let local = fed.local_config(&train);
        local.validate().map_err(CliError::core("invalid training settings"))?;
        Ok((fed, local))
    }
}
