//! TOML run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cables::CableGeometry;
use crate::datagen::{DEFAULT_INTERP_STEP, DEFAULT_RANGES, TEST_TRANSLATIONS, TRAIN_TRANSLATIONS};
use crate::error::{domain, Error, Result};
use crate::eval::BoxTaskOptions;
use crate::kinematics::{JointLimits, SegmentParams};
use crate::plant::PlantParams;
use crate::tcn::{TcnConfig, TrainOptions};
use crate::workspace::WorkspaceOptions;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOptions {
    /// Records per training translation.
    pub n_per: usize,
    /// Records per translation in the validation split.
    pub n_valid: usize,
    pub interp_step: f64,
    /// Sampling ranges of q2..q5 (degrees).
    pub ranges: [[f64; 2]; 4],
    pub train_translations: Vec<f64>,
    pub test_translations: Vec<f64>,
    /// Length of each tracking test trajectory.
    pub test_points: usize,
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            n_per: 1000,
            n_valid: 300,
            interp_step: DEFAULT_INTERP_STEP,
            ranges: DEFAULT_RANGES,
            train_translations: TRAIN_TRANSLATIONS.to_vec(),
            test_translations: TEST_TRANSLATIONS.to_vec(),
            test_points: 900,
        }
    }
}

/// Architecture of the ensemble members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub seq_len: usize,
    pub kernel_size: usize,
    pub hidden: usize,
    pub n_models: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            seq_len: 10,
            kernel_size: 3,
            hidden: 64,
            n_models: 3,
        }
    }
}

impl ModelOptions {
    /// Joint-space configuration of ensemble member `index`.
    pub fn tcn_config(&self, seed: u64, index: usize) -> Result<TcnConfig> {
        TcnConfig::new(
            self.seq_len,
            self.kernel_size,
            7,
            self.hidden,
            7,
            model_seed(seed, index),
        )
    }
}

/// Initialization seed of ensemble member `index`.
pub fn model_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0xd134_2543_de82_ef95)
        .wrapping_add(0x100 + index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub limits: JointLimits,
    pub geometry: SegmentParams,
    pub cables: CableGeometry,
    pub workspace: WorkspaceOptions,
    pub plant: PlantParams,
    pub data: DataOptions,
    pub model: ModelOptions,
    pub train: TrainOptions,
    #[serde(rename = "box")]
    pub box_task: BoxTaskOptions,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: DEFAULT_SEED,
            limits: JointLimits::default(),
            geometry: SegmentParams::default(),
            cables: CableGeometry::default(),
            workspace: WorkspaceOptions::default(),
            plant: PlantParams::default(),
            data: DataOptions::default(),
            model: ModelOptions::default(),
            train: TrainOptions::default(),
            box_task: BoxTaskOptions::default(),
        }
    }
}

impl Config {
    pub fn from_toml(s: &str) -> Result<Self> {
        let c: Config = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Config::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Full-size dataset and training length.
    pub fn paper_scale(mut self) -> Self {
        self.data.n_per = 4955;
        self.train.epochs = 10_000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.limits.validate()?;
        self.geometry.validate()?;
        self.cables.validate()?;
        self.plant.validate()?;
        self.box_task.validate()?;
        self.model.tcn_config(self.seed, 0)?;
        if self.model.n_models == 0 {
            return Err(Error::Config("model.n_models must be at least 1".into()));
        }
        if self.data.n_per < 2 || self.data.n_valid < 2 || self.data.test_points < 2 {
            return Err(domain("dataset sizes must be at least 2"));
        }
        if self
            .data
            .train_translations
            .iter()
            .any(|t| self.data.test_translations.contains(t))
        {
            return Err(Error::Config(
                "test translations must not appear in training".into(),
            ));
        }
        if self.train.epochs == 0 || self.train.batch == 0 || !(self.train.lr > 0.0) {
            return Err(Error::Config(
                "train needs positive epochs, batch and lr".into(),
            ));
        }
        Ok(())
    }
}
