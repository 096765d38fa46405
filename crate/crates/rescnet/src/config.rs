//! TOML run configuration: dataset selection, filter bank settings,
//! feature pooling, and training hyperparameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::filter_bank::{FilterKind, DEFAULT_MAX_PATCHES};
use crate::lda::{PosteriorTransform, DEFAULT_SIGMOID_SCALE, DEFAULT_SOFTMAX_BETA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
    Folder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankKindKey {
    Pca,
    StackedLda,
    Mixed,
}

impl From<BankKindKey> for FilterKind {
    fn from(k: BankKindKey) -> FilterKind {
        match k {
            BankKindKey::Pca => FilterKind::Pca,
            BankKindKey::StackedLda => FilterKind::StackedLda,
            BankKindKey::Mixed => FilterKind::Mixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKey {
    Sigmoid,
    Softmax,
}

fn default_train_limit() -> usize {
    0
}

fn default_folder_root() -> String {
    String::new()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dataset: DatasetKind,
    #[serde(default)]
    pub augment_hflip: bool,
    /// 0 means "use everything".
    #[serde(default = "default_train_limit")]
    pub train_limit: usize,
    #[serde(default = "default_train_limit")]
    pub test_limit: usize,
    /// Folder datasets only: image roots and TSV manifests, relative to
    /// the data directory.
    #[serde(default = "default_folder_root")]
    pub train_root: String,
    #[serde(default = "default_folder_root")]
    pub train_manifest: String,
    #[serde(default = "default_folder_root")]
    pub test_root: String,
    #[serde(default = "default_folder_root")]
    pub test_manifest: String,
}

fn default_size_rest() -> usize {
    3
}

fn default_stacked_positives() -> usize {
    2
}

fn default_stacked_negatives() -> usize {
    32
}

fn default_stacked_max_attempts() -> usize {
    200
}

fn default_max_patches() -> usize {
    DEFAULT_MAX_PATCHES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiltersSection {
    pub count: usize,
    pub size_first: usize,
    #[serde(default = "default_size_rest")]
    pub size_rest: usize,
    pub kind_first: BankKindKey,
    pub kind_rest: BankKindKey,
    #[serde(default = "default_stacked_positives")]
    pub stacked_positives: usize,
    #[serde(default = "default_stacked_negatives")]
    pub stacked_negatives: usize,
    #[serde(default)]
    pub stacked_tol: f64,
    #[serde(default = "default_stacked_max_attempts")]
    pub stacked_max_attempts: usize,
    #[serde(default = "default_max_patches")]
    pub max_patches: usize,
}

fn default_pyramid() -> Vec<[usize; 2]> {
    vec![[4, 4], [2, 2], [1, 1]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    pub sop_block: [usize; 2],
    pub sop_stride: usize,
    #[serde(default = "default_pyramid")]
    pub pyramid: Vec<[usize; 2]>,
}

fn default_lambda() -> f64 {
    0.8
}

fn default_alpha0() -> f64 {
    1.0
}

fn default_lr_period() -> usize {
    10
}

fn default_sigmoid_scale() -> f64 {
    DEFAULT_SIGMOID_SCALE
}

fn default_softmax_beta() -> f64 {
    DEFAULT_SOFTMAX_BETA
}

fn default_stop_at_zero() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<f64>,
    #[serde(default = "default_lr_period")]
    pub lr_period: usize,
    #[serde(default)]
    pub lr_floor: f64,
    pub max_layers: usize,
    pub transform: TransformKey,
    #[serde(default = "default_sigmoid_scale")]
    pub sigmoid_scale: f64,
    #[serde(default = "default_softmax_beta")]
    pub softmax_beta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stop_at_zero")]
    pub stop_at_zero_train_error: bool,
    #[serde(default)]
    pub val_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataSection,
    pub filters: FiltersSection,
    pub features: FeaturesSection,
    pub train: TrainSection,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        TrainConfig::from_toml(&text)
    }

    /// Canonical rendering: same struct always serializes to the same
    /// bytes, which keeps checkpoint snapshots comparable.
    pub fn to_canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.dataset == DatasetKind::Folder {
            for (key, value) in [
                ("train_root", &self.data.train_root),
                ("train_manifest", &self.data.train_manifest),
                ("test_root", &self.data.test_root),
                ("test_manifest", &self.data.test_manifest),
            ] {
                if value.is_empty() {
                    return Err(Error::Config(format!(
                        "folder datasets require data.{key}"
                    )));
                }
            }
        }
        self.engine_config().map(|_| ())
    }

    pub fn transform(&self) -> PosteriorTransform {
        match self.train.transform {
            TransformKey::Sigmoid => PosteriorTransform::Sigmoid {
                scale: self.train.sigmoid_scale,
            },
            TransformKey::Softmax => PosteriorTransform::Softmax {
                beta: self.train.softmax_beta,
            },
        }
    }

    pub fn engine_config(&self) -> Result<EngineConfig> {
        let config = EngineConfig {
            lambda: self.train.lambda,
            alpha0: self.train.alpha0,
            lr_decay: self.train.lr_decay,
            lr_period: self.train.lr_period,
            lr_floor: self.train.lr_floor,
            max_layers: self.train.max_layers,
            filters_per_layer: self.filters.count,
            filter_size_first: self.filters.size_first,
            filter_size_rest: self.filters.size_rest,
            filter_kind_first: self.filters.kind_first.into(),
            filter_kind_rest: self.filters.kind_rest.into(),
            stacked_positives: self.filters.stacked_positives,
            stacked_negatives: self.filters.stacked_negatives,
            stacked_tol: self.filters.stacked_tol,
            stacked_max_attempts: self.filters.stacked_max_attempts,
            max_patches: self.filters.max_patches,
            sop_block: (self.features.sop_block[0], self.features.sop_block[1]),
            sop_stride: self.features.sop_stride,
            pyramid: self.features.pyramid.iter().map(|&[a, b]| (a, b)).collect(),
            transform: self.transform(),
            seed: self.train.seed,
            stop_at_zero_train_error: self.train.stop_at_zero_train_error,
            val_fraction: self.train.val_fraction,
            patience: self.train.patience,
        };
        config.validate()?;
        Ok(config)
    }
}
