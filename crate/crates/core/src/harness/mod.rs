//! Plumbing that makes every stage runnable without a trained network:
//! JSON file formats, the combined configuration file, a synthetic scene
//! generator and an oracle predictor that fabricates prediction grids from
//! ground truth.

mod formats;
mod oracle;
mod pipeline;
mod synth;

pub use formats::{
    read_sidecar, write_sidecar, DatasetFile, DatasetImage, DetectionFile, ImageDetections, ImagePredictions,
    PredictionFile, SignRecord, View,
};
pub use oracle::{crop_resize_views, oracle_predict, oracle_predict_crop_resize, oracle_predict_image};
pub use pipeline::detect_file;
pub use synth::{generate_synthetic_dataset, generate_synthetic_image, render_image, OracleConfig};

use serde::{Deserialize, Serialize};

use crate::anchors::GridSpec;
use crate::augment::AugmentConfig;
use crate::detector::DetectorConfig;
use crate::error::Result;
use crate::evalkit::EvalConfig;
use crate::mapsim::SimScene;
use crate::refine::RefineConfig;

/// Everything a CLI run can be configured with. Missing sections take their
/// defaults, so `{}` is a valid configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid_spec: GridSpec,
    pub oracle: OracleConfig,
    pub detector: DetectorConfig,
    pub eval: EvalConfig,
    pub augment: AugmentConfig,
    pub refine: RefineConfig,
    pub mapsim: SimScene,
}

impl Config {
    pub fn from_json(s: &str) -> Result<Config> {
        let cfg: Config = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_spec.validate()?;
        self.oracle.validate()?;
        self.eval.validate()?;
        self.augment.validate()?;
        self.refine.validate()?;
        self.mapsim.validate()
    }

    /// Apply a global seed override to every randomized section.
    pub fn with_seed(mut self, seed: u64) -> Config {
        self.oracle.rng_seed = seed;
        self.augment.rng_seed = seed;
        self.mapsim.seed = seed;
        self
    }
}
