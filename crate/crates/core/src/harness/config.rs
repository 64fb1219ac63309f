use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::estimators::{Method, NetShape, TrainConfig};
use crate::metrics::{DEFAULT_GRID_INTERVALS, EVAL_SEED_OFFSET};
use crate::sim::GroundTruthModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Single,
    Convergence,
    Robustness,
}

/// Which closed-form model generates the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Benchmark,
    /// Periodic baseline, equal constant type intensities, fair marks.
    Symmetric,
    /// Unit baseline and this constant intensity per type.
    Constant(f64),
}

impl ModelChoice {
    pub fn build(self) -> GroundTruthModel {
        match self {
            ModelChoice::Benchmark => GroundTruthModel::benchmark(),
            ModelChoice::Symmetric => GroundTruthModel::symmetric(),
            ModelChoice::Constant(rate) => GroundTruthModel::constant(rate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelChoice,
    pub horizons: Vec<f64>,
    pub replications: usize,
    pub n_layers: Vec<usize>,
    pub widths: Vec<usize>,
    pub methods: Vec<Method>,
    pub train: TrainConfig,
    pub grid_intervals: usize,
    pub out_dir: PathBuf,
    pub base_seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Write a checkpoint bundle for every fit.
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let shape = NetShape::default();
        Self {
            kind: ExperimentKind::Convergence,
            model: ModelChoice::Benchmark,
            horizons: vec![1000.0, 2000.0, 4000.0, 8000.0, 16000.0],
            replications: 5,
            n_layers: vec![shape.n_layers],
            widths: vec![shape.width],
            methods: vec![Method::OneStep, Method::TwoStep],
            train: TrainConfig::default(),
            grid_intervals: DEFAULT_GRID_INTERVALS,
            out_dir: PathBuf::from("out"),
            base_seed: 0,
            workers: 0,
            save_models: false,
        }
    }
}

impl ExperimentConfig {
    /// Robustness defaults: one horizon, the 2 x 2 shape grid.
    pub fn robustness() -> Self {
        Self {
            kind: ExperimentKind::Robustness,
            horizons: vec![8000.0],
            n_layers: vec![2, 8],
            widths: vec![16, 64],
            ..Self::default()
        }
    }

    pub fn single() -> Self {
        Self { kind: ExperimentKind::Single, horizons: vec![4000.0], replications: 1, ..Self::default() }
    }

    /// Reads a TOML document, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(invalid("horizons must be a nonempty list of positive numbers"));
        }
        if self.replications == 0 {
            return Err(invalid("replications must be >= 1"));
        }
        if self.n_layers.is_empty() || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(invalid("shape lists must be nonempty with positive widths"));
        }
        if self.methods.is_empty() {
            return Err(invalid("at least one method is required"));
        }
        if self.grid_intervals == 0 {
            return Err(invalid("grid_intervals must be >= 1"));
        }
        self.train.validate()
    }

    pub fn shapes(&self) -> Vec<NetShape> {
        self.n_layers
            .iter()
            .flat_map(|&n_layers| self.widths.iter().map(move |&width| NetShape { n_layers, width }))
            .collect()
    }

    pub fn train_seed(&self, replication: usize) -> u64 {
        self.base_seed + replication as u64
    }

    pub fn eval_seed(&self, replication: usize) -> u64 {
        self.train_seed(replication) + EVAL_SEED_OFFSET
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_documents() {
        let config = ExperimentConfig::robustness();
        let text = config.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.hash(), config.hash());

        let partial: ExperimentConfig = toml::from_str("kind = \"single\"\nhorizons = [100.0]\n[train]\nmax_epochs = 3\n").unwrap();
        assert_eq!(partial.kind, ExperimentKind::Single);
        assert_eq!(partial.train.max_epochs, 3);
        assert_eq!(partial.train.batch_size, 512);
        assert_eq!(partial.replications, 5);
    }

    #[test]
    fn seeds_and_validation() {
        let config = ExperimentConfig { base_seed: 40, ..ExperimentConfig::default() };
        assert_eq!(config.train_seed(2), 42);
        assert_eq!(config.eval_seed(2), 1_000_042);
        assert!(ExperimentConfig { horizons: vec![0.0], ..config.clone() }.validate().is_err());
        assert!(ExperimentConfig { replications: 0, ..config.clone() }.validate().is_err());
        assert_ne!(ExperimentConfig { base_seed: 41, ..config.clone() }.hash(), config.hash());
        assert_eq!(ExperimentConfig::robustness().shapes().len(), 4);
    }
}
