use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lmd_core::data::{generate, read_idx, Dataset, Family, SyntheticSpec};
use lmd_core::detector::DetectorConfig;
use lmd_core::diffusion::TrainConfig;
use serde::{Deserialize, Serialize};

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// IDX image file, optionally truncated to the first `limit` images.
    Idx {
        path: PathBuf,
        limit: Option<usize>,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(spec) => Ok(generate(spec)?),
            DataSource::Idx { path, limit } => {
                let ds = read_idx(path)?;
                Ok(match limit {
                    Some(n) => ds.truncate(*n)?,
                    None => ds,
                })
            }
        }
    }
}

/// Everything a run needs. `seed` drives model initialisation, training
/// (it overwrites `train.seed`), scoring and sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub in_train: DataSource,
    pub in_test: DataSource,
    pub out_test: DataSource,
    pub train: TrainConfig,
    pub detector: DetectorConfig,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    /// Images per set shown in reconstruction grids.
    pub grid_images: usize,
    /// Images drawn by `sample`.
    pub samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            in_train: DataSource::Synthetic(SyntheticSpec::new(Family::stripes(), 16, 200, 1)),
            in_test: DataSource::Synthetic(SyntheticSpec::new(Family::stripes(), 16, 200, 2)),
            out_test: DataSource::Synthetic(SyntheticSpec::new(Family::checker_texture(), 16, 200, 3)),
            train: TrainConfig::default(),
            detector: DetectorConfig::default(),
            seed: 0,
            checkpoint: None,
            grid_images: 8,
            samples: 16,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies cross-field rules after flags have been merged.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        if self.detector.attempts == 0 {
            bail!("detector.attempts must be at least 1");
        }
        Ok(self)
    }
}

/// The resolved config plus the subcommand that produced an output
/// directory. Readable as an [`ExperimentConfig`] again.
#[derive(Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    #[serde(flatten)]
    pub config: &'a ExperimentConfig,
}

pub fn write_run_record(out: &Path, command: &str, config: &ExperimentConfig) -> Result<()> {
    let json = serde_json::to_string_pretty(&RunRecord { command, config })?;
    let path = out.join("run.json");
    std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))
}
