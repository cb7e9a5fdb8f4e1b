//! JSON run configuration.
//!
//! Unknown keys are rejected at every level; omitted keys take their defaults.
//! Relative paths are resolved against the directory holding the config file.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continuation::TrainConfig;
use crate::error::{Error, Result};
use crate::pairdata::{
    generate_synthetic, read_csv, read_features, split, Dataset, Split, SplitFractions, SplitMode, SyntheticSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    ClusterBenchmark,
    Imbalanced,
}

impl Preset {
    pub fn spec(self, seed: u64) -> SyntheticSpec {
        match self {
            Preset::ClusterBenchmark => SyntheticSpec::cluster_benchmark(seed),
            Preset::Imbalanced => SyntheticSpec::imbalanced(seed),
        }
    }
}

/// Where the points come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Preset {
        name: Preset,
        seed: u64,
    },
    /// `HNFV` binary feature file.
    Features(PathBuf),
    /// Text rows `l1|l2,f1,f2,...`.
    Csv(PathBuf),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(spec) => generate_synthetic(spec),
            DataSource::Preset { name, seed } => generate_synthetic(&name.spec(*seed)),
            DataSource::Features(p) => read_features(BufReader::new(File::open(p)?)),
            DataSource::Csv(p) => read_csv(BufReader::new(File::open(p)?)),
        }
    }

    fn path_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            DataSource::Features(p) | DataSource::Csv(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub fractions: SplitFractions,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            mode: SplitMode::Standard,
            fractions: SplitFractions {
                train: 0.8,
                database: 0.1,
                query: 0.1,
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    /// Without a split the whole dataset is used for training.
    #[serde(default)]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Loaded data for a run.
#[derive(Clone, Debug, PartialEq)]
pub enum RunData {
    Whole(Dataset),
    Split(Split),
}

impl RunData {
    pub fn train(&self) -> &Dataset {
        match self {
            RunData::Whole(d) => d,
            RunData::Split(s) => &s.train,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Parses, makes data paths absolute and checks that they exist.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = cfg.data.path_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            *p = std::fs::canonicalize(&*p)
                .map_err(|_| Error::invalid(format!("data file {} does not exist", p.display())))?;
        }
        if let Some(out) = &mut cfg.output_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load_data(&self) -> Result<RunData> {
        let data = self.data.load()?;
        Ok(match &self.split {
            None => RunData::Whole(data),
            Some(sc) => RunData::Split(split(&data, sc.mode, sc.fractions, sc.seed)?),
        })
    }
}
