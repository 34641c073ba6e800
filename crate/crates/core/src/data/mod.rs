//! Paired two-modality datasets: the synthetic benchmark and feature CSV files.

mod csv;
mod synthetic;

pub use self::csv::{format_float, load_features, save_features, write_features_csv};
pub use synthetic::{generate, SyntheticConfig};

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::kv;
use crate::util::write_atomic;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    A,
    B,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::A, Modality::B];

    pub fn index(self) -> u64 {
        match self {
            Modality::A => 0,
            Modality::B => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Modality::A),
            1 => Some(Modality::B),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Modality::A => Modality::B,
            Modality::B => Modality::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::A => "a",
            Modality::B => "b",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Modality::A),
            "b" => Ok(Modality::B),
            other => Err(format!("unknown modality `{other}` (expected a or b)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: u64,
    pub label: usize,
    pub x_a: Vec<f64>,
    pub x_b: Vec<f64>,
}

impl PairedSample {
    pub fn features(&self, m: Modality) -> &[f64] {
        match m {
            Modality::A => &self.x_a,
            Modality::B => &self.x_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(SplitName::Train),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub input_dim: usize,
    pub train: Vec<PairedSample>,
    pub test: Vec<PairedSample>,
    /// Generator settings when the data is synthetic.
    pub provenance: Option<SyntheticConfig>,
}

impl Dataset {
    pub fn split(&self, name: SplitName) -> &[PairedSample] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Test => &self.test,
        }
    }

    /// Writes `train.csv`, `test.csv` and `dataset.cfg` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        save_features(&self.train, &dir.join("train.csv"))?;
        save_features(&self.test, &dir.join("test.csv"))?;
        let mut pairs = vec![
            ("classes".to_string(), self.classes.to_string()),
            ("input_dim".to_string(), self.input_dim.to_string()),
        ];
        if let Some(p) = &self.provenance {
            pairs.extend(p.to_pairs());
        }
        write_atomic(&dir.join("dataset.cfg"), kv::render(&pairs).as_bytes())
    }

    /// Reads a directory written by [`Dataset::save_dir`] or by hand. Without
    /// `dataset.cfg` the class count is inferred from the labels.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join("dataset.cfg");
        let (classes, provenance) = if cfg_path.exists() {
            let pairs = kv::read(&cfg_path)?;
            let classes: Option<usize> = kv::parse_value(&pairs, "classes")?;
            let provenance = if kv::get(&pairs, "seed").is_some() {
                Some(SyntheticConfig::from_pairs(&pairs)?)
            } else {
                None
            };
            (classes, provenance)
        } else {
            (None, None)
        };
        let train = load_features(&dir.join("train.csv"), classes)?;
        let test = load_features(&dir.join("test.csv"), classes)?;
        let input_dim = train
            .first()
            .or(test.first())
            .map(|s| s.x_a.len())
            .ok_or_else(|| Error::Data(format!("{}: no samples", dir.display())))?;
        if test.iter().chain(&train).any(|s| s.x_a.len() != input_dim) {
            return Err(Error::Data("train and test feature widths differ".into()));
        }
        let classes = match classes {
            Some(c) => c,
            None => train
                .iter()
                .chain(&test)
                .map(|s| s.label + 1)
                .max()
                .unwrap_or(0)
                .max(2),
        };
        Ok(Self {
            classes,
            input_dim,
            train,
            test,
            provenance,
        })
    }
}

/// `N x D` matrix of one modality's features.
pub fn feature_matrix(samples: &[PairedSample], m: Modality) -> Array2<f64> {
    let d = samples.first().map(|s| s.features(m).len()).unwrap_or(0);
    let mut out = Array2::zeros((samples.len(), d));
    for (i, s) in samples.iter().enumerate() {
        out.row_mut(i)
            .assign(&ndarray::ArrayView1::from(s.features(m)));
    }
    out
}

pub fn labels(samples: &[PairedSample]) -> Vec<usize> {
    samples.iter().map(|s| s.label).collect()
}
