//! Run configuration, read from a TOML file and overridden by flags.
//!
//! Every section is optional. Missing keys take the defaults below, which
//! are the published training settings where one exists:
//!
//! ```toml
//! seed = 0
//! precision = "f32"          # or "f64"
//!
//! [synth]                    # dataset generator (default: the benchmark)
//! [preprocess]               # applied to raw sequences (default: sequence-level translation)
//! translate = "sequence"
//!
//! [split]                    # used when the manifest carries no split tags
//! protocol = "by_view"
//! test_views = ["az-90", "az+90"]
//!
//! [train]
//! epochs = 30
//! augment = { degrees = [[-17, 17], [-17, 17], [-17, 17]] }
//!
//! [varnn]                    # 3x100 LSTM, dropout 0.5, lr 0.005, clip 1, batch 32
//! [vacnn]                    # lr 0.0001, batch 32, 224x224 maps, 128 kernels of size 5
//! ```
//!
//! `num_classes` and `num_joints` always come from the dataset manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use viewadapt::data::{SplitProtocol, SynthSpec};
use viewadapt::geometry::{AugmentRange, PreprocessSpec};
use viewadapt::models::{VacnnConfig, VarnnConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub augment: Option<AugmentRange>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 30,
            augment: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    /// The generator's own `seed` key is replaced by the top-level seed.
    pub synth: SynthSpec,
    pub preprocess: PreprocessSpec,
    pub split: SplitProtocol,
    pub train: TrainSection,
    pub varnn: VarnnConfig,
    pub vacnn: VacnnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            synth: SynthSpec::benchmark(0),
            preprocess: PreprocessSpec::s_trans(),
            split: SplitProtocol::ByView {
                test_views: vec!["az-90".into(), "az+90".into()],
            },
            train: TrainSection::default(),
            varnn: VarnnConfig::default(),
            vacnn: VacnnConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("bad configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read configuration {}: {e}", path.display()))
        })?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self)
            .map_err(|e| CliError::Usage(format!("cannot serialize configuration: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 1").is_err());
        assert!(RunConfig::from_toml("[varnn]\nhiden = 10").is_err());
        assert!(RunConfig::from_toml("[train]\nepochs = 2\nlr = 0.1").is_err());
    }

    #[test]
    fn serialized_defaults_read_back() {
        let text = RunConfig::default().to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_override_fields() {
        let c = RunConfig::from_toml(
            "seed = 3\nprecision = \"f64\"\n[varnn]\nhidden = 8\n[split]\nprotocol = \"random\"\ntest_fraction = 0.25\n",
        )
        .unwrap();
        assert_eq!(
            (c.seed, c.precision, c.varnn.hidden, c.varnn.main_layers),
            (3, Precision::F64, 8, 3)
        );
        assert_eq!(
            c.split,
            SplitProtocol::Random {
                test_fraction: 0.25
            }
        );
    }
}
