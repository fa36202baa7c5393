//! Per-sequence class probabilities and evaluation reports on disk.
//!
//! ```toml
//! format_version = 1
//! class_names = ["wave", "squat"]
//!
//! [[prediction]]
//! path = "seq_0003.toml"
//! label = 1
//! probabilities = [0.25, 0.75]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use viewadapt::models::{fuse_scores, EvalReport};

use crate::CliError;

pub const PREDICTIONS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub path: PathBuf,
    pub label: usize,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub format_version: u32,
    pub class_names: Vec<String>,
    #[serde(default, rename = "prediction")]
    pub predictions: Vec<Prediction>,
}

fn data_error(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Core(viewadapt::Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    })
}

impl PredictionFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| viewadapt::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let file: Self = toml::from_str(&text).map_err(|e| data_error(path, e.to_string()))?;
        if file.format_version != PREDICTIONS_FORMAT_VERSION {
            return Err(data_error(
                path,
                format!("unsupported format_version {}", file.format_version),
            ));
        }
        let classes = file.class_names.len();
        if let Some(p) = file
            .predictions
            .iter()
            .find(|p| p.probabilities.len() != classes || p.label >= classes)
        {
            return Err(data_error(
                path,
                format!(
                    "prediction for {} does not match the {classes} classes",
                    p.path.display()
                ),
            ));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Usage(e.to_string()))?;
        write(path, text)
    }

    /// Weighted average of two files over the same sequences and classes.
    pub fn fuse(cnn: &Self, rnn: &Self, w_cnn: f64, w_rnn: f64) -> Result<Self, CliError> {
        if cnn.class_names != rnn.class_names {
            return Err(schema("prediction files list different classes"));
        }
        if cnn.predictions.len() != rnn.predictions.len() {
            return Err(schema(
                "prediction files cover different numbers of sequences",
            ));
        }
        let predictions = cnn
            .predictions
            .iter()
            .zip(&rnn.predictions)
            .map(|(a, b)| {
                if a.path != b.path || a.label != b.label {
                    return Err(schema(format!(
                        "prediction files disagree on sequence {} vs {}",
                        a.path.display(),
                        b.path.display()
                    )));
                }
                Ok(Prediction {
                    path: a.path.clone(),
                    label: a.label,
                    probabilities: fuse_scores(&a.probabilities, &b.probabilities, w_cnn, w_rnn)?,
                })
            })
            .collect::<Result<_, CliError>>()?;
        Ok(Self {
            format_version: PREDICTIONS_FORMAT_VERSION,
            class_names: cnn.class_names.clone(),
            predictions,
        })
    }

    pub fn report(&self) -> Result<EvalReport, CliError> {
        let labels: Vec<usize> = self.predictions.iter().map(|p| p.label).collect();
        let probs = self
            .predictions
            .iter()
            .map(|p| p.probabilities.clone())
            .collect();
        Ok(EvalReport::from_probabilities(
            probs,
            &labels,
            self.class_names.len(),
        )?)
    }
}

fn schema(message: impl Into<String>) -> CliError {
    CliError::Core(viewadapt::Error::Schema(message.into()))
}

pub fn write(path: &Path, text: String) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| {
        viewadapt::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

/// Summary written by `eval` and `fuse`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportFile {
    pub accuracy: f64,
    pub sequences: usize,
    pub class_names: Vec<String>,
    /// Per-class accuracy; classes absent from the data are omitted.
    pub per_class_accuracy: Vec<ClassAccuracy>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub accuracy: f64,
}

impl ReportFile {
    pub fn new(report: &EvalReport, class_names: &[String]) -> Self {
        Self {
            accuracy: report.accuracy,
            sequences: report.predictions.len(),
            class_names: class_names.to_vec(),
            per_class_accuracy: report
                .per_class_accuracy
                .iter()
                .zip(class_names)
                .filter_map(|(a, c)| {
                    a.map(|accuracy| ClassAccuracy {
                        class: c.clone(),
                        accuracy,
                    })
                })
                .collect(),
            confusion: report.confusion.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(probs: &[[f64; 2]]) -> PredictionFile {
        PredictionFile {
            format_version: 1,
            class_names: vec!["a".into(), "b".into()],
            predictions: probs
                .iter()
                .enumerate()
                .map(|(i, p)| Prediction {
                    path: format!("s{i}.toml").into(),
                    label: i % 2,
                    probabilities: p.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn fusing_identical_files_is_identity() {
        let f = file(&[[0.3, 0.7], [0.123456789, 0.876543211]]);
        assert_eq!(PredictionFile::fuse(&f, &f, 4.0, 1.0).unwrap(), f);
    }

    #[test]
    fn fuse_weights_four_to_one() {
        let cnn = file(&[[0.6, 0.4]]);
        let rnn = file(&[[0.2, 0.8]]);
        let fused = PredictionFile::fuse(&cnn, &rnn, 4.0, 1.0).unwrap();
        let p = &fused.predictions[0].probabilities;
        assert!((p[0] - 0.52).abs() < 1e-15 && (p[1] - 0.48).abs() < 1e-15);
    }

    #[test]
    fn fuse_rejects_mismatched_sequences() {
        let a = file(&[[0.6, 0.4]]);
        let mut b = a.clone();
        b.predictions[0].path = "other.toml".into();
        assert!(PredictionFile::fuse(&a, &b, 4.0, 1.0).is_err());
    }
}
