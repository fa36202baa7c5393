//! Dataset manifests: the list of sequence files with their tags.
//!
//! ```toml
//! format_version = 1
//! class_names = ["wave", "squat"]
//! joint_names = ["spine_base", "..."]
//!
//! [[sequence]]
//! path = "seq_0000.toml"
//! label = 0
//! subject = 1
//! view = "az+45"
//! split = "train"
//! ```
//!
//! Paths are relative to the manifest's directory; `split` is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::load_sequence;
use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub subject: u32,
    pub view: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub class_names: Vec<String>,
    pub joint_names: Vec<String>,
    #[serde(default, rename = "sequence")]
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(
        class_names: Vec<String>,
        joint_names: Vec<String>,
        entries: Vec<ManifestEntry>,
    ) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            class_names,
            joint_names,
            entries,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Checks labels against the class list; with `root`, also checks that
    /// every referenced file exists.
    pub fn validate(&self, root: Option<&Path>) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Schema("manifest lists no classes".into()));
        }
        for e in &self.entries {
            if e.label >= self.class_names.len() {
                return Err(Error::Schema(format!(
                    "{}: label {} outside the {} classes",
                    e.path.display(),
                    e.label,
                    self.class_names.len()
                )));
            }
            if let Some(root) = root {
                let p = root.join(&e.path);
                if !p.is_file() {
                    return Err(Error::Schema(format!(
                        "referenced sequence {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize manifest: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate(None)?;
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Loads and validates a manifest, including file existence.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("unsupported format_version {}", m.format_version),
            });
        }
        m.validate(Some(&manifest_root(path)))?;
        Ok(m)
    }

    /// Entries with the given split tag.
    pub fn with_split(&self, role: SplitRole) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|e| e.split == Some(role))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Reads every referenced sequence and checks it against its entry.
    pub fn load_sequences(&self, root: &Path) -> Result<Vec<SkeletonSequence>> {
        self.entries
            .iter()
            .map(|e| {
                let seq = load_sequence(root.join(&e.path))?;
                if seq.label != e.label || seq.subject != e.subject || seq.view != e.view {
                    return Err(Error::Schema(format!(
                        "{}: file tags (label {}, subject {}, view {}) disagree with the manifest",
                        e.path.display(),
                        seq.label,
                        seq.subject,
                        seq.view
                    )));
                }
                if seq.joint_names != self.joint_names {
                    return Err(Error::Schema(format!(
                        "{}: joint schema differs from the manifest",
                        e.path.display()
                    )));
                }
                Ok(seq)
            })
            .collect()
    }
}

/// Directory that manifest-relative paths resolve against.
pub fn manifest_root(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
