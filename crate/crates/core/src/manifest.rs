//! Dataset manifest: relative audio path, class label, split tag.
//!
//! Stored as UTF-8 CSV with a `path,label,split` header. Paths must be
//! unique and must not contain commas.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest {path}: missing or wrong header (expected \"path,label,split\")")]
    BadHeader { path: String },
    #[error("manifest {path} line {line}: expected 3 comma-separated fields")]
    BadRecord { path: String, line: usize },
    #[error("manifest {path} line {line}: unknown split {split:?}")]
    BadSplit {
        path: String,
        line: usize,
        split: String,
    },
    #[error("manifest {path}: duplicate entry path {entry:?}")]
    DuplicatePath { path: String, entry: String },
    #[error("entry path {0:?} contains a comma")]
    PathWithComma(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Self::Train),
            "val" => Some(Self::Val),
            "test" => Some(Self::Test),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "path,label,split" => {}
            _ => return Err(ManifestError::BadHeader { path: name }),
        }
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(ManifestError::BadRecord {
                    path: name,
                    line: i + 1,
                });
            }
            let split = Split::parse(fields[2].trim()).ok_or_else(|| ManifestError::BadSplit {
                path: name.clone(),
                line: i + 1,
                split: fields[2].trim().to_string(),
            })?;
            let entry_path = fields[0].trim().to_string();
            if !seen.insert(entry_path.clone()) {
                return Err(ManifestError::DuplicatePath {
                    path: name,
                    entry: entry_path,
                });
            }
            entries.push(ManifestEntry {
                path: entry_path,
                label: fields[1].trim().to_string(),
                split,
            });
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        let mut out = String::from("path,label,split\n");
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.path.contains(',') || e.label.contains(',') {
                return Err(ManifestError::PathWithComma(e.path.clone()));
            }
            if !seen.insert(&e.path) {
                return Err(ManifestError::DuplicatePath {
                    path: path.display().to_string(),
                    entry: e.path.clone(),
                });
            }
            out.push_str(&format!("{},{},{}\n", e.path, e.label, e.split.name()));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Sorted distinct labels within a split.
    pub fn labels_in(&self, split: Split) -> Vec<String> {
        let set: BTreeSet<String> = self
            .entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.label.clone())
            .collect();
        set.into_iter().collect()
    }
}
