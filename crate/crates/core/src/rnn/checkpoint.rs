//! Versioned JSON checkpoint files, written atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{ModelParams, ModelShape};
use super::train::EpochMetrics;
use super::RnnError;

pub const CHECKPOINT_VERSION: u32 = 1;

const PREFIX: &str = "checkpoint-";
const SUFFIX: &str = ".json";

/// Full parameter snapshot of the model at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub epoch: usize,
    pub seed: u64,
    pub metrics: EpochMetrics,
    pub params: ModelParams,
}

#[derive(Serialize)]
struct FileOut<'a> {
    v: u32,
    shape: ModelShape,
    #[serde(flatten)]
    checkpoint: &'a ModelCheckpoint,
}

#[derive(Deserialize)]
struct FileIn {
    v: u32,
    shape: ModelShape,
    #[serde(flatten)]
    checkpoint: ModelCheckpoint,
}

impl ModelCheckpoint {
    pub fn train_accuracy(&self) -> f64 {
        self.metrics.train_accuracy
    }

    pub fn test_accuracy(&self) -> f64 {
        self.metrics.test_accuracy
    }

    pub fn to_json(&self) -> String {
        let file = FileOut {
            v: CHECKPOINT_VERSION,
            shape: self.params.shape(),
            checkpoint: self,
        };
        serde_json::to_string(&file).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let file: FileIn = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.v != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {}", file.v));
        }
        if file.shape != file.checkpoint.params.shape() {
            return Err("declared shape disagrees with parameter blocks".into());
        }
        file.checkpoint.params.validate().map_err(|e| e.to_string())?;
        let m = &file.checkpoint.metrics;
        if ![m.train_accuracy, m.test_accuracy]
            .iter()
            .all(|a| (0.0..=1.0).contains(a))
        {
            return Err("accuracies must lie in [0, 1]".into());
        }
        Ok(file.checkpoint)
    }
}

/// Writes `bytes` to a temporary sibling of `path`, syncs it and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("{PREFIX}{epoch:06}{SUFFIX}"))
}

pub fn save_checkpoint(dir: &Path, checkpoint: &ModelCheckpoint) -> Result<PathBuf, RnnError> {
    fs::create_dir_all(dir).map_err(|source| RnnError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = checkpoint_path(dir, checkpoint.epoch);
    write_atomic(&path, checkpoint.to_json().as_bytes()).map_err(|source| RnnError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, RnnError> {
    let text = fs::read_to_string(path).map_err(|source| RnnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ModelCheckpoint::from_json(&text).map_err(|message| RnnError::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

/// Checkpoint files in `dir`, ascending by epoch.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(usize, PathBuf)>, RnnError> {
    let entries = fs::read_dir(dir).map_err(|source| RnnError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut found = Vec::new();
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let epoch = name
            .strip_prefix(PREFIX)
            .and_then(|rest| rest.strip_suffix(SUFFIX))
            .and_then(|digits| digits.parse::<usize>().ok());
        if let Some(epoch) = epoch {
            found.push((epoch, entry.path()));
        }
    }
    found.sort();
    Ok(found)
}
