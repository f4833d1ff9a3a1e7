use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arm::ArmConfig;
use crate::error::{Error, Result};

use super::model::{StmConfig, StmModel};
use super::state::{Normalization, StateLayout};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const STM_KIND: &str = "stm";

/// Trained state transition model with everything needed to roll it out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub model_kind: String,
    pub arm: ArmConfig,
    pub config: StmConfig,
    pub layout: StateLayout,
    pub normalization: Normalization,
    pub model: StmModel,
    pub loss_curve: Vec<f64>,
}

impl ModelCheckpoint {
    pub fn new(
        arm: ArmConfig,
        config: StmConfig,
        layout: StateLayout,
        normalization: Normalization,
        model: StmModel,
        loss_curve: Vec<f64>,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            model_kind: STM_KIND.to_string(),
            arm,
            config,
            layout,
            normalization,
            model,
            loss_curve,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    write_atomically(path, ckpt.to_json()?.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let ckpt: ModelCheckpoint = load_versioned(path, STM_KIND)?;
    if ckpt.model.input_size() != ckpt.layout.width() || ckpt.normalization.width() != ckpt.layout.width() {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: "weights do not match the recorded state layout".into(),
        });
    }
    Ok(ckpt)
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
    model_kind: String,
}

/// Reads a checkpoint document after checking its version and kind tag.
pub(crate) fn load_versioned<T: serde::de::DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let corrupt = |detail: String| Error::Corrupt {
        path: path.to_path_buf(),
        detail,
    };
    let header: Header = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if header.model_kind != kind {
        return Err(corrupt(format!("expected a `{kind}` checkpoint, found `{}`", header.model_kind)));
    }
    serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))
}

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partial file.
pub(crate) fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
