use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lstm::{LstmParams, LstmShape, Segment};
use crate::error::{read_file, Error, Result};

pub const CHECKPOINT_FORMAT: &str = "formmi-lstm";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: shape, the alphabet fingerprint it was trained on, the
/// named segment layout and the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub shape: LstmShape,
    pub alphabet_hash: String,
    pub segments: Vec<Segment>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: &LstmParams, alphabet_hash: &str) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: *params.shape(),
            alphabet_hash: alphabet_hash.into(),
            segments: params.segments().to_vec(),
            values: params.values().to_vec(),
        }
    }

    pub fn params(&self) -> Result<LstmParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.segments != self.shape.segments() {
            return Err(Error::data("checkpoint segment layout does not match its shape"));
        }
        LstmParams::from_values(self.shape, self.values.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::data(format!("{} is not UTF-8", path.display())))?;
        Self::from_json(&text)
    }
}
