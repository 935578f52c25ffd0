//! Model persistence: versioned JSON files that round-trip exactly.
//!
//! A model file is a single JSON document holding a format version, the full
//! parameter set (grid weights, domains, noise scales, scene geometry), and
//! optional training provenance. Floats are serialized at full precision, so
//! save → load → save is byte-identical and a loaded model predicts exactly
//! like the one that was saved.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interaction::ModelParams;

/// Version of the on-disk layout this build reads and writes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Where a model came from: enough to re-run the fit that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    /// Name or path of the training dataset.
    pub dataset: String,
    /// Seed the fit was launched with.
    pub seed: u64,
    /// SHA-256 hex digest of the serialized fit report.
    pub report_digest: String,
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    /// Layout version; files without one read as 0 and are rejected.
    #[serde(default)]
    pub format_version: u32,
    pub params: ModelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<TrainingProvenance>,
}

impl ModelFile {
    pub fn new(params: ModelParams, provenance: Option<TrainingProvenance>) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            params,
            provenance,
        }
    }
}

/// SHA-256 hex digest of any serializable report.
pub fn report_digest<T: Serialize>(report: &T) -> Result<String> {
    let bytes = serde_json::to_vec(report)
        .map_err(|e| Error::invalid("report digest", e.to_string()))?;
    let hash = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(hash.len() * 2);
    for byte in hash {
        use std::fmt::Write;
        write!(hex, "{byte:02x}").expect("writing to a String cannot fail");
    }
    Ok(hex)
}

/// Writes a model file as pretty-printed JSON with a trailing newline.
pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    let mut text = serde_json::to_string_pretty(file)
        .map_err(|e| Error::invalid("model file", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads and validates a model file.
///
/// Unparseable JSON is a parse error (never a partially-filled model); a
/// missing or unsupported `format_version` is a version error; parameters
/// that fail their own consistency checks are rejected.
pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::ModelParse(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: file.format_version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    file.params.validate()?;
    Ok(file)
}
