//! Per-stage manifests recording input fingerprints, used to resume runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use controstim_core::seed::fingerprint;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const STAGE_MANIFEST: &str = "stage.json";
pub const STAGE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub schema_version: u32,
    pub stage: String,
    pub seed: u64,
    /// Fingerprint of the configuration the stage depends on.
    pub config: String,
    /// Fingerprints of upstream artifacts.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file the stage wrote, by relative path.
    pub outputs: BTreeMap<String, String>,
}

impl StageManifest {
    pub fn load(dir: &Path) -> Option<Self> {
        serde_json::from_slice(&std::fs::read(dir.join(STAGE_MANIFEST)).ok()?).ok()
    }

    /// Whether `dir` holds a finished stage run for the same config and
    /// inputs whose outputs are still intact.
    pub fn is_current(&self, dir: &Path, config: &str, inputs: &BTreeMap<String, String>) -> bool {
        self.schema_version == STAGE_SCHEMA_VERSION
            && self.config == config
            && &self.inputs == inputs
            && hash_outputs(dir).is_ok_and(|o| o == self.outputs)
    }
}

/// Fingerprint of a finished stage, used as an input of downstream stages.
pub fn stage_fingerprint(dir: &Path, stage: &str) -> Result<String, CliError> {
    std::fs::read(dir.join(STAGE_MANIFEST))
        .map(|bytes| fingerprint(&bytes))
        .map_err(|_| CliError::Validation(format!("stage `{stage}` has not been run (no {})", dir.join(STAGE_MANIFEST).display())))
}

pub fn json_fingerprint(value: &impl Serialize) -> String {
    fingerprint(&serde_json::to_vec(value).expect("config values serialize"))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.strip_prefix(root).map_or(true, |p| p != Path::new(STAGE_MANIFEST)) {
            out.push(path);
        }
    }
    Ok(())
}

pub fn hash_outputs(dir: &Path) -> std::io::Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files
        .into_iter()
        .map(|path| {
            let rel = path.strip_prefix(dir).expect("collected under dir").to_string_lossy().replace('\\', "/");
            Ok((rel, fingerprint(&std::fs::read(&path)?)))
        })
        .collect()
}
