//! Stimulus records, the stimulus manifest, and PNG export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controversiality::{ControversialityScore, TargetAssignment};
use crate::{Error, Image, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const NATURAL_CONDITION: &str = "natural";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesizerKind {
    FiniteDifference,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitKind {
    Noise,
    SeedImage { id: String },
}

/// One optimization phase at a fixed sharpness (and, for the
/// finite-difference synthesizer, a fixed difference step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub attempt: usize,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub iterations: usize,
    pub objective: f64,
    pub hit_iteration_cap: bool,
}

/// A synthesized stimulus together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusRecord {
    pub id: String,
    pub image: Image,
    pub assignment: TargetAssignment,
    pub score: ControversialityScore,
    /// Score of the initial image of the attempt that produced `image`.
    pub initial_score: ControversialityScore,
    pub synthesizer: SynthesizerKind,
    pub seed: u64,
    pub iterations: usize,
    pub attempts: usize,
    pub initialization: InitKind,
    /// Whether `score` reached the acceptance threshold.
    pub accepted: bool,
    pub trace: Vec<PhaseTrace>,
}

impl StimulusRecord {
    /// Condition label shared by all stimuli of one model pair.
    pub fn condition(&self) -> String {
        pair_condition(&self.assignment.model_a, &self.assignment.model_b)
    }
}

/// Order-independent condition label for a model pair.
pub fn pair_condition(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}-vs-{b}")
    } else {
        format!("{b}-vs-{a}")
    }
}

/// Stimulus id for a synthesis job.
pub fn stimulus_id(t: &TargetAssignment) -> String {
    format!("{}__{}__{}-{}", t.model_a, t.model_b, t.class_a, t.class_b)
}

/// Provenance fields of a record, without pixel data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub assignment: TargetAssignment,
    pub score: f64,
    pub synthesizer: SynthesizerKind,
    pub seed: u64,
    pub iterations: usize,
    pub attempts: usize,
    pub initialization: InitKind,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusEntry {
    pub id: String,
    pub file: String,
    pub condition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    /// Dataset label for natural stimuli.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub stimuli: Vec<StimulusEntry>,
}

impl StimulusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: StimulusManifest = serde_json::from_slice(&std::fs::read(path)?)?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported stimulus manifest schema {}",
                manifest.schema_version
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&StimulusEntry> {
        self.stimuli.iter().find(|s| s.id == id)
    }
}

/// Writes one PNG per stimulus plus `manifest.json` into `dir`.
///
/// `natural` images are exported with the natural condition label.
pub fn export_stimuli(
    records: &[StimulusRecord],
    natural: &[(String, Image, usize)],
    seed: u64,
    dir: &Path,
) -> Result<StimulusManifest> {
    std::fs::create_dir_all(dir)?;
    let mut stimuli = Vec::with_capacity(records.len() + natural.len());
    for r in records {
        let file = format!("{}.png", r.id);
        r.image.save_png(&dir.join(&file))?;
        stimuli.push(StimulusEntry {
            id: r.id.clone(),
            file,
            condition: r.condition(),
            provenance: Some(Provenance {
                assignment: r.assignment.clone(),
                score: r.score.value(),
                synthesizer: r.synthesizer,
                seed: r.seed,
                iterations: r.iterations,
                attempts: r.attempts,
                initialization: r.initialization.clone(),
                accepted: r.accepted,
            }),
            label: None,
        });
    }
    for (id, image, label) in natural {
        let file = format!("{id}.png");
        image.save_png(&dir.join(&file))?;
        stimuli.push(StimulusEntry {
            id: id.clone(),
            file,
            condition: NATURAL_CONDITION.to_string(),
            provenance: None,
            label: Some(*label),
        });
    }
    let manifest = StimulusManifest { schema_version: MANIFEST_SCHEMA_VERSION, seed, stimuli };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Loads the PNG of every manifest entry, in manifest order.
pub fn load_stimulus_images(manifest: &StimulusManifest, dir: &Path) -> Result<Vec<Image>> {
    manifest.stimuli.iter().map(|s| Image::load_png(&dir.join(&s.file))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_condition_is_symmetric() {
        assert_eq!(pair_condition("lin", "mlp"), pair_condition("mlp", "lin"));
    }
}
