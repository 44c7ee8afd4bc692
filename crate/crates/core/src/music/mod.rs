//! Label-to-image curation: prompt refinement, generation and three
//! filters (scene plausibility, instance existence, interactiveness).

mod budget;
mod filters;
mod lexicon;
mod pipeline;
mod prompt;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use budget::{generation_budget, BudgetMode, BudgetPolicy};
pub use filters::{instance_existence, interactiveness, scene_similarity, InstanceCandidates, SceneIndex};
pub use lexicon::{ActionEntry, Lexicon, ObjectEntry, SceneMapRecord, WordSets};
pub use pipeline::{
    Attempt, CategoryTally, Curator, DirSink, FilterOutcome, GenerationOutput, ImageSink, MemorySink,
    RejectStage, RejectionRecord, VirtualEntry, VirtualSample,
};
pub use prompt::{article, build_prompt, render_prompt, PromptSpec};

/// An (interaction, object) category, both zero-based vocabulary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CategoryPair {
    pub action: usize,
    pub object: usize,
}

impl CategoryPair {
    pub fn new(action: usize, object: usize) -> Self {
        CategoryPair { action, object }
    }
}

impl fmt::Display for CategoryPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.action, self.object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Scene,
    Instance,
    Interactiveness,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Scene => "scene",
            Stage::Instance => "instance",
            Stage::Interactiveness => "interactiveness",
        })
    }
}

/// Outcome of one filter stage.
///
/// `score` is the scene similarity, the best interactiveness score, or for
/// the instance stage the number of candidate pairs; `candidates` holds the
/// human and object candidate counts once detection ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub stage: Stage,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<[usize; 2]>,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_pair: Option<[crate::geometry::BBox; 2]>,
}

/// Thresholds and retry policy of the curation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MusicConfig {
    pub tau_scene: f64,
    pub tau_det: f64,
    pub tau_inter: f64,
    /// Attempts per category are capped at this multiple of its budget.
    pub attempt_factor: usize,
    /// Compare against the real images of the same category only.
    pub scene_per_category: bool,
}

impl Default for MusicConfig {
    fn default() -> Self {
        MusicConfig {
            tau_scene: 0.9,
            tau_det: 0.9,
            tau_inter: 0.3,
            attempt_factor: 10,
            scene_per_category: false,
        }
    }
}

impl MusicConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_scene", self.tau_scene),
            ("tau_det", self.tau_det),
            ("tau_inter", self.tau_inter),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.attempt_factor == 0 {
            return Err(Error::Config("attempt_factor must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(MusicConfig::default().validate().is_ok());
        let bad = MusicConfig {
            tau_inter: 1.5,
            ..MusicConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn verdict_serde() {
        let v = FilterVerdict {
            stage: Stage::Instance,
            score: 2.0,
            candidates: Some([1, 2]),
            passed: true,
            chosen_pair: None,
        };
        let s = serde_json::to_string(&v).unwrap();
        assert!(s.contains("\"stage\":\"instance\""));
        assert_eq!(serde_json::from_str::<FilterVerdict>(&s).unwrap(), v);
    }
}
