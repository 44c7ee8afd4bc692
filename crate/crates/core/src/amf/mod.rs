//! Pseudo-labels for curated images: match teacher predictions to the
//! initial annotation with an adaptive cost, adopt the matched boxes, then
//! add other confident predictions above a data-driven threshold.

mod annotation;
mod assign;
mod cost;
mod labels;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use annotation::InitialAnnotation;
pub use assign::{assignment_cost, hungarian};
pub use cost::{adaptive_costs, classification_cost, localization_cost, overall_costs};
pub use labels::{
    binarize, build_pseudo_labels, correct_annotation, estimate_kappa, pairwise_nms,
    select_threshold, threshold_scores, AmfRunner, Correction, NmsCandidate, PseudoLabelSet,
    PseudoTriplet,
};

/// One teacher output: a human/object box pair with class scores.
///
/// `object_scores` has one entry per object class plus a trailing
/// no-object entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "bh")]
    pub human_box: BBox,
    #[serde(rename = "bo")]
    pub object_box: BBox,
    #[serde(rename = "so")]
    pub object_scores: Vec<f64>,
    #[serde(rename = "sa")]
    pub action_scores: Vec<f64>,
    /// Action whose score is pinned above every finite threshold.
    #[serde(skip)]
    pub pinned: Option<usize>,
}

impl Prediction {
    pub fn new(human_box: BBox, object_box: BBox, object_scores: Vec<f64>, action_scores: Vec<f64>) -> Self {
        Prediction {
            human_box,
            object_box,
            object_scores,
            action_scores,
            pinned: None,
        }
    }

    /// Action score with the pin applied.
    pub fn action_score(&self, k: usize) -> f64 {
        if self.pinned == Some(k) {
            f64::INFINITY
        } else {
            self.action_scores[k]
        }
    }

    pub fn effective_action_scores(&self) -> Vec<f64> {
        (0..self.action_scores.len()).map(|k| self.action_score(k)).collect()
    }

    /// Highest action score, pin included.
    pub fn max_action_score(&self) -> f64 {
        if self.pinned.is_some() {
            return f64::INFINITY;
        }
        self.raw_max_action_score()
    }

    /// Highest action score as predicted, ignoring any pin.
    pub fn raw_max_action_score(&self) -> f64 {
        self.action_scores
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Most likely object class, excluding the no-object entry.
    pub fn predicted_object(&self) -> usize {
        let n = self.object_scores.len().saturating_sub(1);
        let mut best = 0;
        for k in 1..n {
            if self.object_scores[k] > self.object_scores[best] {
                best = k;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub num_actions: usize,
    pub num_objects: usize,
    pub entries: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(num_actions: usize, num_objects: usize, entries: Vec<Prediction>) -> Result<Self> {
        let set = PredictionSet {
            num_actions,
            num_objects,
            entries,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidInput("prediction set is empty".into()));
        }
        if self.num_actions == 0 || self.num_objects == 0 {
            return Err(Error::InvalidInput("vocabulary sizes must be positive".into()));
        }
        for (i, p) in self.entries.iter().enumerate() {
            if p.action_scores.len() != self.num_actions
                || p.object_scores.len() != self.num_objects + 1
            {
                return Err(Error::InvalidShape(format!(
                    "prediction {i}: expected {} action and {} object scores, found {} and {}",
                    self.num_actions,
                    self.num_objects + 1,
                    p.action_scores.len(),
                    p.object_scores.len()
                )));
            }
            let bad = p
                .action_scores
                .iter()
                .chain(&p.object_scores)
                .any(|s| !(0.0..=1.0).contains(s));
            if bad {
                return Err(Error::InvalidInput(format!(
                    "prediction {i}: scores must lie in [0, 1]"
                )));
            }
            p.human_box.validate()?;
            p.object_box.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pinned_index(&self) -> Option<usize> {
        self.entries.iter().position(|p| p.pinned.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmfConfig {
    /// Expected number of interacting pairs per curated image.
    pub kappa: f64,
    pub tau_nms: f64,
    /// Label supplemented triplets with the predicted object class instead
    /// of the annotation's.
    pub predicted_object_class: bool,
}

impl Default for AmfConfig {
    fn default() -> Self {
        AmfConfig {
            kappa: 1.5,
            tau_nms: 0.7,
            predicted_object_class: false,
        }
    }
}

impl AmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa = {} must be positive", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.tau_nms) {
            return Err(Error::Config(format!("tau_nms = {} outside [0, 1]", self.tau_nms)));
        }
        Ok(())
    }
}
