use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::music::CategoryPair;

/// The single labeled pair attached to a curated image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialAnnotation {
    #[serde(rename = "c_a")]
    pub action: usize,
    #[serde(rename = "c_o")]
    pub object: usize,
    #[serde(rename = "bh")]
    pub human_box: BBox,
    #[serde(rename = "bo")]
    pub object_box: BBox,
}

impl InitialAnnotation {
    pub fn new(action: usize, object: usize, human_box: BBox, object_box: BBox) -> Self {
        InitialAnnotation {
            action,
            object,
            human_box,
            object_box,
        }
    }

    pub fn category(&self) -> CategoryPair {
        CategoryPair::new(self.action, self.object)
    }

    pub fn check(&self, num_actions: usize, num_objects: usize) -> Result<()> {
        if self.action >= num_actions || self.object >= num_objects {
            return Err(Error::InvalidInput(format!(
                "annotation class ({}, {}) outside {num_actions} actions x {num_objects} objects",
                self.action, self.object
            )));
        }
        self.human_box.validate()?;
        self.object_box.validate()
    }
}
