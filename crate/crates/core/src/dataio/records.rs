//! Per-image teacher outputs and pseudo-labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::amf::{Prediction, PredictionSet, PseudoLabelSet, PseudoTriplet};
use crate::error::{Error, Result};
use crate::jsonl;

pub const PREDICTIONS_FORMAT: &str = "vil-predictions";
pub const PSEUDO_LABELS_FORMAT: &str = "vil-pseudo-labels";

#[derive(Debug, Serialize, Deserialize)]
struct PredHeader {
    format: String,
    version: u32,
    num_actions: usize,
    num_objects: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredRecord {
    image_id: String,
    entries: Vec<Prediction>,
}

/// Teacher predictions keyed by image id, in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDump {
    pub num_actions: usize,
    pub num_objects: usize,
    pub images: Vec<(String, PredictionSet)>,
}

impl PredictionDump {
    pub fn new(num_actions: usize, num_objects: usize) -> Self {
        PredictionDump {
            num_actions,
            num_objects,
            images: Vec::new(),
        }
    }

    pub fn push(&mut self, image_id: impl Into<String>, preds: PredictionSet) -> Result<()> {
        if preds.num_actions != self.num_actions || preds.num_objects != self.num_objects {
            return Err(Error::InvalidShape(format!(
                "prediction set over {}x{} classes in a {}x{} dump",
                preds.num_actions, preds.num_objects, self.num_actions, self.num_objects
            )));
        }
        self.images.push((image_id.into(), preds));
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&PredictionSet> {
        self.images.iter().find(|(id, _)| id == image_id).map(|(_, p)| p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut sorted: Vec<&(String, PredictionSet)> = self.images.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidInput(format!("duplicate image id `{}`", w[0].0)));
            }
        }
        let header = PredHeader {
            format: PREDICTIONS_FORMAT.into(),
            version: 1,
            num_actions: self.num_actions,
            num_objects: self.num_objects,
        };
        let records: Vec<PredRecord> = sorted
            .into_iter()
            .map(|(id, p)| PredRecord {
                image_id: id.clone(),
                entries: p.entries.clone(),
            })
            .collect();
        jsonl::write(path, &header, &records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, records): (PredHeader, Vec<PredRecord>) = jsonl::read(path, PREDICTIONS_FORMAT, 1)?;
        let mut dump = PredictionDump::new(h.num_actions, h.num_objects);
        for (i, r) in records.into_iter().enumerate() {
            let set = PredictionSet::new(h.num_actions, h.num_objects, r.entries)
                .map_err(|e| Error::parse(path, i + 1, e))?;
            dump.images.push((r.image_id, set));
        }
        Ok(dump)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelHeader {
    format: String,
    version: u32,
}

/// Pseudo-labels for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub image_id: String,
    pub tau_bin: f64,
    pub triplets: Vec<PseudoTriplet>,
}

impl PseudoLabelRecord {
    pub fn new(image_id: impl Into<String>, labels: &PseudoLabelSet) -> Self {
        PseudoLabelRecord {
            image_id: image_id.into(),
            tau_bin: labels.tau_bin,
            triplets: labels.triplets.clone(),
        }
    }

    pub fn labels(&self) -> PseudoLabelSet {
        PseudoLabelSet {
            tau_bin: self.tau_bin,
            triplets: self.triplets.clone(),
        }
    }
}

/// Writes records sorted by image id.
pub fn save_pseudo_labels(path: &Path, records: &[PseudoLabelRecord]) -> Result<()> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let header = LabelHeader {
        format: PSEUDO_LABELS_FORMAT.into(),
        version: 1,
    };
    jsonl::write(path, &header, &sorted)
}

pub fn load_pseudo_labels(path: &Path) -> Result<Vec<PseudoLabelRecord>> {
    let (_, records): (LabelHeader, Vec<PseudoLabelRecord>) = jsonl::read(path, PSEUDO_LABELS_FORMAT, 1)?;
    for (i, r) in records.iter().enumerate() {
        for t in &r.triplets {
            if t.interactions.iter().any(|&b| b > 1) {
                return Err(Error::parse(path, i + 1, "interaction bits must be 0 or 1"));
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn prediction_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("preds.jsonl");
        let mut d = PredictionDump::new(2, 1);
        let pred = Prediction::new(bx(0.0, 0.0, 1.0, 1.0), bx(0.5, 0.5, 2.0, 2.0), vec![0.7, 0.3], vec![1.0 / 3.0, 0.9]);
        d.push("z", PredictionSet::new(2, 1, vec![pred.clone()]).unwrap()).unwrap();
        d.push("a", PredictionSet::new(2, 1, vec![pred.clone(), pred.clone()]).unwrap()).unwrap();
        d.save(&p).unwrap();
        let back = PredictionDump::load(&p).unwrap();
        assert_eq!(back.images[0].0, "a");
        assert_eq!(back.get("z"), d.get("z"));
        assert_eq!(back.get("a"), d.get("a"));
        let wide = Prediction { action_scores: vec![0.1, 0.2, 0.3], ..pred };
        assert!(d.push("q", PredictionSet::new(3, 1, vec![wide]).unwrap()).is_err());
    }

    #[test]
    fn pseudo_labels_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.jsonl");
        let recs = vec![
            PseudoLabelRecord {
                image_id: "b".into(),
                tau_bin: 0.1 + 0.2,
                triplets: vec![PseudoTriplet {
                    interactions: vec![0, 1, 1],
                    object: 4,
                    human_box: bx(0.1, 0.2, 3.3, 4.4),
                    object_box: bx(1e-17, 0.0, 1.0, 1.0),
                }],
            },
            PseudoLabelRecord {
                image_id: "a".into(),
                tau_bin: 0.5,
                triplets: vec![],
            },
        ];
        save_pseudo_labels(&p, &recs).unwrap();
        let back = load_pseudo_labels(&p).unwrap();
        assert_eq!(back, vec![recs[1].clone(), recs[0].clone()]);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"bh\":[0.1,0.2,3.3,4.4]"));
    }
}
