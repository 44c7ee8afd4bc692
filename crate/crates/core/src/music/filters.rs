use std::collections::BTreeMap;

use super::{CategoryPair, FilterVerdict, Stage};
use crate::backends::{ModelBackend, SceneFeature};
use crate::error::{Error, Result};
use crate::geometry::{union_mask, BBox, Image};

/// Scene features of the real images, stored unit-normalized.
#[derive(Debug, Clone, Default)]
pub struct SceneIndex {
    dim: usize,
    units: Vec<Vec<f64>>,
    by_category: BTreeMap<CategoryPair, Vec<usize>>,
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::InvalidFeature(
            "zero-norm scene feature, cosine undefined".into(),
        ));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

impl SceneIndex {
    pub fn new(features: &[SceneFeature]) -> Result<Self> {
        let dim = features
            .first()
            .map(SceneFeature::dim)
            .ok_or_else(|| Error::InvalidFeature("empty real feature set".into()))?;
        let units = features
            .iter()
            .map(|f| {
                if f.dim() != dim {
                    return Err(Error::InvalidFeature(format!(
                        "mixed feature dimensions {} and {dim}",
                        f.dim()
                    )));
                }
                unit(&f.vector)
            })
            .collect::<Result<_>>()?;
        Ok(SceneIndex {
            dim,
            units,
            by_category: BTreeMap::new(),
        })
    }

    /// Records which features belong to images containing `cat`.
    pub fn add_category_members(&mut self, cat: CategoryPair, members: &[usize]) -> Result<()> {
        if let Some(&bad) = members.iter().find(|&&i| i >= self.units.len()) {
            return Err(Error::InvalidInput(format!("feature index {bad} out of range")));
        }
        self.by_category
            .entry(cat)
            .or_default()
            .extend_from_slice(members);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Highest cosine similarity between `query` and the indexed features,
    /// optionally restricted to the members of one category.
    pub fn max_similarity(&self, query: &SceneFeature, scope: Option<CategoryPair>) -> Result<f64> {
        if query.dim() != self.dim {
            return Err(Error::InvalidFeature(format!(
                "query dimension {} does not match index dimension {}",
                query.dim(),
                self.dim
            )));
        }
        let q = unit(&query.vector)?;
        let cos = |u: &Vec<f64>| u.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
        let best = match scope {
            None => self.units.iter().map(cos).fold(f64::NEG_INFINITY, f64::max),
            Some(cat) => {
                let members = self.by_category.get(&cat).filter(|m| !m.is_empty()).ok_or_else(
                    || Error::Config(format!("no real scene features recorded for {cat}")),
                )?;
                members
                    .iter()
                    .map(|&i| cos(&self.units[i]))
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        };
        if best.is_finite() {
            Ok(best)
        } else {
            Err(Error::InvalidFeature("empty real feature set".into()))
        }
    }
}

/// Maximum cosine similarity of the image's scene feature to the real set.
pub fn scene_similarity(img: &Image, index: &SceneIndex, backend: &dyn ModelBackend) -> Result<f64> {
    let f = backend.scene_embed(img)?;
    index.max_similarity(&f, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceCandidates {
    pub humans: Vec<BBox>,
    pub objects: Vec<BBox>,
}

impl InstanceCandidates {
    pub fn passed(&self) -> bool {
        !self.humans.is_empty() && !self.objects.is_empty()
    }
}

/// Splits confident detections into human and object candidate sets.
pub fn instance_existence(
    img: &Image,
    object: usize,
    person_label: usize,
    tau_det: f64,
    backend: &dyn ModelBackend,
) -> Result<InstanceCandidates> {
    if !(0.0..=1.0).contains(&tau_det) {
        return Err(Error::InvalidInput(format!("tau_det {tau_det} outside [0, 1]")));
    }
    let dets = backend.detect(img, tau_det)?;
    let pick = |label: usize| {
        dets.iter()
            .filter(|d| d.label == label && d.score > tau_det)
            .map(|d| d.bbox)
            .collect::<Vec<_>>()
    };
    Ok(InstanceCandidates {
        humans: pick(person_label),
        objects: pick(object),
    })
}

/// Scores every human/object candidate pair on its union-masked image and
/// keeps the best one. Ties go to the earliest pair, humans outermost.
pub fn interactiveness(
    img: &Image,
    humans: &[BBox],
    objects: &[BBox],
    text: &str,
    tau_inter: f64,
    backend: &dyn ModelBackend,
) -> Result<FilterVerdict> {
    if humans.is_empty() || objects.is_empty() {
        return Err(Error::InvalidInput(
            "interactiveness needs non-empty candidate sets".into(),
        ));
    }
    let mut best: Option<(f64, [BBox; 2])> = None;
    for h in humans {
        for o in objects {
            let masked = union_mask(img, h, o)?;
            let s = backend.vl_score(&masked, text)?;
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, [*h, *o]));
            }
        }
    }
    let (score, pair) = best.expect("candidate sets are non-empty");
    let passed = score > tau_inter;
    Ok(FilterVerdict {
        stage: Stage::Interactiveness,
        score,
        candidates: Some([humans.len(), objects.len()]),
        passed,
        chosen_pair: passed.then_some(pair),
    })
}
