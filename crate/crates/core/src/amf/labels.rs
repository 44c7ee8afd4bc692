use serde::{Deserialize, Serialize};

use super::assign::hungarian;
use super::cost::overall_costs;
use super::{AmfConfig, InitialAnnotation, PredictionSet};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Result of matching the annotation against teacher predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    /// The annotation with its boxes replaced by the matched prediction's.
    pub annotation: InitialAnnotation,
    /// Index of the matched prediction.
    pub matched: usize,
    pub dropped_localization: bool,
    /// The predictions with the matched entry's annotated action pinned.
    pub predictions: PredictionSet,
}

pub fn correct_annotation(
    preds: &PredictionSet,
    ann: &InitialAnnotation,
    image_size: (u32, u32),
) -> Result<Correction> {
    let (costs, dropped) = overall_costs(preds, ann, image_size)?;
    let (_, matched) = hungarian(&[costs])?[0];
    let mut predictions = preds.clone();
    for p in &mut predictions.entries {
        p.pinned = None;
    }
    let m = &mut predictions.entries[matched];
    m.pinned = Some(ann.action);
    let annotation = InitialAnnotation {
        human_box: m.human_box,
        object_box: m.object_box,
        ..*ann
    };
    Ok(Correction {
        annotation,
        matched,
        dropped_localization: dropped,
        predictions,
    })
}

/// Per-prediction maximum action score as predicted (pins ignored).
pub fn threshold_scores(preds: &PredictionSet) -> impl Iterator<Item = f64> + '_ {
    preds.entries.iter().map(|p| p.raw_max_action_score())
}

fn rank_for(kappa: f64, num_images: usize) -> Result<usize> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::Config(format!("kappa = {kappa} must be positive")));
    }
    // guard against products like 1.1 * 10 landing just above an integer
    let raw = kappa * num_images as f64;
    let rank = (raw - 1e-9 * raw.max(1.0)).ceil();
    if rank < 1.0 {
        return Err(Error::Config(format!(
            "kappa * N = {raw} selects no score; need at least 1"
        )));
    }
    Ok(rank as usize)
}

/// The `ceil(kappa * num_images)`-th largest score.
pub fn select_threshold(scores: &[f64], kappa: f64, num_images: usize) -> Result<f64> {
    let rank = rank_for(kappa, num_images)?;
    if scores.len() < rank {
        return Err(Error::Config(format!(
            "threshold rank {rank} needs {rank} scores but only {} were collected (short by {})",
            scores.len(),
            rank - scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {bad} in threshold pool")));
    }
    let mut v = scores.to_vec();
    let (_, nth, _) = v.select_nth_unstable_by(rank - 1, |a, b| b.total_cmp(a));
    Ok(*nth)
}

/// Bit `k` is set iff `scores[k] > threshold`.
pub fn binarize(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s > threshold)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmsCandidate {
    pub index: usize,
    pub score: f64,
    pub object: usize,
    pub human_box: BBox,
    pub object_box: BBox,
}

/// Pair-level duplicate suppression: a candidate is dropped when a
/// higher-scored survivor has the same object class and both its boxes
/// overlap by more than `tau_nms`.
pub fn pairwise_nms(mut cands: Vec<NmsCandidate>, tau_nms: f64) -> Vec<NmsCandidate> {
    cands.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    let mut kept: Vec<NmsCandidate> = Vec::with_capacity(cands.len());
    for c in cands {
        let dup = kept.iter().any(|k| {
            k.object == c.object
                && iou(&k.human_box, &c.human_box).min(iou(&k.object_box, &c.object_box)) > tau_nms
        });
        if !dup {
            kept.push(c);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTriplet {
    /// Multi-hot over interaction classes.
    pub interactions: Vec<u8>,
    #[serde(rename = "c_o")]
    pub object: usize,
    #[serde(rename = "bh")]
    pub human_box: BBox,
    #[serde(rename = "bo")]
    pub object_box: BBox,
}

impl PseudoTriplet {
    pub fn active_actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.interactions
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(k, _)| k)
    }

    pub fn transform_boxes(&self, f: impl Fn(&BBox) -> Result<BBox>) -> Result<Self> {
        Ok(PseudoTriplet {
            human_box: f(&self.human_box)?,
            object_box: f(&self.object_box)?,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub tau_bin: f64,
    pub triplets: Vec<PseudoTriplet>,
}

/// Keeps every prediction whose best action score exceeds `tau_bin`,
/// removes pair duplicates and binarizes the survivors. The pinned
/// (matched) prediction always survives.
pub fn build_pseudo_labels(
    preds: &PredictionSet,
    ann: &InitialAnnotation,
    tau_bin: f64,
    config: &AmfConfig,
) -> Result<PseudoLabelSet> {
    if preds.pinned_index().is_none() {
        return Err(Error::InvalidState(
            "predictions must be corrected before labeling".into(),
        ));
    }
    if !tau_bin.is_finite() {
        return Err(Error::InvalidInput(format!("tau_bin = {tau_bin} must be finite")));
    }
    let cands: Vec<NmsCandidate> = preds
        .entries
        .iter()
        .enumerate()
        .filter(|(_, p)| p.max_action_score() > tau_bin)
        .map(|(i, p)| NmsCandidate {
            index: i,
            score: p.max_action_score(),
            object: if config.predicted_object_class && p.pinned.is_none() {
                p.predicted_object()
            } else {
                ann.object
            },
            human_box: p.human_box,
            object_box: p.object_box,
        })
        .collect();
    let triplets = pairwise_nms(cands, config.tau_nms)
        .into_iter()
        .map(|c| {
            let p = &preds.entries[c.index];
            PseudoTriplet {
                interactions: binarize(&p.effective_action_scores(), tau_bin),
                object: c.object,
                human_box: c.human_box,
                object_box: c.object_box,
            }
        })
        .collect();
    Ok(PseudoLabelSet { tau_bin, triplets })
}

/// Mean number of annotated pairs per image.
pub fn estimate_kappa(pairs_per_image: &[usize]) -> Result<f64> {
    if pairs_per_image.is_empty() {
        return Err(Error::InvalidInput("cannot estimate kappa from no images".into()));
    }
    let total: usize = pairs_per_image.iter().sum();
    let k = total as f64 / pairs_per_image.len() as f64;
    if k <= 0.0 {
        return Err(Error::InvalidInput("no annotated pairs to estimate kappa".into()));
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Collecting,
    Labeling,
}

/// Two-phase pseudo-labeling over a set of curated images: scores from
/// every image are pooled first, then the frozen threshold labels each one.
#[derive(Debug, Clone)]
pub struct AmfRunner {
    config: AmfConfig,
    phase: Phase,
    scores: Vec<f64>,
    images: usize,
    tau_bin: Option<f64>,
}

impl AmfRunner {
    pub fn new(config: AmfConfig) -> Result<Self> {
        config.validate()?;
        Ok(AmfRunner {
            config,
            phase: Phase::Collecting,
            scores: Vec::new(),
            images: 0,
            tau_bin: None,
        })
    }

    pub fn config(&self) -> &AmfConfig {
        &self.config
    }

    pub fn collect(&mut self, preds: &PredictionSet) -> Result<()> {
        if self.phase != Phase::Collecting {
            return Err(Error::Ordering(
                "scores cannot be added after the threshold was fixed".into(),
            ));
        }
        preds.validate()?;
        self.scores.extend(threshold_scores(preds));
        self.images += 1;
        Ok(())
    }

    pub fn images(&self) -> usize {
        self.images
    }

    /// Fixes the threshold from the pooled scores.
    pub fn finish_collection(&mut self) -> Result<f64> {
        if self.phase != Phase::Collecting {
            return Err(Error::Ordering("threshold already fixed".into()));
        }
        let tau = select_threshold(&self.scores, self.config.kappa, self.images)?;
        self.phase = Phase::Labeling;
        self.tau_bin = Some(tau);
        Ok(tau)
    }

    pub fn tau_bin(&self) -> Option<f64> {
        self.tau_bin
    }

    pub fn label(
        &self,
        preds: &PredictionSet,
        ann: &InitialAnnotation,
        image_size: (u32, u32),
    ) -> Result<(Correction, PseudoLabelSet)> {
        let tau = self.tau_bin.ok_or_else(|| {
            Error::Ordering("labeling requested before the threshold collection pass".into())
        })?;
        let corr = correct_annotation(preds, ann, image_size)?;
        let labels = build_pseudo_labels(&corr.predictions, &corr.annotation, tau, &self.config)?;
        Ok((corr, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::super::Prediction;
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn pred(h: BBox, o: BBox, sa: Vec<f64>) -> Prediction {
        Prediction::new(h, o, vec![0.9, 0.1, 0.0], sa)
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(select_threshold(&[0.9, 0.8, 0.7, 0.6], 1.0, 2).unwrap(), 0.8);
        assert_eq!(select_threshold(&[0.3, 0.9, 0.1], 0.5, 2).unwrap(), 0.9);
        assert_eq!(select_threshold(&[0.5; 7], 1.5, 4).unwrap(), 0.5);
        assert_eq!(select_threshold(&[0.9, 0.8, 0.7], 1.5, 2).unwrap(), 0.7);
        assert!(matches!(select_threshold(&[0.9], 1.5, 2), Err(Error::Config(_))));
        assert!(select_threshold(&[0.9], 1.0, 0).is_err());
        // 1.1 * 10 rounds to 11.000000000000002 in binary
        let s: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        assert_eq!(select_threshold(&s, 1.1, 10).unwrap(), 9.0 / 20.0);
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0.7, 0.5, 0.2], 0.5), vec![1, 0, 0]);
        assert_eq!(binarize(&[0.1, 0.2], 0.0), vec![1, 1]);
        assert_eq!(binarize(&[f64::INFINITY, 0.2], 0.9), vec![1, 0]);
    }

    fn cand(index: usize, score: f64, object: usize, h: BBox, o: BBox) -> NmsCandidate {
        NmsCandidate {
            index,
            score,
            object,
            human_box: h,
            object_box: o,
        }
    }

    #[test]
    fn nms_examples() {
        let h = bx(0., 0., 10., 10.);
        let o = bx(20., 20., 30., 30.);
        let kept = pairwise_nms(vec![cand(0, 0.8, 1, h, o), cand(1, 0.9, 1, h, o)], 0.7);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].index, 1);
        let kept = pairwise_nms(vec![cand(0, 0.8, 1, h, o), cand(1, 0.9, 2, h, o)], 0.7);
        assert_eq!(kept.len(), 2);
        // human IoU 0.9, object IoU 0.4
        let h2 = bx(0., 0., 10., 9.);
        let o2 = bx(20., 20., 30., 24.);
        assert!((iou(&h, &h2) - 0.9).abs() < 1e-12);
        assert!((iou(&o, &o2) - 0.4).abs() < 1e-12);
        let kept = pairwise_nms(vec![cand(0, 0.9, 1, h, o), cand(1, 0.8, 1, h2, o2)], 0.7);
        assert_eq!(kept.len(), 2);
    }

    fn fixture() -> (PredictionSet, InitialAnnotation) {
        let a = InitialAnnotation::new(1, 0, bx(0., 0., 10., 20.), bx(12., 0., 20., 8.));
        let entries = vec![
            pred(bx(0., 0., 10., 19.), bx(12., 0., 20., 8.), vec![0.1, 0.6, 0.0]),
            pred(bx(40., 40., 50., 60.), bx(52., 40., 60., 48.), vec![0.95, 0.1, 0.3]),
            pred(bx(70., 0., 80., 20.), bx(82., 0., 90., 8.), vec![0.2, 0.1, 0.85]),
            pred(bx(0., 50., 5., 60.), bx(6., 50., 9., 55.), vec![0.2, 0.1, 0.3]),
        ];
        (PredictionSet::new(3, 2, entries).unwrap(), a)
    }

    #[test]
    fn labels_from_fixture() {
        let (preds, ann) = fixture();
        let corr = correct_annotation(&preds, &ann, (100, 100)).unwrap();
        assert_eq!(corr.matched, 0);
        assert_eq!(corr.annotation.human_box, bx(0., 0., 10., 19.));
        let cfg = AmfConfig::default();
        let l = build_pseudo_labels(&corr.predictions, &corr.annotation, 0.8, &cfg).unwrap();
        assert_eq!(l.triplets.len(), 3);
        assert_eq!(l.triplets[0].interactions, vec![0, 1, 0]);
        assert_eq!(l.triplets[1].interactions, vec![1, 0, 0]);
        assert_eq!(l.triplets[2].interactions, vec![0, 0, 1]);
        let only = build_pseudo_labels(&corr.predictions, &corr.annotation, 0.99, &cfg).unwrap();
        assert_eq!(only.triplets.len(), 1);
        assert!(build_pseudo_labels(&preds, &ann, 0.5, &cfg).is_err());
    }

    #[test]
    fn confident_duplicate_of_match_is_suppressed() {
        let (mut preds, ann) = fixture();
        let mut dup = preds.entries[0].clone();
        dup.action_scores = vec![0.99, 0.0, 0.0];
        preds.entries.truncate(1);
        preds.entries.push(dup);
        let corr = correct_annotation(&preds, &ann, (100, 100)).unwrap();
        let l = build_pseudo_labels(&corr.predictions, &corr.annotation, 0.5, &AmfConfig::default())
            .unwrap();
        assert_eq!(l.triplets.len(), 1);
        assert_eq!(l.triplets[0].interactions, vec![0, 1, 0]);
    }

    #[test]
    fn runner_enforces_phase_order() {
        let (preds, ann) = fixture();
        let mut r = AmfRunner::new(AmfConfig::default()).unwrap();
        assert!(matches!(r.label(&preds, &ann, (100, 100)), Err(Error::Ordering(_))));
        r.collect(&preds).unwrap();
        r.collect(&preds).unwrap();
        // 8 scores, rank ceil(1.5 * 2) = 3 -> 0.85
        assert_eq!(r.finish_collection().unwrap(), 0.85);
        assert!(matches!(r.collect(&preds), Err(Error::Ordering(_))));
        let (_, l) = r.label(&preds, &ann, (100, 100)).unwrap();
        assert_eq!(l.tau_bin, 0.85);
        assert_eq!(l.triplets.len(), 2);
    }

    #[test]
    fn kappa_estimate() {
        assert_eq!(estimate_kappa(&[1, 2, 3]).unwrap(), 2.0);
        assert!(estimate_kappa(&[]).is_err());
    }
}
