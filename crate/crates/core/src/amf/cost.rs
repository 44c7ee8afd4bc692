use super::{InitialAnnotation, Prediction, PredictionSet};
use crate::error::{Error, Result};
use crate::geometry::{giou, BBox};

/// Classification cost: interaction term plus object term, both negated
/// so better predictions cost less. Lies in [-2, 0].
pub fn classification_cost(pred: &Prediction, ann: &InitialAnnotation) -> f64 {
    let sa = &pred.action_scores;
    let target = sa[ann.action];
    let complement = if sa.len() > 1 {
        let sum: f64 = sa
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != ann.action)
            .map(|(_, s)| 1.0 - s)
            .sum();
        sum / (sa.len() - 1) as f64
    } else {
        log::debug!("single interaction class, complement term fixed at 1");
        1.0
    };
    let action_cost = -0.5 * (target + complement);
    let object_cost = -pred.object_scores[ann.object];
    action_cost + object_cost
}

fn normalized_l1(a: &BBox, b: &BBox, width: f64, height: f64) -> f64 {
    (a.x1 - b.x1).abs() / width
        + (a.y1 - b.y1).abs() / height
        + (a.x2 - b.x2).abs() / width
        + (a.y2 - b.y2).abs() / height
}

/// Localization cost: worst normalized L1 distance of the two boxes plus
/// worst `1 - GIoU`.
pub fn localization_cost(pred: &Prediction, ann: &InitialAnnotation, image_size: (u32, u32)) -> f64 {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let reg = normalized_l1(&pred.human_box, &ann.human_box, w, h)
        .max(normalized_l1(&pred.object_box, &ann.object_box, w, h));
    let overlap = (1.0 - giou(&pred.human_box, &ann.human_box))
        .max(1.0 - giou(&pred.object_box, &ann.object_box));
    reg + overlap
}

/// Drops the localization part when even the best combined cost is
/// positive, i.e. no prediction localizes the annotation convincingly.
pub fn adaptive_costs(cls: &[f64], loc: &[f64]) -> (Vec<f64>, bool) {
    let combined: Vec<f64> = cls.iter().zip(loc).map(|(c, l)| c + l).collect();
    let best = combined.iter().copied().fold(f64::INFINITY, f64::min);
    if best > 0.0 {
        (cls.to_vec(), true)
    } else {
        (combined, false)
    }
}

/// Per-prediction matching costs and whether localization was dropped.
pub fn overall_costs(
    preds: &PredictionSet,
    ann: &InitialAnnotation,
    image_size: (u32, u32),
) -> Result<(Vec<f64>, bool)> {
    preds.validate()?;
    ann.check(preds.num_actions, preds.num_objects)?;
    if image_size.0 == 0 || image_size.1 == 0 {
        return Err(Error::InvalidInput("image size must be positive".into()));
    }
    let cls: Vec<f64> = preds
        .entries
        .iter()
        .map(|p| classification_cost(p, ann))
        .collect();
    let loc: Vec<f64> = preds
        .entries
        .iter()
        .map(|p| localization_cost(p, ann, image_size))
        .collect();
    Ok(adaptive_costs(&cls, &loc))
}
