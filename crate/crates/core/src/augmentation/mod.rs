//! Weak, strong and random-pad views with recorded parameters, so boxes can
//! be carried between views exactly.

pub mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::amf::{InitialAnnotation, PseudoLabelSet, PseudoTriplet};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Photometric {
    Jitter { gain: f64, bias: f64 },
    Blur,
    Erase { x: u32, y: u32, width: u32, height: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    /// `x -> x * sx`, `y -> y * sy`.
    Resize { sx: f64, sy: f64 },
    /// Mirror about the vertical axis of an image `width` pixels wide.
    Hflip { width: u32 },
    Pad { left: u32, top: u32, right: u32, bottom: u32 },
    Photometric(Photometric),
}

impl Step {
    fn is_geometric(&self) -> bool {
        !matches!(self, Step::Photometric(_))
    }

    fn forward(&self, b: &BBox) -> BBox {
        match *self {
            Step::Resize { sx, sy } => b.scale(sx, sy),
            Step::Hflip { width } => {
                let w = width as f64;
                BBox {
                    x1: w - b.x2,
                    y1: b.y1,
                    x2: w - b.x1,
                    y2: b.y2,
                }
            }
            Step::Pad { left, top, .. } => b.translate(left as f64, top as f64),
            Step::Photometric(_) => *b,
        }
    }

    fn inverse(&self, b: &BBox) -> BBox {
        match *self {
            Step::Resize { sx, sy } => BBox {
                x1: b.x1 / sx,
                y1: b.y1 / sy,
                x2: b.x2 / sx,
                y2: b.y2 / sy,
            },
            Step::Hflip { .. } => self.forward(b),
            Step::Pad { left, top, .. } => b.translate(-(left as f64), -(top as f64)),
            Step::Photometric(_) => *b,
        }
    }
}

/// Ordered steps applied to an image of size `source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub source: (u32, u32),
    pub output: (u32, u32),
    pub steps: Vec<Step>,
}

impl TransformRecord {
    pub fn identity(width: u32, height: u32) -> Self {
        TransformRecord {
            source: (width, height),
            output: (width, height),
            steps: Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn forward_box(&self, b: &BBox) -> Result<BBox> {
        let out = self.steps.iter().fold(*b, |acc, s| s.forward(&acc));
        out.validate()?;
        Ok(out)
    }

    pub fn inverse_box(&self, b: &BBox) -> Result<BBox> {
        let out = self.steps.iter().rev().fold(*b, |acc, s| s.inverse(&acc));
        out.validate()?;
        Ok(out)
    }

    /// The record without its photometric steps.
    pub fn geometric(&self) -> TransformRecord {
        TransformRecord {
            steps: self
                .steps
                .iter()
                .filter(|s| s.is_geometric())
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &TransformRecord) -> Result<TransformRecord> {
        if next.source != self.output {
            return Err(Error::InvalidRecord(format!(
                "cannot chain a record producing {:?} into one expecting {:?}",
                self.output, next.source
            )));
        }
        Ok(TransformRecord {
            source: self.source,
            output: next.output,
            steps: self.steps.iter().chain(&next.steps).cloned().collect(),
        })
    }
}

/// Anything carrying boxes that follow an image through a transform.
pub trait BoxLabels: Sized {
    fn map_boxes(&self, f: &dyn Fn(&BBox) -> Result<BBox>) -> Result<Self>;
}

impl BoxLabels for BBox {
    fn map_boxes(&self, f: &dyn Fn(&BBox) -> Result<BBox>) -> Result<Self> {
        f(self)
    }
}

impl BoxLabels for InitialAnnotation {
    fn map_boxes(&self, f: &dyn Fn(&BBox) -> Result<BBox>) -> Result<Self> {
        Ok(InitialAnnotation {
            human_box: f(&self.human_box)?,
            object_box: f(&self.object_box)?,
            ..*self
        })
    }
}

impl BoxLabels for PseudoTriplet {
    fn map_boxes(&self, f: &dyn Fn(&BBox) -> Result<BBox>) -> Result<Self> {
        self.transform_boxes(f)
    }
}

impl BoxLabels for PseudoLabelSet {
    fn map_boxes(&self, f: &dyn Fn(&BBox) -> Result<BBox>) -> Result<Self> {
        Ok(PseudoLabelSet {
            tau_bin: self.tau_bin,
            triplets: self
                .triplets
                .iter()
                .map(|t| t.transform_boxes(f))
                .collect::<Result<_>>()?,
        })
    }
}

impl<T: BoxLabels> BoxLabels for Vec<T> {
    fn map_boxes(&self, f: &dyn Fn(&BBox) -> Result<BBox>) -> Result<Self> {
        self.iter().map(|x| x.map_boxes(f)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Photometric steps leave channels below this index untouched.
    pub photometric_from_channel: u8,
    pub jitter_gain: (f64, f64),
    pub jitter_bias: (f64, f64),
    pub blur_prob: f64,
    pub erase_prob: f64,
    /// Largest erased side as a fraction of the image side.
    pub erase_max_frac: f64,
    pub pad_fill: u8,
    /// Largest pad margin as a fraction of the padded dimension.
    pub pad_max_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            scale_min: 0.8,
            scale_max: 1.2,
            photometric_from_channel: 0,
            jitter_gain: (0.8, 1.2),
            jitter_bias: (-20.0, 20.0),
            blur_prob: 0.5,
            erase_prob: 0.5,
            erase_max_frac: 0.25,
            pad_fill: 128,
            pad_max_frac: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.flip_prob, self.blur_prob, self.erase_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::Config(format!(
                "scale range [{}, {}] is invalid",
                self.scale_min, self.scale_max
            )));
        }
        if self.jitter_gain.0 > self.jitter_gain.1 || self.jitter_bias.0 > self.jitter_bias.1 {
            return Err(Error::Config("jitter ranges must be ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.erase_max_frac) || !(0.0..=1.0).contains(&self.pad_max_frac) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn geometric_steps(
    img: &Image,
    rng: &mut ChaCha8Rng,
    cfg: &AugmentConfig,
) -> Result<(Image, Vec<Step>)> {
    let (w, h) = (img.width(), img.height());
    let mut steps = Vec::new();
    let mut out = if rng.random_bool(cfg.flip_prob) {
        steps.push(Step::Hflip { width: w });
        ops::flip_horizontal(img)
    } else {
        img.clone()
    };
    let s = uniform(rng, cfg.scale_min, cfg.scale_max);
    let ow = ((w as f64 * s).round() as u32).max(1);
    let oh = ((h as f64 * s).round() as u32).max(1);
    if (ow, oh) != (w, h) {
        out = ops::resize_nearest(&out, ow, oh)?;
        steps.push(Step::Resize {
            sx: ow as f64 / w as f64,
            sy: oh as f64 / h as f64,
        });
    }
    Ok((out, steps))
}

fn transform<L: BoxLabels>(labels: &L, record: &TransformRecord) -> Result<L> {
    labels.map_boxes(&|b| record.forward_box(b))
}

/// Random horizontal flip and bounded resize.
pub fn apply_weak<L: BoxLabels>(
    img: &Image,
    labels: &L,
    seed: u64,
    cfg: &AugmentConfig,
) -> Result<(Image, L, TransformRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, steps) = geometric_steps(img, &mut rng, cfg)?;
    let record = TransformRecord {
        source: (img.width(), img.height()),
        output: (out.width(), out.height()),
        steps,
    };
    let labels = transform(labels, &record)?;
    Ok((out, labels, record))
}

/// Weak geometry followed by intensity jitter and, at random, a blur and
/// an erased rectangle.
pub fn apply_strong<L: BoxLabels>(
    img: &Image,
    labels: &L,
    seed: u64,
    cfg: &AugmentConfig,
) -> Result<(Image, L, TransformRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut out, mut steps) = geometric_steps(img, &mut rng, cfg)?;
    let first = cfg.photometric_from_channel;
    let gain = uniform(&mut rng, cfg.jitter_gain.0, cfg.jitter_gain.1);
    let bias = uniform(&mut rng, cfg.jitter_bias.0, cfg.jitter_bias.1);
    ops::jitter(&mut out, gain, bias, first);
    steps.push(Step::Photometric(Photometric::Jitter { gain, bias }));
    if rng.random_bool(cfg.blur_prob) {
        ops::blur(&mut out, first);
        steps.push(Step::Photometric(Photometric::Blur));
    }
    if rng.random_bool(cfg.erase_prob) {
        let (w, h) = (out.width(), out.height());
        let ew = rng.random_range(1..=((w as f64 * cfg.erase_max_frac) as u32).max(1));
        let eh = rng.random_range(1..=((h as f64 * cfg.erase_max_frac) as u32).max(1));
        let x = rng.random_range(0..=w - ew.min(w));
        let y = rng.random_range(0..=h - eh.min(h));
        ops::erase(&mut out, x, y, ew, eh, 0, first);
        steps.push(Step::Photometric(Photometric::Erase {
            x,
            y,
            width: ew,
            height: eh,
        }));
    }
    let record = TransformRecord {
        source: (img.width(), img.height()),
        output: (out.width(), out.height()),
        steps,
    };
    let labels = transform(labels, &record)?;
    Ok((out, labels, record))
}

/// Padding fires for images dominated by the human box, on the lower half
/// of the draw.
pub fn pad_triggers(human_area: f64, image_area: f64, p: f64) -> bool {
    human_area > 0.5 * image_area && p <= 0.5
}

/// Pads with random margins when [`pad_triggers`] holds; otherwise returns
/// the inputs unchanged. The returned record is the identity when no
/// padding happened.
pub fn random_pad(
    img: &Image,
    ann: &InitialAnnotation,
    p: f64,
    seed: u64,
    cfg: &AugmentConfig,
) -> Result<(Image, InitialAnnotation, TransformRecord)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("pad draw {p} outside [0, 1]")));
    }
    let (w, h) = (img.width(), img.height());
    if !pad_triggers(ann.human_box.area(), img.area(), p) {
        return Ok((img.clone(), *ann, TransformRecord::identity(w, h)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mx = (w as f64 * cfg.pad_max_frac) as u32;
    let my = (h as f64 * cfg.pad_max_frac) as u32;
    let (left, right) = (rng.random_range(0..=mx), rng.random_range(0..=mx));
    let (top, bottom) = (rng.random_range(0..=my), rng.random_range(0..=my));
    let out = ops::pad(img, left, top, right, bottom, cfg.pad_fill)?;
    let record = TransformRecord {
        source: (w, h),
        output: (out.width(), out.height()),
        steps: vec![Step::Pad {
            left,
            top,
            right,
            bottom,
        }],
    };
    let ann = transform(ann, &record)?;
    Ok((out, ann, record))
}

/// Moves labels from the weak view to the strong view of the same image.
pub fn transfer_labels<L: BoxLabels>(
    labels: &L,
    weak: &TransformRecord,
    strong: &TransformRecord,
) -> Result<L> {
    if weak.source != strong.source {
        return Err(Error::InvalidRecord(format!(
            "weak view comes from a {:?} image but strong view from {:?}",
            weak.source, strong.source
        )));
    }
    labels.map_boxes(&|b| strong.forward_box(&weak.inverse_box(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn img(w: u32, h: u32) -> Image {
        let px = (0..w * h * 3).map(|i| (i * 7 % 256) as u8).collect();
        Image::new(w, h, 3, px).unwrap()
    }

    fn identity_cfg() -> AugmentConfig {
        AugmentConfig {
            flip_prob: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            ..AugmentConfig::default()
        }
    }

    #[test]
    fn identity_draw_keeps_boxes() {
        let b = bx(1., 2., 5., 7.);
        let (out, l, rec) = apply_weak(&img(10, 10), &b, 3, &identity_cfg()).unwrap();
        assert_eq!(l, b);
        assert!(rec.is_identity());
        assert_eq!(out, img(10, 10));
    }

    #[test]
    fn flip_maps_box() {
        let cfg = AugmentConfig {
            flip_prob: 1.0,
            ..identity_cfg()
        };
        let (_, l, _) = apply_weak(&img(10, 4), &bx(1., 0., 3., 2.), 0, &cfg).unwrap();
        assert_eq!(l, bx(7., 0., 9., 2.));
    }

    #[test]
    fn strong_is_seeded_and_photometric_only_keeps_boxes() {
        let b = bx(1., 2., 5., 7.);
        let cfg = AugmentConfig::default();
        let a = apply_strong(&img(20, 16), &b, 9, &cfg).unwrap();
        let c = apply_strong(&img(20, 16), &b, 9, &cfg).unwrap();
        assert_eq!(a.2, c.2);
        assert_eq!(a.0, c.0);
        let (_, l, rec) = apply_strong(&img(20, 16), &b, 4, &identity_cfg()).unwrap();
        assert_eq!(l, b);
        assert!(rec.steps.iter().all(|s| matches!(s, Step::Photometric(_))));
    }

    #[test]
    fn strong_geometry_matches_student_view() {
        let rec = TransformRecord {
            source: (10, 10),
            output: (12, 12),
            steps: vec![
                Step::Hflip { width: 10 },
                Step::Resize { sx: 1.2, sy: 1.2 },
                Step::Photometric(Photometric::Blur),
            ],
        };
        let teacher = bx(1., 1., 3., 4.);
        let student = rec.geometric().forward_box(&teacher).unwrap();
        assert!(student.approx_eq(&bx(8.4, 1.2, 10.8, 4.8), 1e-12));
        assert_eq!(rec.forward_box(&teacher).unwrap(), student);
    }

    #[test]
    fn pad_examples() {
        let cfg = AugmentConfig::default();
        let image = img(10, 10);
        let ann = InitialAnnotation::new(0, 0, bx(0., 0., 8., 8.), bx(8., 8., 10., 10.));
        let (out, a2, rec) = random_pad(&image, &ann, 0.3, 1, &cfg).unwrap();
        let Step::Pad { left, top, right, bottom } = rec.steps[0] else {
            panic!("expected a pad step");
        };
        assert!(left <= 5 && top <= 5 && right <= 5 && bottom <= 5);
        assert_eq!((out.width(), out.height()), (10 + left + right, 10 + top + bottom));
        assert_eq!(a2.human_box, ann.human_box.translate(left as f64, top as f64));
        if left > 0 && top > 0 {
            assert_eq!(out.get(0, 0, 0), 128);
        }
        let (same, a3, rec) = random_pad(&image, &ann, 0.6, 1, &cfg).unwrap();
        assert!(rec.is_identity());
        assert_eq!((same, a3), (image.clone(), ann));
        let small = InitialAnnotation::new(0, 0, bx(0., 0., 5., 5.), bx(5., 5., 6., 6.));
        assert!(random_pad(&image, &small, 0.1, 1, &cfg).unwrap().2.is_identity());
    }

    #[test]
    fn pad_trigger_boundaries() {
        assert!(!pad_triggers(50.0, 100.0, 0.1));
        assert!(pad_triggers(50.000001, 100.0, 0.5));
        assert!(!pad_triggers(60.0, 100.0, 0.500001));
    }

    #[test]
    fn transfer_cases() {
        let labels = PseudoLabelSet {
            tau_bin: 0.5,
            triplets: vec![PseudoTriplet {
                interactions: vec![0, 1],
                object: 3,
                human_box: bx(7., 0., 9., 2.),
                object_box: bx(1., 1., 2., 2.),
            }],
        };
        let weak = TransformRecord {
            source: (10, 10),
            output: (10, 10),
            steps: vec![Step::Hflip { width: 10 }],
        };
        let strong = TransformRecord::identity(10, 10);
        let moved = transfer_labels(&labels, &weak, &strong).unwrap();
        assert_eq!(moved.triplets[0].human_box, bx(1., 0., 3., 2.));
        assert_eq!(moved.triplets[0].interactions, vec![0, 1]);
        assert_eq!(moved.triplets[0].object, 3);
        assert_eq!(transfer_labels(&labels, &weak, &weak).unwrap(), labels);
        let other = TransformRecord::identity(11, 10);
        assert!(matches!(
            transfer_labels(&labels, &weak, &other),
            Err(Error::InvalidRecord(_))
        ));
    }

    #[test]
    fn records_serialize() {
        let rec = TransformRecord {
            source: (4, 4),
            output: (8, 8),
            steps: vec![
                Step::Resize { sx: 2.0, sy: 2.0 },
                Step::Photometric(Photometric::Jitter { gain: 1.1, bias: -3.0 }),
            ],
        };
        let s = serde_json::to_string(&rec).unwrap();
        assert_eq!(serde_json::from_str::<TransformRecord>(&s).unwrap(), rec);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..50.0f64, 0.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn forward_inverse_roundtrip(b in arb_box(), seed in any::<u64>(), strong in any::<bool>()) {
            let image = img(64, 48);
            let cfg = AugmentConfig::default();
            let (_, fwd, rec) = if strong {
                apply_strong(&image, &b, seed, &cfg).unwrap()
            } else {
                apply_weak(&image, &b, seed, &cfg).unwrap()
            };
            prop_assert!(fwd.validate().is_ok());
            prop_assert!(rec.inverse_box(&fwd).unwrap().approx_eq(&b, 1e-9));
        }

        #[test]
        fn transfer_with_shared_geometry_is_identity(b in arb_box(), seed in any::<u64>()) {
            let image = img(64, 48);
            let cfg = AugmentConfig::default();
            let (_, _, weak) = apply_weak(&image, &b, seed, &cfg).unwrap();
            let moved = transfer_labels(&b, &weak, &weak).unwrap();
            prop_assert!(moved.approx_eq(&b, 1e-9));
        }
    }
}
