//! A small differentiable pair scorer over toy-world images.
//!
//! Proposals are every (human, object) pair recovered from the marker plane.
//! Each proposal is described by pooled appearance histograms of both
//! regions, a few layout features and a bias. A per-feature gain feeds two
//! linear heads: sigmoid interaction scores and a softmax over object
//! classes plus no-object. Two global box offsets refine the boxes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Checkpoint, Detector};
use crate::amf::{Prediction, PredictionSet, PseudoTriplet};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Image};
use crate::synth::{scan, Role, ScannedInstance};

const BINS: usize = 32;
const LAYOUT: usize = 4;
const FEATURES: usize = 2 * BINS + LAYOUT + 1;
const MATCH_IOU: f64 = 0.5;
const TAG_PREFIX: &str = "toy-pair-scorer/";

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetector {
    num_actions: usize,
    num_objects: usize,
    params: Vec<f64>,
}

struct Proposal {
    human: BBox,
    object: BBox,
    features: Vec<f64>,
}

struct Forward {
    gained: Vec<f64>,
    action_scores: Vec<f64>,
    object_probs: Vec<f64>,
}

fn pooled_hist(inst: &ScannedInstance) -> impl Iterator<Item = f64> + '_ {
    let per = 256 / BINS;
    let n = inst.pixel_count.max(1) as f64;
    (0..BINS).map(move |b| {
        inst.appearance_hist[b * per..(b + 1) * per]
            .iter()
            .sum::<u32>() as f64
            / n
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Smooth L1 with unit transition point, and its derivative.
fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

fn offset_box(b: &BBox, d: &[f64]) -> BBox {
    BBox {
        x1: b.x1 + d[0],
        y1: b.y1 + d[1],
        x2: b.x2 + d[2],
        y2: b.y2 + d[3],
    }
}

impl ToyDetector {
    pub fn new(num_actions: usize, num_objects: usize, seed: u64) -> Self {
        let mut d = ToyDetector {
            num_actions,
            num_objects,
            params: vec![0.0; Self::param_count(num_actions, num_objects)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Normal::new(0.0, 0.01).expect("valid normal");
        let head = d.head_len();
        for p in &mut d.params[..head] {
            *p = init.sample(&mut rng);
        }
        let g = d.gain_offset();
        d.params[g..g + FEATURES].fill(1.0);
        d
    }

    pub fn param_count(num_actions: usize, num_objects: usize) -> usize {
        let head = num_actions * (FEATURES + 1) + (num_objects + 1) * (FEATURES + 1);
        head + FEATURES + 8
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Identifier stored in checkpoints, carrying the class counts.
    pub fn tag(&self) -> String {
        format!("{TAG_PREFIX}{}x{}", self.num_actions, self.num_objects)
    }

    /// Student and teacher from a checkpoint written for this detector.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(ToyDetector, ToyDetector)> {
        let dims = ck
            .meta
            .detector
            .strip_prefix(TAG_PREFIX)
            .and_then(|d| d.split_once('x'))
            .and_then(|(a, o)| Some((a.parse::<usize>().ok()?, o.parse::<usize>().ok()?)));
        let Some((a, o)) = dims else {
            return Err(Error::InvalidInput(format!("checkpoint is for detector `{}`", ck.meta.detector)));
        };
        let mut student = ToyDetector::new(a, o, 0);
        let mut teacher = student.clone();
        student.load(&ck.student)?;
        teacher.load(&ck.teacher)?;
        Ok((student, teacher))
    }

    pub fn num_objects(&self) -> usize {
        self.num_objects
    }

    fn action_weights(&self) -> usize {
        0
    }

    fn action_bias(&self) -> usize {
        self.num_actions * FEATURES
    }

    fn object_weights(&self) -> usize {
        self.action_bias() + self.num_actions
    }

    fn object_bias(&self) -> usize {
        self.object_weights() + (self.num_objects + 1) * FEATURES
    }

    fn head_len(&self) -> usize {
        self.object_bias() + self.num_objects + 1
    }

    fn gain_offset(&self) -> usize {
        self.head_len()
    }

    fn human_delta(&self) -> usize {
        self.gain_offset() + FEATURES
    }

    fn object_delta(&self) -> usize {
        self.human_delta() + 4
    }

    fn proposals(&self, img: &Image) -> Vec<Proposal> {
        let found = scan(img);
        let (w, h) = (img.width() as f64, img.height() as f64);
        let humans: Vec<_> = found.iter().filter(|i| i.role == Role::Human).collect();
        let objects: Vec<_> = found.iter().filter(|i| i.role == Role::Object).collect();
        let mut out = Vec::with_capacity(humans.len() * objects.len());
        for hu in &humans {
            for ob in &objects {
                let (hc, oc) = (hu.bbox.center(), ob.bbox.center());
                let mut f: Vec<f64> = pooled_hist(hu).chain(pooled_hist(ob)).collect();
                f.push((oc.0 - hc.0) / w);
                f.push((oc.1 - hc.1) / h);
                f.push((ob.bbox.area() / hu.bbox.area()).ln() / 4.0);
                f.push(iou(&hu.bbox, &ob.bbox));
                f.push(1.0);
                out.push(Proposal {
                    human: hu.bbox,
                    object: ob.bbox,
                    features: f,
                });
            }
        }
        out
    }

    fn forward(&self, features: &[f64]) -> Forward {
        let p = &self.params;
        let g = self.gain_offset();
        let gained: Vec<f64> = features.iter().zip(&p[g..g + FEATURES]).map(|(f, w)| f * w).collect();
        let dot = |row: usize| -> f64 {
            p[row..row + FEATURES]
                .iter()
                .zip(&gained)
                .map(|(a, b)| a * b)
                .sum()
        };
        let action_scores = (0..self.num_actions)
            .map(|k| sigmoid(dot(self.action_weights() + k * FEATURES) + p[self.action_bias() + k]))
            .collect();
        let logits: Vec<f64> = (0..=self.num_objects)
            .map(|k| dot(self.object_weights() + k * FEATURES) + p[self.object_bias() + k])
            .collect();
        Forward {
            gained,
            action_scores,
            object_probs: softmax(&logits),
        }
    }

    fn refined(&self, b: &BBox, delta_at: usize, img: &Image) -> BBox {
        let r = offset_box(b, &self.params[delta_at..delta_at + 4]);
        r.clip(img.width(), img.height()).unwrap_or(*b)
    }

    fn best_match<'a>(&self, prop: &Proposal, targets: &'a [PseudoTriplet]) -> Option<&'a PseudoTriplet> {
        let mut best: Option<(f64, &PseudoTriplet)> = None;
        for t in targets {
            let q = iou(&prop.human, &t.human_box).min(iou(&prop.object, &t.object_box));
            if q >= MATCH_IOU && best.is_none_or(|(b, _)| q > b) {
                best = Some((q, t));
            }
        }
        best.map(|(_, t)| t)
    }

    fn check_targets(&self, targets: &[PseudoTriplet]) -> Result<()> {
        for t in targets {
            if t.interactions.len() != self.num_actions || t.object >= self.num_objects {
                return Err(Error::InvalidShape(format!(
                    "target with {} interaction bits and object {} does not fit {} actions x {} objects",
                    t.interactions.len(),
                    t.object,
                    self.num_actions,
                    self.num_objects
                )));
            }
        }
        Ok(())
    }
}

impl Detector for ToyDetector {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn load(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::InvalidState(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn head_mask(&self) -> Vec<bool> {
        let head = self.head_len();
        (0..self.params.len()).map(|i| i < head).collect()
    }

    fn predict(&self, img: &Image) -> Result<Option<PredictionSet>> {
        let props = self.proposals(img);
        if props.is_empty() {
            return Ok(None);
        }
        let entries = props
            .iter()
            .map(|p| {
                let f = self.forward(&p.features);
                Prediction::new(
                    self.refined(&p.human, self.human_delta(), img),
                    self.refined(&p.object, self.object_delta(), img),
                    f.object_probs,
                    f.action_scores,
                )
            })
            .collect();
        PredictionSet::new(self.num_actions, self.num_objects, entries).map(Some)
    }

    fn loss_and_grad(&self, img: &Image, targets: &[PseudoTriplet]) -> Result<(f64, Vec<f64>)> {
        self.check_targets(targets)?;
        let mut grad = vec![0.0; self.params.len()];
        let props = self.proposals(img);
        if props.is_empty() {
            return Ok((0.0, grad));
        }
        let (w, h) = (img.width() as f64, img.height() as f64);
        let scale = 1.0 / props.len() as f64;
        let p = &self.params;
        let g = self.gain_offset();
        let mut loss = 0.0;
        for prop in &props {
            let f = self.forward(&prop.features);
            let target = self.best_match(prop, targets);
            let mut d_gained = vec![0.0; FEATURES];

            for k in 0..self.num_actions {
                let t = target.map_or(0.0, |t| f64::from(t.interactions[k]));
                let s = f.action_scores[k].clamp(1e-12, 1.0 - 1e-12);
                loss -= scale * (t * s.ln() + (1.0 - t) * (1.0 - s).ln());
                let dz = scale * (f.action_scores[k] - t);
                let row = self.action_weights() + k * FEATURES;
                for j in 0..FEATURES {
                    grad[row + j] += dz * f.gained[j];
                    d_gained[j] += dz * p[row + j];
                }
                grad[self.action_bias() + k] += dz;
            }

            let cls = target.map_or(self.num_objects, |t| t.object);
            loss -= scale * f.object_probs[cls].max(1e-300).ln();
            for k in 0..=self.num_objects {
                let dz = scale * (f.object_probs[k] - f64::from(u8::from(k == cls)));
                let row = self.object_weights() + k * FEATURES;
                for j in 0..FEATURES {
                    grad[row + j] += dz * f.gained[j];
                    d_gained[j] += dz * p[row + j];
                }
                grad[self.object_bias() + k] += dz;
            }

            for j in 0..FEATURES {
                grad[g + j] += d_gained[j] * prop.features[j];
            }

            if let Some(t) = target {
                for (at, from, to) in [
                    (self.human_delta(), &prop.human, &t.human_box),
                    (self.object_delta(), &prop.object, &t.object_box),
                ] {
                    let pred = offset_box(from, &p[at..at + 4]).to_array();
                    let goal = to.to_array();
                    for c in 0..4 {
                        let norm = if c % 2 == 0 { w } else { h };
                        let (l, dl) = smooth_l1((pred[c] - goal[c]) / norm);
                        loss += scale * l;
                        grad[at + c] += scale * dl / norm;
                    }
                }
            }
        }
        Ok((loss, grad))
    }
}
