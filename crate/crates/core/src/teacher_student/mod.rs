//! Teacher-student training over real and curated images: an EMA teacher
//! labels weak views of curated images, labels move to the strong view,
//! and the student steps on the summed loss of three streams.

mod checkpoint;
mod toy_detector;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::amf::{InitialAnnotation, PredictionSet, PseudoLabelSet, PseudoTriplet};
use crate::error::{Error, Result};
use crate::geometry::Image;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    CheckpointMeta,
};
pub use toy_detector::ToyDetector;
pub use trainer::{EpochReport, RealSample, TrainConfig, Trainer, VirtualItem};

/// What the training loop needs from a detector.
pub trait Detector: Clone + Send + Sync {
    fn num_params(&self) -> usize;

    fn num_actions(&self) -> usize;

    fn parameters(&self) -> &[f64];

    fn load(&mut self, params: &[f64]) -> Result<()>;

    /// `true` for classification-head parameters.
    fn head_mask(&self) -> Vec<bool>;

    /// `None` when the image yields no candidate pairs.
    fn predict(&self, img: &Image) -> Result<Option<PredictionSet>>;

    /// Detection loss against multi-hot targets, with its gradient.
    fn loss_and_grad(&self, img: &Image, targets: &[PseudoTriplet]) -> Result<(f64, Vec<f64>)>;

    fn loss(&self, img: &Image, targets: &[PseudoTriplet]) -> Result<f64> {
        Ok(self.loss_and_grad(img, targets)?.0)
    }
}

/// Exponential moving average of student parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub params: Vec<f64>,
    pub alpha: f64,
}

impl EmaState {
    pub fn new(params: Vec<f64>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        Ok(EmaState { params, alpha })
    }

    /// `teacher <- alpha * teacher + (1 - alpha) * student`.
    pub fn update(&mut self, student: &[f64]) -> Result<()> {
        if student.len() != self.params.len() {
            return Err(Error::InvalidState(format!(
                "teacher has {} parameters, student {}",
                self.params.len(),
                student.len()
            )));
        }
        let a = self.alpha;
        for (t, s) in self.params.iter_mut().zip(student) {
            // equal entries stay bit-identical
            if *t != *s {
                *t = a * *t + (1.0 - a) * s;
            }
        }
        Ok(())
    }
}

pub fn ema_update(state: &EmaState, student: &[f64]) -> Result<EmaState> {
    let mut next = state.clone();
    next.update(student)?;
    Ok(next)
}

/// Ground truth as targets: one interaction bit per annotation.
pub fn one_hot_targets(anns: &[InitialAnnotation], num_actions: usize) -> Vec<PseudoTriplet> {
    anns.iter()
        .map(|a| {
            let mut bits = vec![0u8; num_actions];
            bits[a.action] = 1;
            PseudoTriplet {
                interactions: bits,
                object: a.object,
                human_box: a.human_box,
                object_box: a.object_box,
            }
        })
        .collect()
}

/// An image view with its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledView {
    pub image: Image,
    pub targets: Vec<PseudoTriplet>,
}

/// A strong view of a curated image and, once labeled, its pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualView {
    pub image: Image,
    pub labels: Option<PseudoLabelSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealViews {
    pub strong: LabeledView,
    pub weak: LabeledView,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub virtual_strong: f64,
    pub real_strong: f64,
    pub real_weak: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.virtual_strong + self.real_strong + self.real_weak
    }
}

/// Per-stream gradients of the total loss.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamGradients {
    pub losses: LossBreakdown,
    pub virtual_grad: Vec<f64>,
    pub real_grad: Vec<f64>,
}

fn sum_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Summed loss and gradient of each stream, with no reweighting.
pub fn stream_gradients<D: Detector>(
    student: &D,
    virtual_batch: &[VirtualView],
    real_batch: &[RealViews],
) -> Result<StreamGradients> {
    use rayon::prelude::*;
    let n = student.num_params();
    let virt: Vec<(f64, Vec<f64>)> = virtual_batch
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let labels = v.labels.as_ref().ok_or_else(|| {
                Error::Pipeline(format!("virtual sample {i} has no pseudo-labels"))
            })?;
            student.loss_and_grad(&v.image, &labels.triplets)
        })
        .collect::<Result<_>>()?;
    let real: Vec<[(f64, Vec<f64>); 2]> = real_batch
        .par_iter()
        .map(|r| {
            Ok([
                student.loss_and_grad(&r.strong.image, &r.strong.targets)?,
                student.loss_and_grad(&r.weak.image, &r.weak.targets)?,
            ])
        })
        .collect::<Result<_>>()?;
    let mut out = StreamGradients {
        losses: LossBreakdown::default(),
        virtual_grad: vec![0.0; n],
        real_grad: vec![0.0; n],
    };
    for (l, g) in &virt {
        out.losses.virtual_strong += l;
        sum_into(&mut out.virtual_grad, g);
    }
    for [(ls, gs), (lw, gw)] in &real {
        out.losses.real_strong += ls;
        out.losses.real_weak += lw;
        sum_into(&mut out.real_grad, gs);
        sum_into(&mut out.real_grad, gw);
    }
    Ok(out)
}

pub fn total_loss<D: Detector>(
    student: &D,
    virtual_batch: &[VirtualView],
    real_batch: &[RealViews],
) -> Result<f64> {
    let mut total = 0.0;
    for (i, v) in virtual_batch.iter().enumerate() {
        let labels = v
            .labels
            .as_ref()
            .ok_or_else(|| Error::Pipeline(format!("virtual sample {i} has no pseudo-labels")))?;
        total += student.loss(&v.image, &labels.triplets)?;
    }
    for r in real_batch {
        total += student.loss(&r.strong.image, &r.strong.targets)?;
        total += student.loss(&r.weak.image, &r.weak.targets)?;
    }
    Ok(total)
}
