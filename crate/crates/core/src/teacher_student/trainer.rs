//! Epoch orchestration: a threshold pass over the curated set, then
//! batched student steps with an EMA teacher update after each.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    one_hot_targets, stream_gradients, Detector, EmaState, LabeledView, LossBreakdown, RealViews,
    VirtualView,
};
use crate::amf::{AmfConfig, AmfRunner, InitialAnnotation, PseudoLabelSet};
use crate::augmentation::{
    apply_strong, apply_weak, random_pad, transfer_labels, AugmentConfig, TransformRecord,
};
use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::seed;

/// A real image with its ground-truth pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSample {
    pub image: Image,
    pub annotations: Vec<InitialAnnotation>,
}

/// A curated image with the single annotation it was generated for.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualItem {
    pub image: Image,
    pub annotation: InitialAnnotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    /// Real images per step; curated images are spread evenly over the steps.
    pub batch_size: usize,
    /// Zero non-head gradients coming from the curated stream.
    pub freeze_heads: bool,
    /// Random padding of curated images before both views.
    pub pad: bool,
    pub seed: u64,
    pub amf: AmfConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.9996,
            learning_rate: 0.05,
            batch_size: 8,
            freeze_heads: true,
            pad: true,
            seed: 0,
            amf: AmfConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.amf.validate()?;
        self.augment.validate()
    }
}

/// What happened during one epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    pub tau_bin: Option<f64>,
    /// Curated images that received pseudo-labels.
    pub labeled: usize,
    /// Curated images the teacher produced no candidates for.
    pub skipped: usize,
    pub pseudo_triplets: usize,
    /// Matches where localization cost was dropped.
    pub dropped_localization: usize,
    pub losses: LossBreakdown,
    /// Largest |gradient| on non-head parameters from the curated stream,
    /// after masking.
    pub masked_virtual_grad_max: f64,
}

// Stream tags keep curated-set randomness apart from the real stream, so
// an empty curated set leaves the real trajectory untouched.
const REAL_STREAM: u64 = 1;
const VIRTUAL_STREAM: u64 = 2;
const SHUFFLE: u64 = 3;

const VIEW_WEAK: u64 = 0;
const VIEW_STRONG: u64 = 1;
const VIEW_PAD_DRAW: u64 = 2;
const VIEW_PAD: u64 = 3;

struct PreparedVirtual {
    weak: Image,
    weak_ann: InitialAnnotation,
    weak_record: TransformRecord,
    strong: Image,
    strong_record: TransformRecord,
}

struct Collected {
    epoch: usize,
    runner: AmfRunner,
}

pub struct Trainer<D: Detector> {
    student: D,
    teacher: D,
    ema: EmaState,
    config: TrainConfig,
    epoch: usize,
    collected: Option<Collected>,
}

impl<D: Detector> Trainer<D> {
    /// Student and teacher both start from `initial`.
    pub fn new(initial: D, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let ema = EmaState::new(initial.parameters().to_vec(), config.alpha)?;
        Ok(Trainer {
            teacher: initial.clone(),
            student: initial,
            ema,
            config,
            epoch: 0,
            collected: None,
        })
    }

    /// Resumes from separate student and teacher parameters.
    pub fn resume(mut detector: D, student: &[f64], teacher: &[f64], epoch: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        detector.load(student)?;
        let mut t = detector.clone();
        t.load(teacher)?;
        Ok(Trainer {
            ema: EmaState::new(teacher.to_vec(), config.alpha)?,
            student: detector,
            teacher: t,
            config,
            epoch,
            collected: None,
        })
    }

    pub fn student(&self) -> &D {
        &self.student
    }

    pub fn teacher(&self) -> &D {
        &self.teacher
    }

    pub fn ema(&self) -> &EmaState {
        &self.ema
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Index of the next epoch to run.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn virtual_seed(&self, epoch: usize, item: usize, view: u64) -> u64 {
        seed::derive(self.config.seed, &[VIRTUAL_STREAM, epoch as u64, item as u64, view])
    }

    fn real_seed(&self, epoch: usize, item: usize, view: u64) -> u64 {
        seed::derive(self.config.seed, &[REAL_STREAM, epoch as u64, item as u64, view])
    }

    fn prepare(&self, item: &VirtualItem, epoch: usize, index: usize) -> Result<PreparedVirtual> {
        let cfg = &self.config.augment;
        let (img, ann) = if self.config.pad {
            let mut draw = ChaCha8Rng::seed_from_u64(self.virtual_seed(epoch, index, VIEW_PAD_DRAW));
            let p: f64 = draw.random();
            let seed = self.virtual_seed(epoch, index, VIEW_PAD);
            let (img, ann, _) = random_pad(&item.image, &item.annotation, p, seed, cfg)?;
            (img, ann)
        } else {
            (item.image.clone(), item.annotation)
        };
        let (weak, weak_ann, weak_record) =
            apply_weak(&img, &ann, self.virtual_seed(epoch, index, VIEW_WEAK), cfg)?;
        let (strong, _, strong_record) =
            apply_strong(&img, &ann, self.virtual_seed(epoch, index, VIEW_STRONG), cfg)?;
        Ok(PreparedVirtual {
            weak,
            weak_ann,
            weak_record,
            strong,
            strong_record,
        })
    }

    /// Threshold pass: the current teacher scores the weak view of every
    /// curated image and the pooled scores fix this epoch's threshold.
    /// Returns `None` for an empty curated set.
    pub fn collect_threshold(&mut self, virtual_set: &[VirtualItem]) -> Result<Option<f64>> {
        let epoch = self.epoch;
        let mut runner = AmfRunner::new(self.config.amf.clone())?;
        if virtual_set.is_empty() {
            self.collected = Some(Collected { epoch, runner });
            return Ok(None);
        }
        let preds = virtual_set
            .par_iter()
            .enumerate()
            .map(|(i, item)| {
                let view = self.prepare(item, epoch, i)?;
                self.teacher.predict(&view.weak)
            })
            .collect::<Result<Vec<_>>>()?;
        for p in preds.iter().flatten() {
            runner.collect(p)?;
        }
        if runner.images() == 0 {
            return Err(Error::Pipeline(
                "teacher found no candidate pairs in any curated image".into(),
            ));
        }
        let tau = runner.finish_collection()?;
        self.collected = Some(Collected { epoch, runner });
        Ok(Some(tau))
    }

    fn label_virtual(
        &self,
        runner: &AmfRunner,
        item: &VirtualItem,
        epoch: usize,
        index: usize,
    ) -> Result<Option<(VirtualView, bool)>> {
        let view = self.prepare(item, epoch, index)?;
        let Some(preds) = self.teacher.predict(&view.weak)? else {
            return Ok(None);
        };
        let size = (view.weak.width(), view.weak.height());
        let (corr, labels) = runner.label(&preds, &view.weak_ann, size)?;
        let moved: PseudoLabelSet = transfer_labels(&labels, &view.weak_record, &view.strong_record)?;
        Ok(Some((
            VirtualView {
                image: view.strong,
                labels: Some(moved),
            },
            corr.dropped_localization,
        )))
    }

    fn real_views(&self, sample: &RealSample, epoch: usize, index: usize) -> Result<RealViews> {
        let cfg = &self.config.augment;
        let targets = one_hot_targets(&sample.annotations, self.student.num_actions());
        let (strong, st, _) = apply_strong(&sample.image, &targets, self.real_seed(epoch, index, VIEW_STRONG), cfg)?;
        let (weak, wt, _) = apply_weak(&sample.image, &targets, self.real_seed(epoch, index, VIEW_WEAK), cfg)?;
        Ok(RealViews {
            strong: LabeledView { image: strong, targets: st },
            weak: LabeledView { image: weak, targets: wt },
        })
    }

    /// Student steps over one epoch. Needs [`Trainer::collect_threshold`]
    /// for this epoch first whenever the curated set is non-empty.
    pub fn train_steps(
        &mut self,
        virtual_set: &[VirtualItem],
        real_set: &[RealSample],
    ) -> Result<EpochReport> {
        let epoch = self.epoch;
        let collected = self.collected.take();
        let runner = match collected {
            Some(c) if c.epoch == epoch => Some(c.runner),
            _ if virtual_set.is_empty() => None,
            _ => {
                return Err(Error::Ordering(format!(
                    "threshold collection has not run for epoch {epoch}"
                )))
            }
        };
        let mut report = EpochReport {
            epoch,
            tau_bin: runner.as_ref().and_then(|r| r.tau_bin()),
            ..EpochReport::default()
        };

        let mut real_order: Vec<usize> = (0..real_set.len()).collect();
        let mut virt_order: Vec<usize> = (0..virtual_set.len()).collect();
        real_order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(
            self.config.seed,
            &[SHUFFLE, epoch as u64, REAL_STREAM],
        )));
        virt_order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(
            self.config.seed,
            &[SHUFFLE, epoch as u64, VIRTUAL_STREAM],
        )));
        let b = self.config.batch_size;
        let steps = if real_set.is_empty() {
            virtual_set.len().div_ceil(b)
        } else {
            real_set.len().div_ceil(b)
        };
        let mask = self.student.head_mask();

        for step in 0..steps {
            let real_idx = &real_order[(step * b).min(real_order.len())..((step + 1) * b).min(real_order.len())];
            let v_lo = step * virt_order.len() / steps;
            let v_hi = (step + 1) * virt_order.len() / steps;
            let virt_idx = &virt_order[v_lo..v_hi];

            let virt_views: Vec<(VirtualView, bool)> = match &runner {
                Some(r) => virt_idx
                    .par_iter()
                    .map(|&i| self.label_virtual(r, &virtual_set[i], epoch, i))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .flatten()
                    .collect(),
                None => Vec::new(),
            };
            report.skipped += virt_idx.len() - virt_views.len();
            report.labeled += virt_views.len();
            for (v, dropped) in &virt_views {
                report.pseudo_triplets += v.labels.as_ref().map_or(0, |l| l.triplets.len());
                report.dropped_localization += *dropped as usize;
            }
            let virt_views: Vec<VirtualView> = virt_views.into_iter().map(|(v, _)| v).collect();
            let real_views = real_idx
                .par_iter()
                .map(|&i| self.real_views(&real_set[i], epoch, i))
                .collect::<Result<Vec<_>>>()?;

            let mut grads = stream_gradients(&self.student, &virt_views, &real_views)?;
            if self.config.freeze_heads {
                for (g, &head) in grads.virtual_grad.iter_mut().zip(&mask) {
                    if !head {
                        *g = 0.0;
                    }
                }
            }
            for (g, &head) in grads.virtual_grad.iter().zip(&mask) {
                if !head {
                    report.masked_virtual_grad_max = report.masked_virtual_grad_max.max(g.abs());
                }
            }
            report.losses.virtual_strong += grads.losses.virtual_strong;
            report.losses.real_strong += grads.losses.real_strong;
            report.losses.real_weak += grads.losses.real_weak;

            let lr = self.config.learning_rate;
            let next: Vec<f64> = self
                .student
                .parameters()
                .iter()
                .zip(grads.virtual_grad.iter().zip(&grads.real_grad))
                .map(|(p, (gv, gr))| p - lr * (gv + gr))
                .collect();
            self.student.load(&next)?;
            self.ema.update(self.student.parameters())?;
            self.teacher.load(&self.ema.params)?;
            report.steps += 1;
        }
        self.epoch += 1;
        Ok(report)
    }

    /// Threshold pass followed by the training steps.
    pub fn run_epoch(
        &mut self,
        virtual_set: &[VirtualItem],
        real_set: &[RealSample],
    ) -> Result<EpochReport> {
        self.collect_threshold(virtual_set)?;
        self.train_steps(virtual_set, real_set)
    }
}
