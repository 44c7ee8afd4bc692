use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filters::{instance_existence, interactiveness, SceneIndex};
use super::lexicon::{Lexicon, WordSets};
use super::prompt::{build_prompt, PromptSpec};
use super::{CategoryPair, FilterVerdict, MusicConfig, Stage};
use crate::amf::InitialAnnotation;
use crate::backends::{codec, ImageId, ModelBackend};
use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::seed;

/// A generated image that passed all three filters.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSample {
    pub image: Image,
    pub annotation: InitialAnnotation,
    pub prompt: PromptSpec,
    pub verdicts: Vec<FilterVerdict>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Attempt {
    Accepted(Box<VirtualSample>),
    Rejected {
        prompt: PromptSpec,
        verdict: FilterVerdict,
    },
}

/// Result of screening one image.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterOutcome {
    Passed {
        annotation: InitialAnnotation,
        verdicts: Vec<FilterVerdict>,
    },
    /// The verdict of the first stage that failed.
    Rejected(FilterVerdict),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectStage {
    Scene,
    Instance,
    Interactiveness,
    /// Accepted image identical to one already kept for the category.
    Duplicate,
    BackendError,
}

impl From<Stage> for RejectStage {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Scene => RejectStage::Scene,
            Stage::Instance => RejectStage::Instance,
            Stage::Interactiveness => RejectStage::Interactiveness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub prompt: String,
    pub stage: RejectStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Unix seconds.
    pub timestamp: u64,
}

/// A kept sample after its image was handed to the sink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualEntry {
    pub image_id: ImageId,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub annotation: InitialAnnotation,
    pub prompt: PromptSpec,
    pub verdicts: Vec<FilterVerdict>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTally {
    pub budget: usize,
    pub attempts: usize,
    pub accepted: usize,
    pub scene: usize,
    pub instance: usize,
    pub interactiveness: usize,
    pub duplicate: usize,
    pub errors: usize,
}

impl CategoryTally {
    fn count(&mut self, stage: RejectStage) {
        match stage {
            RejectStage::Scene => self.scene += 1,
            RejectStage::Instance => self.instance += 1,
            RejectStage::Interactiveness => self.interactiveness += 1,
            RejectStage::Duplicate => self.duplicate += 1,
            RejectStage::BackendError => self.errors += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationOutput {
    /// Ordered by category, then attempt.
    pub entries: Vec<VirtualEntry>,
    pub rejections: Vec<RejectionRecord>,
    pub tallies: BTreeMap<CategoryPair, CategoryTally>,
}

/// Destination for accepted images; returns the stored path.
pub trait ImageSink: Sync {
    fn store(&self, id: &ImageId, img: &Image) -> Result<String>;
}

/// Writes `images/<id>.png` below a root directory.
pub struct DirSink {
    root: PathBuf,
}

impl DirSink {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirSink { root: root.into() }
    }
}

impl ImageSink for DirSink {
    fn store(&self, id: &ImageId, img: &Image) -> Result<String> {
        let rel = format!("images/{id}.png");
        codec::save_png(img, &self.root.join(&rel))?;
        Ok(rel)
    }
}

/// Keeps images in memory, keyed by content hash.
#[derive(Default)]
pub struct MemorySink {
    images: Mutex<BTreeMap<ImageId, Image>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_images(self) -> BTreeMap<ImageId, Image> {
        self.images.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl ImageSink for MemorySink {
    fn store(&self, id: &ImageId, img: &Image) -> Result<String> {
        self.images
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), img.clone());
        Ok(format!("mem:{id}"))
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Runs prompts through generation and the three filters.
pub struct Curator {
    backend: Arc<dyn ModelBackend>,
    lexicon: Arc<Lexicon>,
    words: WordSets,
    scenes: SceneIndex,
    config: MusicConfig,
    person_label: usize,
}

impl Curator {
    pub fn new(
        backend: Arc<dyn ModelBackend>,
        lexicon: Arc<Lexicon>,
        words: WordSets,
        scenes: SceneIndex,
        config: MusicConfig,
    ) -> Result<Self> {
        config.validate()?;
        words.validate()?;
        let person_label = lexicon
            .person_label()
            .ok_or_else(|| Error::Config("object vocabulary has no `person` entry".into()))?;
        if scenes.dim() != backend.feature_dim() {
            return Err(Error::Config(format!(
                "real scene features have dimension {} but the backend emits {}",
                scenes.dim(),
                backend.feature_dim()
            )));
        }
        Ok(Curator {
            backend,
            lexicon,
            words,
            scenes,
            config,
            person_label,
        })
    }

    pub fn config(&self) -> &MusicConfig {
        &self.config
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// One attempt: prompt, image, then the filters in order, stopping at
    /// the first failure.
    pub fn run_pipeline(&self, cat: CategoryPair, seed: u64) -> Result<Attempt> {
        let prompt = build_prompt(cat, &self.words, &self.lexicon, seed)?;
        let image = self.backend.generate_image(&prompt.text)?;
        Ok(match self.filter_image(cat, &prompt.text, &image)? {
            FilterOutcome::Passed { annotation, verdicts } => Attempt::Accepted(Box::new(VirtualSample {
                image,
                annotation,
                prompt,
                verdicts,
            })),
            FilterOutcome::Rejected(verdict) => Attempt::Rejected { prompt, verdict },
        })
    }

    /// The three filters on an existing image generated from `text`.
    pub fn filter_image(&self, cat: CategoryPair, text: &str, image: &Image) -> Result<FilterOutcome> {
        let cfg = &self.config;
        let backend = self.backend.as_ref();
        let feature = backend.scene_embed(image)?;
        let scope = cfg.scene_per_category.then_some(cat);
        let s = self.scenes.max_similarity(&feature, scope)?;
        let scene = FilterVerdict {
            stage: Stage::Scene,
            score: s,
            candidates: None,
            passed: s > cfg.tau_scene,
            chosen_pair: None,
        };
        if !scene.passed {
            return Ok(FilterOutcome::Rejected(scene));
        }

        let cands = instance_existence(image, cat.object, self.person_label, cfg.tau_det, backend)?;
        let instance = FilterVerdict {
            stage: Stage::Instance,
            score: (cands.humans.len() * cands.objects.len()) as f64,
            candidates: Some([cands.humans.len(), cands.objects.len()]),
            passed: cands.passed(),
            chosen_pair: None,
        };
        if !instance.passed {
            return Ok(FilterOutcome::Rejected(instance));
        }

        let inter = interactiveness(image, &cands.humans, &cands.objects, text, cfg.tau_inter, backend)?;
        let Some([h, o]) = inter.chosen_pair else {
            return Ok(FilterOutcome::Rejected(inter));
        };
        let annotation = InitialAnnotation::new(
            cat.action,
            cat.object,
            h.clip(image.width(), image.height())?,
            o.clip(image.width(), image.height())?,
        );
        Ok(FilterOutcome::Passed {
            annotation,
            verdicts: vec![scene, instance, inter],
        })
    }

    /// Retries each category with derived seeds until its budget is met or
    /// `attempt_factor * budget` attempts are spent. Categories run in
    /// parallel; output order does not depend on scheduling.
    pub fn generate(
        &self,
        budgets: &BTreeMap<CategoryPair, usize>,
        seed: u64,
        sink: &dyn ImageSink,
    ) -> Result<GenerationOutput> {
        for &cat in budgets.keys() {
            self.lexicon.check(cat)?;
            self.words.scenes_for(cat)?;
        }
        let runs: Vec<_> = budgets
            .par_iter()
            .map(|(&cat, &budget)| self.run_category(cat, budget, seed, sink).map(|r| (cat, r)))
            .collect::<Result<_>>()?;
        let mut out = GenerationOutput::default();
        for (cat, (entries, rejections, tally)) in runs {
            out.entries.extend(entries);
            out.rejections.extend(rejections);
            out.tallies.insert(cat, tally);
        }
        Ok(out)
    }

    fn run_category(
        &self,
        cat: CategoryPair,
        budget: usize,
        base: u64,
        sink: &dyn ImageSink,
    ) -> Result<(Vec<VirtualEntry>, Vec<RejectionRecord>, CategoryTally)> {
        let mut entries = Vec::with_capacity(budget);
        let mut rejections = Vec::new();
        let mut seen = BTreeSet::new();
        let mut tally = CategoryTally {
            budget,
            ..CategoryTally::default()
        };
        let cap = budget.saturating_mul(self.config.attempt_factor);
        for k in 0..cap {
            if entries.len() >= budget {
                break;
            }
            tally.attempts += 1;
            let s = seed::derive(base, &[cat.action as u64, cat.object as u64, k as u64]);
            let mut reject = |stage: RejectStage, prompt: String, score, message| {
                tally.count(stage);
                rejections.push(RejectionRecord {
                    prompt,
                    stage,
                    score,
                    message,
                    timestamp: now_secs(),
                });
            };
            match self.run_pipeline(cat, s) {
                Ok(Attempt::Accepted(sample)) => {
                    let id = ImageId::of(&sample.image);
                    if !seen.insert(id.clone()) {
                        reject(RejectStage::Duplicate, sample.prompt.text, None, None);
                        continue;
                    }
                    let path = sink.store(&id, &sample.image)?;
                    entries.push(VirtualEntry {
                        image_id: id,
                        path,
                        width: sample.image.width(),
                        height: sample.image.height(),
                        annotation: sample.annotation,
                        prompt: sample.prompt,
                        verdicts: sample.verdicts,
                    });
                }
                Ok(Attempt::Rejected { prompt, verdict }) => {
                    reject(verdict.stage.into(), prompt.text, Some(verdict.score), None);
                }
                Err(e @ Error::Config(_)) => return Err(e),
                Err(e) => {
                    log::warn!("attempt {k} for {cat} failed: {e}");
                    let prompt = build_prompt(cat, &self.words, &self.lexicon, s)
                        .map(|p| p.text)
                        .unwrap_or_default();
                    reject(RejectStage::BackendError, prompt, None, Some(e.to_string()));
                }
            }
        }
        tally.accepted = entries.len();
        if tally.accepted < budget {
            log::warn!(
                "category {cat}: kept {} of {budget} after {} attempts",
                tally.accepted,
                tally.attempts
            );
        }
        Ok((entries, rejections, tally))
    }
}
