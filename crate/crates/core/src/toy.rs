//! A desk-scale long-tail experiment on the procedural world.
//!
//! Real data follows a Zipf law over categories, with the least frequent
//! categories carrying actions that appear nowhere else. Curated images
//! come from the curation pipeline running on the mock backend over the
//! same world. A detector pretrained on real data is then trained twice
//! from the same start, once on real data alone and once with curated
//! images and teacher pseudo-labels, and recall on rare categories is
//! compared.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::amf::{estimate_kappa, AmfConfig, InitialAnnotation};
use crate::augmentation::AugmentConfig;
use crate::backends::{MockBackend, ModelBackend, VlFallback};
use crate::dataio::{
    AnnotationEntry, CategoryFrequencyTable, DatasetManifest, ImageEntry, Provenance, RARE_BELOW,
};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::music::{
    generation_budget, ActionEntry, BudgetMode, CategoryPair, Curator, GenerationOutput,
    Lexicon, MemorySink, MusicConfig, ObjectEntry, SceneIndex, WordSets,
};
use crate::seed;
use crate::synth::ToyWorld;
use crate::teacher_student::{
    Detector, EpochReport, RealSample, ToyDetector, TrainConfig, Trainer, VirtualItem,
};

const VERBS: [(&str, &str); 12] = [
    ("hold", "holding"),
    ("ride", "riding"),
    ("kick", "kicking"),
    ("throw", "throwing"),
    ("cut", "cutting"),
    ("eat", "eating"),
    ("carry", "carrying"),
    ("push", "pushing"),
    ("pull", "pulling"),
    ("lift", "lifting"),
    ("wash", "washing"),
    ("paint", "painting"),
];
const NOUNS: [&str; 8] = ["ball", "kite", "board", "cup", "box", "bottle", "chair", "drum"];

/// Lexicon over the toy classes, with `person` appended after the objects.
pub fn toy_lexicon(num_actions: usize, num_objects: usize) -> Result<Lexicon> {
    if num_actions > VERBS.len() || num_objects > NOUNS.len() {
        return Err(Error::Config(format!(
            "toy lexicon supports at most {} actions and {} objects",
            VERBS.len(),
            NOUNS.len()
        )));
    }
    let actions = VERBS[..num_actions]
        .iter()
        .map(|(n, g)| ActionEntry {
            name: n.to_string(),
            gerund: g.to_string(),
            preposition: None,
        })
        .collect();
    let mut objects: Vec<ObjectEntry> = NOUNS[..num_objects]
        .iter()
        .map(|n| ObjectEntry {
            name: n.to_string(),
            coco_id: None,
        })
        .collect();
    objects.push(ObjectEntry {
        name: "person".into(),
        coco_id: None,
    });
    Lexicon::new(actions, objects)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTaskConfig {
    pub num_actions: usize,
    pub num_objects: usize,
    pub categories: usize,
    pub width: u32,
    pub height: u32,
    /// Training instances of the most frequent category.
    pub head_count: f64,
    pub zipf_exponent: f64,
    /// Chance that an image holds a second pair.
    pub second_pair_prob: f64,
    pub test_per_category: usize,
    pub appearance_noise: f64,
    pub clutter: f64,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        ToyTaskConfig {
            num_actions: 10,
            num_objects: 5,
            categories: 20,
            width: 64,
            height: 64,
            head_count: 100.0,
            zipf_exponent: 1.3,
            second_pair_prob: 0.5,
            test_per_category: 8,
            appearance_noise: 20.0,
            clutter: 0.3,
        }
    }
}

/// Real train and test splits of the toy world.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub config: ToyTaskConfig,
    pub world: ToyWorld,
    /// Categories from most to least frequent.
    pub categories: Vec<CategoryPair>,
    pub freq: CategoryFrequencyTable,
    pub train: Vec<RealSample>,
    pub test: Vec<RealSample>,
}

/// Category of frequency rank `k`: two categories per action, so the
/// actions of the tail ranks occur only in rare categories.
fn category_of_rank(k: usize, num_objects: usize) -> CategoryPair {
    let action = k / 2;
    CategoryPair::new(action, (k + action) % num_objects)
}

impl ToyTask {
    pub fn generate(config: &ToyTaskConfig, seed: u64) -> Result<Self> {
        if config.categories > 2 * config.num_actions || config.num_objects < 2 || config.categories == 0 {
            return Err(Error::Config(format!(
                "{} categories need at least {} actions and 2 objects",
                config.categories,
                config.categories.div_ceil(2)
            )));
        }
        let world = config.world();
        let categories: Vec<CategoryPair> = (0..config.categories)
            .map(|k| category_of_rank(k, config.num_objects))
            .collect();
        let counts: Vec<u64> = (0..config.categories)
            .map(|k| ((config.head_count / ((k + 1) as f64).powf(config.zipf_exponent)).round() as u64).max(1))
            .collect();
        let freq = CategoryFrequencyTable::from_counts(categories.iter().copied().zip(counts.iter().copied()), RARE_BELOW);

        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[0x7011]));
        let mut pool: Vec<CategoryPair> = categories
            .iter()
            .zip(&counts)
            .flat_map(|(&c, &n)| std::iter::repeat_n(c, n as usize))
            .collect();
        pool.shuffle(&mut rng);
        let mut train = Vec::new();
        let mut i = 0;
        while i < pool.len() {
            let take = if i + 1 < pool.len() && rng.random_bool(config.second_pair_prob) { 2 } else { 1 };
            train.push(Self::render(&world, &pool[i..i + take], &mut rng)?);
            i += take;
        }
        let mut test = Vec::new();
        for &c in &categories {
            for _ in 0..config.test_per_category {
                let mut cats = vec![c];
                if rng.random_bool(config.second_pair_prob) {
                    cats.push(categories[rng.random_range(0..categories.len())]);
                }
                test.push(Self::render(&world, &cats, &mut rng)?);
            }
        }
        Ok(ToyTask {
            config: config.clone(),
            world,
            categories,
            freq,
            train,
            test,
        })
    }

    fn render(world: &ToyWorld, cats: &[CategoryPair], rng: &mut ChaCha8Rng) -> Result<RealSample> {
        let pairs: Vec<(usize, usize)> = cats.iter().map(|c| (c.action, c.object)).collect();
        let layout = world.layout(&pairs, rng)?;
        let image = world.render(&layout, rng)?;
        let annotations = layout
            .pairs
            .iter()
            .map(|p| InitialAnnotation::new(p.action, p.object, p.human, p.object_box))
            .collect();
        Ok(RealSample { image, annotations })
    }

    pub fn rare_categories(&self) -> BTreeSet<CategoryPair> {
        self.freq.rare_categories().into_iter().collect()
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        toy_lexicon(self.config.num_actions, self.config.num_objects)
    }

    /// Mean annotated pairs per training image.
    pub fn kappa(&self) -> Result<f64> {
        let per: Vec<usize> = self.train.iter().map(|s| s.annotations.len()).collect();
        estimate_kappa(&per)
    }

    /// The training split as a manifest; images live under `real/`.
    pub fn train_manifest(&self) -> Result<DatasetManifest> {
        self.split_manifest(&self.train, "real")
    }

    /// The test split as a manifest; images live under `test/`.
    pub fn test_manifest(&self) -> Result<DatasetManifest> {
        self.split_manifest(&self.test, "test")
    }

    fn split_manifest(&self, samples: &[RealSample], prefix: &str) -> Result<DatasetManifest> {
        let lex = self.lexicon()?;
        let mut m = DatasetManifest::for_lexicon(&lex);
        for (i, s) in samples.iter().enumerate() {
            let id = format!("{prefix}-{i:05}");
            m.images.push(ImageEntry {
                id: id.clone(),
                path: format!("{prefix}/{id}.png"),
                width: s.image.width(),
                height: s.image.height(),
                provenance: Provenance::Real,
            });
            for a in &s.annotations {
                m.annotations.push(AnnotationEntry::single(id.clone(), a));
            }
        }
        m.canonicalize();
        Ok(m)
    }

    /// Mock backend that draws from this task's world and reads prompts
    /// with the toy lexicon.
    pub fn backend(&self) -> Result<MockBackend> {
        mock_backend(&self.config, &Arc::new(self.lexicon()?), MockBackend::DEFAULT_DIM)
    }
}

impl ToyTaskConfig {
    pub fn world(&self) -> ToyWorld {
        ToyWorld::new(self.num_actions, self.num_objects, self.width, self.height)
            .with_noise(self.appearance_noise, self.clutter)
    }
}

/// Mock backend over the world of `config`, decoding prompts with
/// `lexicon`. The lexicon must name a `person` class.
pub fn mock_backend(config: &ToyTaskConfig, lexicon: &Arc<Lexicon>, dim: usize) -> Result<MockBackend> {
    let person = lexicon
        .person_label()
        .ok_or_else(|| Error::Config("object vocabulary has no `person` class".into()))?;
    Ok(MockBackend::new(dim)
        .with_world(config.world(), person)
        .with_decoder(lexicon.decoder())
        .with_vl_fallback(VlFallback::Procedural))
}

/// Curated images for the task's categories under `mode` budgets.
pub fn curate(task: &ToyTask, mode: BudgetMode, music: &MusicConfig, seed: u64) -> Result<(Vec<VirtualItem>, GenerationOutput)> {
    let lex = Arc::new(task.lexicon()?);
    let backend: Arc<dyn ModelBackend> = Arc::new(task.backend()?);
    let features = task
        .train
        .iter()
        .map(|s| backend.scene_embed(&s.image))
        .collect::<Result<Vec<_>>>()?;
    let scenes = SceneIndex::new(&features)?;
    let words = WordSets::builtin().with_uniform_map(task.categories.iter().copied());
    let curator = Curator::new(backend, lex, words, scenes, music.clone())?;
    let budgets = generation_budget(&task.freq, mode);
    let sink = MemorySink::new();
    let out = curator.generate(&budgets, seed, &sink)?;
    let images = sink.into_images();
    let items = out
        .entries
        .iter()
        .map(|e| {
            let image = images
                .get(&e.image_id)
                .cloned()
                .ok_or_else(|| Error::InvalidState(format!("image {} missing from sink", e.image_id)))?;
            Ok(VirtualItem {
                image,
                annotation: e.annotation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((items, out))
}

/// Rare-category recall: a ground-truth pair counts as found when some
/// proposal overlaps both its boxes with IoU >= 0.5 and ranks its action
/// first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recall {
    pub hits: usize,
    pub total: usize,
}

impl Recall {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

pub fn recall<D: Detector>(detector: &D, samples: &[RealSample], categories: &BTreeSet<CategoryPair>) -> Result<Recall> {
    let mut r = Recall::default();
    for s in samples {
        let preds = detector.predict(&s.image)?;
        for a in &s.annotations {
            if !categories.contains(&a.category()) {
                continue;
            }
            r.total += 1;
            let Some(preds) = &preds else { continue };
            let hit = preds.entries.iter().any(|p| {
                iou(&p.human_box, &a.human_box) >= 0.5
                    && iou(&p.object_box, &a.object_box) >= 0.5
                    && p.action_scores
                        .iter()
                        .enumerate()
                        .all(|(k, &v)| k == a.action || v < p.action_scores[a.action])
            });
            r.hits += hit as usize;
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: ToyTaskConfig,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub mode: BudgetMode,
    pub music: MusicConfig,
    /// Detector and optimisation settings. `amf.kappa` is used as given
    /// when `fixed_kappa` is set, else replaced by the real-data estimate.
    pub train: TrainConfig,
    pub fixed_kappa: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: ToyTaskConfig::default(),
            pretrain_epochs: 10,
            epochs: 10,
            mode: BudgetMode::Hico,
            music: MusicConfig::default(),
            train: TrainConfig {
                learning_rate: 0.05,
                batch_size: 8,
                augment: toy_augment(),
                amf: AmfConfig { kappa: 0.5, ..AmfConfig::default() },
                ..TrainConfig::default()
            },
            fixed_kappa: true,
        }
    }
}

/// Augmentation that leaves the marker plane alone and keeps appearance
/// shifts below the palette spacing.
pub fn toy_augment() -> AugmentConfig {
    AugmentConfig {
        photometric_from_channel: 1,
        jitter_gain: (0.97, 1.03),
        jitter_bias: (-4.0, 4.0),
        blur_prob: 0.2,
        erase_prob: 0.3,
        ..AugmentConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub kappa: f64,
    pub virtual_images: usize,
    pub rare_categories: usize,
    pub pretrained: Recall,
    pub baseline: Recall,
    pub vil: Recall,
    pub seconds: f64,
    pub vil_epochs: Vec<EpochReport>,
}

impl SeedOutcome {
    pub fn margin(&self) -> f64 {
        self.vil.value() - self.baseline.value()
    }
}

/// Trains on real data only for `epochs`, starting from `init`.
pub fn train_real_only(init: ToyDetector, real: &[RealSample], cfg: TrainConfig, epochs: usize) -> Result<Trainer<ToyDetector>> {
    let mut t = Trainer::new(init, cfg)?;
    for _ in 0..epochs {
        t.run_epoch(&[], real)?;
    }
    Ok(t)
}

/// One seed of the experiment: task, curation, pretraining, then the two
/// training runs from the same starting point.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let start = Instant::now();
    let task = ToyTask::generate(&cfg.task, seed)?;
    let rare = task.rare_categories();
    let (virt, _) = curate(&task, cfg.mode, &cfg.music, seed::derive(seed, &[0xC0]))?;

    let mut train = cfg.train.clone();
    train.seed = seed::derive(seed, &[0x7A]);
    if !cfg.fixed_kappa {
        train.amf.kappa = task.kappa()?;
    }
    let init = ToyDetector::new(cfg.task.num_actions, cfg.task.num_objects, seed);
    let pre = train_real_only(init, &task.train, TrainConfig { seed: seed::derive(seed, &[0x9E]), ..train.clone() }, cfg.pretrain_epochs)?;
    let theta0 = pre.student().clone();
    let pretrained = recall(&theta0, &task.test, &rare)?;

    let baseline = train_real_only(theta0.clone(), &task.train, train.clone(), cfg.epochs)?;
    let mut vil = Trainer::new(theta0, train)?;
    let mut reports = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        reports.push(vil.run_epoch(&virt, &task.train)?);
    }
    Ok(SeedOutcome {
        seed,
        kappa: vil.config().amf.kappa,
        virtual_images: virt.len(),
        rare_categories: rare.len(),
        pretrained,
        baseline: recall(baseline.student(), &task.test, &rare)?,
        vil: recall(vil.student(), &task.test, &rare)?,
        seconds: start.elapsed().as_secs_f64(),
        vil_epochs: reports,
    })
}

/// Category histogram of curated items, for reporting.
pub fn curated_counts(items: &[VirtualItem]) -> BTreeMap<CategoryPair, usize> {
    let mut out = BTreeMap::new();
    for it in items {
        *out.entry(it.annotation.category()).or_insert(0) += 1;
    }
    out
}
