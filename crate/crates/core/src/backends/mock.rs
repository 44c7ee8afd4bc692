use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    check_floor, check_prompt, finalize_detections, BackendKind, Detection, ImageId,
    ModelBackend, SceneFeature,
};
use crate::error::{Error, Result};
use crate::geometry::{union_mask, BBox, Image};
use crate::synth::{scan, Role, ToyWorld};

/// Maps a prompt or caption back to its `(action, object)` category.
pub type PromptDecoder = Arc<dyn Fn(&str) -> Option<(usize, usize)> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VlFallback {
    /// Score returned for every unprogrammed `(image, text)` pair.
    Constant(f64),
    /// Score from image content: high when a human showing the caption's
    /// action and an object of the caption's class are both visible.
    Procedural,
}

#[derive(Debug, Default)]
pub struct MockCalls {
    pub generate: AtomicUsize,
    pub scene: AtomicUsize,
    pub detect: AtomicUsize,
    pub vl: AtomicUsize,
}

impl MockCalls {
    pub fn snapshot(&self) -> [usize; 4] {
        [
            self.generate.load(Ordering::SeqCst),
            self.scene.load(Ordering::SeqCst),
            self.detect.load(Ordering::SeqCst),
            self.vl.load(Ordering::SeqCst),
        ]
    }
}

/// Deterministic in-process backend.
///
/// Programmed tables (keyed by prompt or image content hash) take priority;
/// everything else falls back to the procedural [`ToyWorld`] or to hashes of
/// the input, so outputs never depend on call order.
pub struct MockBackend {
    dim: usize,
    scene_spread: f64,
    world: ToyWorld,
    person_label: usize,
    decoder: Option<PromptDecoder>,
    vl_fallback: VlFallback,
    images: HashMap<String, Image>,
    scenes: HashMap<ImageId, Vec<f64>>,
    detections: HashMap<ImageId, Vec<Detection>>,
    vl: HashMap<(ImageId, String), f64>,
    calls: MockCalls,
}

fn hash_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

fn unit_interval(seed: u64) -> f64 {
    (seed >> 11) as f64 / (1u64 << 53) as f64
}

impl MockBackend {
    pub const DEFAULT_DIM: usize = 16;
    pub const DEFAULT_SCENE_SPREAD: f64 = 0.12;

    pub fn new(dim: usize) -> Self {
        MockBackend {
            dim: dim.max(1),
            scene_spread: Self::DEFAULT_SCENE_SPREAD,
            world: ToyWorld::new(117, 80, 64, 64),
            person_label: 0,
            decoder: None,
            vl_fallback: VlFallback::Constant(0.0),
            images: HashMap::new(),
            scenes: HashMap::new(),
            detections: HashMap::new(),
            vl: HashMap::new(),
            calls: MockCalls::default(),
        }
    }

    pub fn with_world(mut self, world: ToyWorld, person_label: usize) -> Self {
        self.world = world;
        self.person_label = person_label;
        self
    }

    pub fn with_decoder(mut self, decoder: PromptDecoder) -> Self {
        self.decoder = Some(decoder);
        self
    }

    pub fn with_vl_fallback(mut self, fallback: VlFallback) -> Self {
        self.vl_fallback = fallback;
        self
    }

    pub fn with_scene_spread(mut self, spread: f64) -> Self {
        self.scene_spread = spread;
        self
    }

    pub fn world(&self) -> &ToyWorld {
        &self.world
    }

    pub fn calls(&self) -> &MockCalls {
        &self.calls
    }

    pub fn program_image(&mut self, prompt: &str, img: Image) {
        self.images.insert(prompt.to_string(), img);
    }

    pub fn program_scene(&mut self, img: &Image, vector: Vec<f64>) {
        self.scenes.insert(ImageId::of(img), vector);
    }

    pub fn program_detections(&mut self, img: &Image, dets: Vec<Detection>) {
        self.detections.insert(ImageId::of(img), dets);
    }

    pub fn program_vl(&mut self, img: &Image, text: &str, score: f64) {
        self.vl.insert((ImageId::of(img), text.to_string()), score);
    }

    /// Programs the score of the image masked to `human ∪ object`.
    pub fn program_pair_score(
        &mut self,
        img: &Image,
        human: &BBox,
        object: &BBox,
        text: &str,
        score: f64,
    ) -> Result<()> {
        let masked = union_mask(img, human, object)?;
        self.program_vl(&masked, text, score);
        Ok(())
    }

    fn procedural_image(&self, prompt: &str) -> Result<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&[b"generate", prompt.as_bytes()]));
        let w = &self.world;
        let (action, object) = self
            .decoder
            .as_ref()
            .and_then(|d| d(prompt))
            .filter(|&(a, o)| a < w.num_actions && o < w.num_objects)
            .unwrap_or_else(|| {
                (
                    rng.random_range(0..w.num_actions),
                    rng.random_range(0..w.num_objects),
                )
            });
        let mut cats = vec![(action, object)];
        if rng.random_bool(0.4) {
            let second = if rng.random_bool(0.5) {
                action
            } else {
                rng.random_range(0..w.num_actions)
            };
            cats.push((second, object));
        }
        let mut layout = w.layout(&cats, &mut rng)?;
        for pair in &mut layout.pairs {
            pair.human_confidence = rng.random_range(0.88..0.99);
            pair.object_confidence = rng.random_range(0.88..0.99);
        }
        if rng.random_bool(0.15) && w.num_actions > 1 {
            let shown = (action + rng.random_range(1..w.num_actions)) % w.num_actions;
            layout.pairs[0].shown_action = shown;
        }
        w.render(&layout, &mut rng)
    }

    fn procedural_scene(&self, id: &ImageId) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&[b"scene", id.as_str().as_bytes()]));
        let mut v: Vec<f64> = (0..self.dim)
            .map(|_| self.scene_spread * rng.random_range(-1.0..1.0))
            .collect();
        v[0] += 1.0;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }

    fn procedural_detections(&self, img: &Image) -> Vec<Detection> {
        scan(img)
            .iter()
            .map(|inst| Detection {
                label: match inst.role {
                    Role::Human => self.person_label,
                    Role::Object => self.world.decode_object(inst),
                },
                score: inst.confidence(),
                bbox: inst.bbox,
            })
            .collect()
    }

    fn procedural_vl(&self, img: &Image, id: &ImageId, text: &str) -> Option<f64> {
        let (action, object) = self.decoder.as_ref()?(text)?;
        let found = scan(img);
        let human_ok = found
            .iter()
            .any(|i| i.role == Role::Human && self.world.decode_action(i) == action);
        let object_ok = found
            .iter()
            .any(|i| i.role == Role::Object && self.world.decode_object(i) == object);
        let jitter = unit_interval(hash_seed(&[b"vl", id.as_str().as_bytes(), text.as_bytes()]));
        Some(match (human_ok, object_ok) {
            (true, true) => 0.31 + 0.08 * jitter,
            (true, false) | (false, true) => 0.15 + 0.1 * jitter,
            (false, false) => 0.05 + 0.1 * jitter,
        })
    }
}

impl ModelBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn generate_image(&self, prompt: &str) -> Result<Image> {
        check_prompt(prompt)?;
        self.calls.generate.fetch_add(1, Ordering::SeqCst);
        if let Some(img) = self.images.get(prompt) {
            return Ok(img.clone());
        }
        self.procedural_image(prompt)
    }

    fn scene_embed(&self, img: &Image) -> Result<SceneFeature> {
        self.calls.scene.fetch_add(1, Ordering::SeqCst);
        let id = ImageId::of(img);
        let v = match self.scenes.get(&id) {
            Some(v) => v.clone(),
            None => self.procedural_scene(&id),
        };
        SceneFeature::new(v)
    }

    fn detect(&self, img: &Image, score_floor: f64) -> Result<Vec<Detection>> {
        check_floor(score_floor)?;
        self.calls.detect.fetch_add(1, Ordering::SeqCst);
        let dets = match self.detections.get(&ImageId::of(img)) {
            Some(d) => d.clone(),
            None => self.procedural_detections(img),
        };
        Ok(finalize_detections(dets, score_floor))
    }

    fn vl_score(&self, img: &Image, text: &str) -> Result<f64> {
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("empty caption".into()));
        }
        self.calls.vl.fetch_add(1, Ordering::SeqCst);
        let id = ImageId::of(img);
        if let Some(&s) = self.vl.get(&(id.clone(), text.to_string())) {
            return Ok(s);
        }
        Ok(match self.vl_fallback {
            VlFallback::Constant(s) => s,
            VlFallback::Procedural => self.procedural_vl(img, &id, text).unwrap_or(0.0),
        })
    }
}
