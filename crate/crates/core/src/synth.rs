//! A procedural scene world of coloured rectangles.
//!
//! Images have three planes:
//! - plane 0 marks instance pixels (`255 - slot` for humans, `223 - slot` for
//!   objects, `<= 100` for background);
//! - plane 1 carries appearance, a palette colour per action (humans) or
//!   per object class (objects), optionally perturbed by noise and clutter;
//! - plane 2 carries the confidence a detector should report for the instance.
//!
//! The mock backend uses this world to answer detection and interactiveness
//! queries from image content alone, and the toy detector reads the same
//! planes as its region features.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Image};

pub const MARKER_PLANE: u8 = 0;
pub const APPEARANCE_PLANE: u8 = 1;
pub const CONFIDENCE_PLANE: u8 = 2;

const HUMAN_TOP: u8 = 255;
const OBJECT_TOP: u8 = 223;
const MAX_SLOTS: u8 = 32;
const BACKGROUND_MAX: u8 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Human,
    Object,
}

fn marker(role: Role, slot: u8) -> u8 {
    match role {
        Role::Human => HUMAN_TOP - slot,
        Role::Object => OBJECT_TOP - slot,
    }
}

fn decode_marker(v: u8) -> Option<(Role, u8)> {
    if v > OBJECT_TOP {
        Some((Role::Human, HUMAN_TOP - v))
    } else if v > OBJECT_TOP - MAX_SLOTS {
        Some((Role::Object, OBJECT_TOP - v))
    } else {
        None
    }
}

/// Evenly spaced appearance codes in `[16, 240]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    centers: Vec<u8>,
}

impl Palette {
    pub fn new(classes: usize) -> Self {
        let centers = match classes {
            0 => Vec::new(),
            1 => vec![128],
            k => (0..k)
                .map(|i| (16.0 + (i as f64) * 224.0 / (k as f64 - 1.0)).round() as u8)
                .collect(),
        };
        Palette { centers }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, class: usize) -> u8 {
        self.centers[class]
    }

    pub fn decode(&self, value: u8) -> usize {
        self.centers
            .iter()
            .enumerate()
            .min_by_key(|(_, &c)| (c as i32 - value as i32).abs())
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// One instance recovered from the marker plane.
#[derive(Debug, Clone)]
pub struct ScannedInstance {
    pub role: Role,
    pub slot: u8,
    pub bbox: BBox,
    pub pixel_count: usize,
    pub appearance_hist: Vec<u32>,
    confidence_hist: Vec<u32>,
}

fn hist_mode(hist: &[u32]) -> u8 {
    // lowest value wins ties
    let mut best = 0usize;
    for (i, &c) in hist.iter().enumerate() {
        if c > hist[best] {
            best = i;
        }
    }
    best as u8
}

impl ScannedInstance {
    pub fn appearance_mode(&self) -> u8 {
        hist_mode(&self.appearance_hist)
    }

    pub fn confidence(&self) -> f64 {
        hist_mode(&self.confidence_hist) as f64 / 255.0
    }
}

/// Finds every marked instance; humans first, then objects, each by slot.
pub fn scan(img: &Image) -> Vec<ScannedInstance> {
    if img.channels() < 3 {
        return Vec::new();
    }
    struct Acc {
        x1: u32,
        y1: u32,
        x2: u32,
        y2: u32,
        count: usize,
        app: Vec<u32>,
        conf: Vec<u32>,
    }
    let mut slots: std::collections::BTreeMap<(u8, u8), Acc> = Default::default();
    let (w, h) = (img.width(), img.height());
    let markers = img.plane(MARKER_PLANE);
    let app = img.plane(APPEARANCE_PLANE);
    let conf = img.plane(CONFIDENCE_PLANE);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let Some((role, slot)) = decode_marker(markers[i]) else {
                continue;
            };
            let key = (u8::from(role == Role::Object), slot);
            let acc = slots.entry(key).or_insert_with(|| Acc {
                x1: x,
                y1: y,
                x2: x,
                y2: y,
                count: 0,
                app: vec![0; 256],
                conf: vec![0; 256],
            });
            acc.x1 = acc.x1.min(x);
            acc.y1 = acc.y1.min(y);
            acc.x2 = acc.x2.max(x);
            acc.y2 = acc.y2.max(y);
            acc.count += 1;
            acc.app[app[i] as usize] += 1;
            acc.conf[conf[i] as usize] += 1;
        }
    }
    slots
        .into_iter()
        .map(|((is_obj, slot), a)| ScannedInstance {
            role: if is_obj == 1 { Role::Object } else { Role::Human },
            slot,
            bbox: BBox {
                x1: a.x1 as f64,
                y1: a.y1 as f64,
                x2: a.x2 as f64 + 1.0,
                y2: a.y2 as f64 + 1.0,
            },
            pixel_count: a.count,
            appearance_hist: a.app,
            confidence_hist: a.conf,
        })
        .collect()
}

/// A human-object pair as drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLayout {
    pub action: usize,
    pub object: usize,
    pub human: BBox,
    pub object_box: BBox,
    /// Action whose appearance the human is drawn with; differs from
    /// `action` for images that fail to depict the interaction.
    pub shown_action: usize,
    pub human_confidence: f64,
    pub object_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneLayout {
    pub pairs: Vec<PairLayout>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    pub num_actions: usize,
    pub num_objects: usize,
    pub width: u32,
    pub height: u32,
    /// Standard deviation of per-pixel appearance noise.
    pub appearance_noise: f64,
    /// Fraction of instance pixels whose appearance is replaced at random.
    pub clutter: f64,
    actions: Palette,
    objects: Palette,
}

impl ToyWorld {
    pub fn new(num_actions: usize, num_objects: usize, width: u32, height: u32) -> Self {
        ToyWorld {
            num_actions,
            num_objects,
            width,
            height,
            appearance_noise: 0.0,
            clutter: 0.0,
            actions: Palette::new(num_actions),
            objects: Palette::new(num_objects),
        }
    }

    pub fn with_noise(mut self, appearance_noise: f64, clutter: f64) -> Self {
        self.appearance_noise = appearance_noise;
        self.clutter = clutter;
        self
    }

    pub fn action_palette(&self) -> &Palette {
        &self.actions
    }

    pub fn object_palette(&self) -> &Palette {
        &self.objects
    }

    /// Lays out `categories.len()` pairs side by side, one per vertical strip.
    pub fn layout<R: Rng>(&self, categories: &[(usize, usize)], rng: &mut R) -> Result<SceneLayout> {
        if categories.is_empty() || categories.len() > MAX_SLOTS as usize {
            return Err(Error::InvalidInput(format!(
                "cannot lay out {} pairs",
                categories.len()
            )));
        }
        let strip = self.width / categories.len() as u32;
        if strip < 16 || self.height < 24 {
            return Err(Error::InvalidInput(format!(
                "{}x{} canvas too small for {} pairs",
                self.width,
                self.height,
                categories.len()
            )));
        }
        let mut pairs = Vec::with_capacity(categories.len());
        for (k, &(action, object)) in categories.iter().enumerate() {
            let x0 = k as u32 * strip;
            let hw_max = (strip * 9 / 20).max(4);
            let hw = rng.random_range((hw_max / 2).max(3)..=hw_max);
            let hh = rng.random_range(self.height / 3..=self.height * 3 / 4);
            let ow_max = (strip - hw - 1).min(hw).max(3);
            let ow = rng.random_range(3.min(ow_max)..=ow_max);
            let oh = rng.random_range(3..=(hh * 2 / 3).max(3));
            let slack = strip - hw - ow;
            let lead = rng.random_range(0..=slack);
            let object_right = rng.random_bool(0.5);
            let (hx, ox) = if object_right {
                (x0 + lead, x0 + lead + hw)
            } else {
                (x0 + lead + ow, x0 + lead)
            };
            let hy = rng.random_range(0..=self.height - hh);
            let oy = rng.random_range(hy..=hy + hh - oh);
            let human = BBox::new(hx as f64, hy as f64, (hx + hw) as f64, (hy + hh) as f64)?;
            let object_box = BBox::new(ox as f64, oy as f64, (ox + ow) as f64, (oy + oh) as f64)?;
            pairs.push(PairLayout {
                action,
                object,
                human,
                object_box,
                shown_action: action,
                human_confidence: 0.95,
                object_confidence: 0.95,
            });
        }
        Ok(SceneLayout { pairs })
    }

    pub fn render<R: Rng>(&self, layout: &SceneLayout, rng: &mut R) -> Result<Image> {
        let mut img = Image::filled(self.width, self.height, 3, 0)?;
        for c in 0..3u8 {
            for px in img.plane_mut(c) {
                *px = rng.random_range(0..=BACKGROUND_MAX);
            }
        }
        let noise = if self.appearance_noise > 0.0 {
            Some(Normal::new(0.0, self.appearance_noise).map_err(|e| Error::InvalidInput(e.to_string()))?)
        } else {
            None
        };
        for (slot, pair) in layout.pairs.iter().enumerate() {
            let slot = slot as u8;
            self.fill(
                &mut img,
                &pair.human,
                marker(Role::Human, slot),
                self.actions.center(pair.shown_action),
                pair.human_confidence,
                noise.as_ref(),
                rng,
            );
            self.fill(
                &mut img,
                &pair.object_box,
                marker(Role::Object, slot),
                self.objects.center(pair.object),
                pair.object_confidence,
                noise.as_ref(),
                rng,
            );
        }
        Ok(img)
    }

    #[allow(clippy::too_many_arguments)]
    fn fill<R: Rng>(
        &self,
        img: &mut Image,
        b: &BBox,
        mark: u8,
        appearance: u8,
        confidence: f64,
        noise: Option<&Normal<f64>>,
        rng: &mut R,
    ) {
        let conf = (confidence.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (xs, ys) = img.pixel_span(b);
        for y in ys {
            for x in xs.clone() {
                img.set(MARKER_PLANE, x, y, mark);
                img.set(CONFIDENCE_PLANE, x, y, conf);
                let mut a = appearance as f64;
                if self.clutter > 0.0 && rng.random_bool(self.clutter) {
                    a = rng.random_range(0.0..256.0);
                } else if let Some(n) = noise {
                    a += n.sample(rng);
                }
                img.set(APPEARANCE_PLANE, x, y, a.round().clamp(0.0, 255.0) as u8);
            }
        }
    }

    pub fn decode_action(&self, inst: &ScannedInstance) -> usize {
        self.actions.decode(inst.appearance_mode())
    }

    pub fn decode_object(&self, inst: &ScannedInstance) -> usize {
        self.objects.decode(inst.appearance_mode())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn palette_roundtrip() {
        for k in [1usize, 2, 5, 10, 80, 117] {
            let p = Palette::new(k);
            for i in 0..k {
                assert_eq!(p.decode(p.center(i)), i, "k={k} i={i}");
            }
        }
    }

    #[test]
    fn render_then_scan_recovers_layout() {
        let world = ToyWorld::new(10, 5, 64, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let layout = world.layout(&[(3, 1), (7, 4)], &mut rng).unwrap();
            let img = world.render(&layout, &mut rng).unwrap();
            let found = scan(&img);
            assert_eq!(found.len(), 4);
            let humans: Vec<_> = found.iter().filter(|i| i.role == Role::Human).collect();
            let objects: Vec<_> = found.iter().filter(|i| i.role == Role::Object).collect();
            for (k, pair) in layout.pairs.iter().enumerate() {
                assert_eq!(humans[k].bbox, pair.human);
                assert_eq!(objects[k].bbox, pair.object_box);
                assert_eq!(world.decode_action(humans[k]), pair.action);
                assert_eq!(world.decode_object(objects[k]), pair.object);
                assert!((humans[k].confidence() - 0.95).abs() < 0.01);
            }
        }
    }

    #[test]
    fn noisy_appearance_still_decodes() {
        let world = ToyWorld::new(10, 5, 64, 64).with_noise(4.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layout = world.layout(&[(9, 0)], &mut rng).unwrap();
        let img = world.render(&layout, &mut rng).unwrap();
        let found = scan(&img);
        assert_eq!(world.decode_action(&found[0]), 9);
    }

    #[test]
    fn background_is_not_an_instance() {
        let img = Image::filled(8, 8, 3, BACKGROUND_MAX).unwrap();
        assert!(scan(&img).is_empty());
        let gray = Image::filled(8, 8, 3, 128).unwrap();
        assert!(scan(&gray).is_empty());
    }
}
