use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::amf::InitialAnnotation;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::jsonl;
use crate::music::{CategoryPair, FilterVerdict, GenerationOutput, Lexicon, Stage};

pub const MANIFEST_FORMAT: &str = "vil-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Virtual {
        prompt: String,
        verdicts: Vec<FilterVerdict>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub provenance: Provenance,
}

impl ImageEntry {
    pub fn is_virtual(&self) -> bool {
        matches!(self.provenance, Provenance::Virtual { .. })
    }
}

/// One human-object pair. Exactly one of `c_a` (single interaction) and
/// `interactions` (multi-hot) is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_a: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interactions: Option<Vec<u8>>,
    pub c_o: usize,
    pub bh: BBox,
    pub bo: BBox,
}

impl AnnotationEntry {
    pub fn single(image_id: impl Into<String>, ann: &InitialAnnotation) -> Self {
        AnnotationEntry {
            image_id: image_id.into(),
            c_a: Some(ann.action),
            interactions: None,
            c_o: ann.object,
            bh: ann.human_box,
            bo: ann.object_box,
        }
    }

    /// Active interaction indices.
    pub fn actions(&self) -> Vec<usize> {
        match (&self.c_a, &self.interactions) {
            (Some(a), _) => vec![*a],
            (None, Some(bits)) => bits
                .iter()
                .enumerate()
                .filter(|(_, &b)| b != 0)
                .map(|(k, _)| k)
                .collect(),
            (None, None) => Vec::new(),
        }
    }

    /// One single-interaction annotation per active interaction.
    pub fn to_initial(&self) -> Vec<InitialAnnotation> {
        self.actions()
            .into_iter()
            .map(|a| InitialAnnotation::new(a, self.c_o, self.bh, self.bo))
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    interactions: Vec<String>,
    objects: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Image(ImageEntry),
    Annotation(AnnotationEntry),
}

/// Images, their annotations, and the class vocabularies they index into.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub interactions: Vec<String>,
    pub objects: Vec<String>,
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<AnnotationEntry>,
}

fn check_verdicts(verdicts: &[FilterVerdict]) -> std::result::Result<(), String> {
    for stage in [Stage::Scene, Stage::Instance, Stage::Interactiveness] {
        match verdicts.iter().find(|v| v.stage == stage) {
            None => return Err(format!("virtual image lacks a {stage:?} verdict")),
            Some(v) if !v.passed => return Err(format!("virtual image failed its {stage:?} verdict")),
            Some(v) if !v.score.is_finite() => return Err(format!("{stage:?} score is not finite")),
            _ => {}
        }
    }
    Ok(())
}

impl DatasetManifest {
    pub fn new(interactions: Vec<String>, objects: Vec<String>) -> Self {
        DatasetManifest {
            interactions,
            objects,
            ..Default::default()
        }
    }

    pub fn for_lexicon(lexicon: &Lexicon) -> Self {
        Self::new(lexicon.action_names(), lexicon.object_names())
    }

    /// Curated output as a manifest, one annotation per image.
    pub fn from_generation(output: &GenerationOutput, lexicon: &Lexicon) -> Self {
        let mut m = Self::for_lexicon(lexicon);
        for e in &output.entries {
            let id = e.image_id.to_string();
            m.images.push(ImageEntry {
                id: id.clone(),
                path: e.path.clone(),
                width: e.width,
                height: e.height,
                provenance: Provenance::Virtual {
                    prompt: e.prompt.text.clone(),
                    verdicts: e.verdicts.clone(),
                },
            });
            m.annotations.push(AnnotationEntry::single(id, &e.annotation));
        }
        m.canonicalize();
        m
    }

    /// Sorts images by id and annotations by image id, keeping the
    /// relative order of annotations on the same image.
    pub fn canonicalize(&mut self) {
        self.images.sort_by(|a, b| a.id.cmp(&b.id));
        self.annotations.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    }

    pub fn image(&self, id: &str) -> Option<&ImageEntry> {
        self.images
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.images[i])
            .or_else(|| self.images.iter().find(|e| e.id == id))
    }

    pub fn annotations_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a AnnotationEntry> + 'a {
        self.annotations.iter().filter(move |a| a.image_id == id)
    }

    /// Annotations grouped per image id.
    pub fn grouped(&self) -> BTreeMap<&str, Vec<&AnnotationEntry>> {
        let mut out: BTreeMap<&str, Vec<&AnnotationEntry>> = BTreeMap::new();
        for a in &self.annotations {
            out.entry(a.image_id.as_str()).or_default().push(a);
        }
        out
    }

    /// Instance count per category; a multi-hot annotation counts once per
    /// active interaction.
    pub fn category_counts(&self, virtual_images: Option<bool>) -> BTreeMap<CategoryPair, u64> {
        let kinds: BTreeMap<&str, bool> = self.images.iter().map(|i| (i.id.as_str(), i.is_virtual())).collect();
        let mut out = BTreeMap::new();
        for a in &self.annotations {
            if let Some(want) = virtual_images {
                if kinds.get(a.image_id.as_str()).copied() != Some(want) {
                    continue;
                }
            }
            for act in a.actions() {
                *out.entry(CategoryPair::new(act, a.c_o)).or_insert(0) += 1;
            }
        }
        out
    }

    fn validate_image(&self, img: &ImageEntry) -> std::result::Result<(), String> {
        if img.id.is_empty() {
            return Err("empty image id".into());
        }
        if img.width == 0 || img.height == 0 {
            return Err(format!("image {} has zero size", img.id));
        }
        if let Provenance::Virtual { verdicts, .. } = &img.provenance {
            check_verdicts(verdicts)?;
        }
        Ok(())
    }

    fn validate_annotation(&self, ids: &BTreeSet<&str>, a: &AnnotationEntry) -> std::result::Result<(), String> {
        if !ids.contains(a.image_id.as_str()) {
            return Err(format!("annotation references missing image `{}`", a.image_id));
        }
        match (&a.c_a, &a.interactions) {
            (Some(c), None) if *c >= self.interactions.len() => {
                return Err(format!("interaction {c} out of range ({})", self.interactions.len()))
            }
            (None, Some(bits)) if bits.len() != self.interactions.len() => {
                return Err(format!(
                    "multi-hot vector has {} entries, vocabulary {}",
                    bits.len(),
                    self.interactions.len()
                ))
            }
            (None, Some(bits)) if bits.iter().any(|&b| b > 1) => {
                return Err("multi-hot entries must be 0 or 1".into())
            }
            (Some(_), Some(_)) | (None, None) => {
                return Err("exactly one of `c_a` and `interactions` must be set".into())
            }
            _ => {}
        }
        if a.c_o >= self.objects.len() {
            return Err(format!("object {} out of range ({})", a.c_o, self.objects.len()));
        }
        a.bh.validate().map_err(|e| e.to_string())?;
        a.bo.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for img in &self.images {
            self.validate_image(img).map_err(Error::InvalidInput)?;
            if !ids.insert(img.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate image id `{}`", img.id)));
            }
        }
        for a in &self.annotations {
            self.validate_annotation(&ids, a).map_err(Error::InvalidInput)?;
        }
        Ok(())
    }

    /// Validates, then writes images and annotations in canonical order.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut sorted = self.clone();
        sorted.canonicalize();
        let header = Header {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            interactions: sorted.interactions,
            objects: sorted.objects,
        };
        let records: Vec<Record> = sorted
            .images
            .into_iter()
            .map(Record::Image)
            .chain(sorted.annotations.into_iter().map(Record::Annotation))
            .collect();
        jsonl::write(path, &header, &records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, records): (Header, Vec<Record>) = jsonl::read(path, MANIFEST_FORMAT, MANIFEST_VERSION)?;
        let mut m = DatasetManifest::new(header.interactions, header.objects);
        let mut positions = Vec::new();
        for (i, r) in records.into_iter().enumerate() {
            match r {
                Record::Image(img) => {
                    m.validate_image(&img).map_err(|e| Error::parse(path, i + 1, e))?;
                    m.images.push(img);
                }
                Record::Annotation(a) => {
                    positions.push(i + 1);
                    m.annotations.push(a);
                }
            }
        }
        let mut ids = BTreeSet::new();
        for img in &m.images {
            if !ids.insert(img.id.as_str()) {
                return Err(Error::parse(path, 0, format!("duplicate image id `{}`", img.id)));
            }
        }
        for (a, &line) in m.annotations.iter().zip(&positions) {
            m.validate_annotation(&ids, a).map_err(|e| Error::parse(path, line, e))?;
        }
        Ok(m)
    }

    /// Appends another manifest over the same vocabularies.
    pub fn merge(&mut self, other: &DatasetManifest) -> Result<()> {
        if self.interactions != other.interactions || self.objects != other.objects {
            return Err(Error::InvalidInput("manifests use different vocabularies".into()));
        }
        self.images.extend(other.images.iter().cloned());
        self.annotations.extend(other.annotations.iter().cloned());
        self.canonicalize();
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn verdicts() -> Vec<FilterVerdict> {
        vec![
            FilterVerdict {
                stage: Stage::Scene,
                score: 0.9312345678901234,
                candidates: None,
                passed: true,
                chosen_pair: None,
            },
            FilterVerdict {
                stage: Stage::Instance,
                score: 2.0,
                candidates: Some([1, 2]),
                passed: true,
                chosen_pair: None,
            },
            FilterVerdict {
                stage: Stage::Interactiveness,
                score: 0.1 + 0.2,
                candidates: None,
                passed: true,
                chosen_pair: Some([bx(0.0, 0.0, 4.0, 4.0), bx(1.0, 1.0, 3.0, 3.0)]),
            },
        ]
    }

    pub(crate) fn fixture() -> DatasetManifest {
        let mut m = DatasetManifest::new(vec!["hold".into(), "ride".into()], vec!["person".into(), "horse".into()]);
        for (id, virt) in [("c", false), ("a", true), ("b", false)] {
            m.images.push(ImageEntry {
                id: id.into(),
                path: format!("images/{id}.png"),
                width: 32,
                height: 24,
                provenance: if virt {
                    Provenance::Virtual {
                        prompt: "a photo of a man riding a horse in the field".into(),
                        verdicts: verdicts(),
                    }
                } else {
                    Provenance::Real
                },
            });
        }
        m.annotations.push(AnnotationEntry {
            image_id: "c".into(),
            c_a: None,
            interactions: Some(vec![1, 1]),
            c_o: 1,
            bh: bx(0.0, 0.0, 10.0, 20.0),
            bo: bx(5.5, 3.25, 30.0, 22.0),
        });
        m.annotations.push(AnnotationEntry::single(
            "a",
            &InitialAnnotation::new(1, 1, bx(0.0, 0.0, 4.0, 4.0), bx(1.0, 1.0, 3.0, 3.0)),
        ));
        m.annotations.push(AnnotationEntry::single(
            "b",
            &InitialAnnotation::new(0, 0, bx(1.0, 2.0, 3.0, 4.0), bx(2.0, 2.0, 9.0, 9.0)),
        ));
        m
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("m1.jsonl"), dir.path().join("m2.jsonl"));
        let m = fixture();
        m.save(&p1).unwrap();
        let back = DatasetManifest::load(&p1).unwrap();
        let mut sorted = m.clone();
        sorted.canonicalize();
        assert_eq!(back, sorted);
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(back.images[0].id, "a");
    }

    #[test]
    fn missing_image_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let m = fixture();
        m.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap().replace("\"image_id\":\"b\"", "\"image_id\":\"zz\"");
        std::fs::write(&p, text).unwrap();
        match DatasetManifest::load(&p) {
            Err(Error::Parse { record, message, .. }) => {
                assert!(message.contains("zz"));
                assert!(record > 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn virtual_images_need_passing_verdicts() {
        let mut m = fixture();
        if let Provenance::Virtual { verdicts, .. } = &mut m.images[1].provenance {
            verdicts.pop();
        }
        assert!(matches!(m.validate(), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn counts_expand_multi_hot() {
        let m = fixture();
        let all = m.category_counts(None);
        assert_eq!(all[&CategoryPair::new(1, 1)], 2);
        assert_eq!(all[&CategoryPair::new(0, 1)], 1);
        assert_eq!(m.category_counts(Some(true)).values().sum::<u64>(), 1);
        let a = &m.annotations[0];
        assert_eq!(a.to_initial().len(), 2);
    }
}
