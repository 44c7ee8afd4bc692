//! Read-only backend over precomputed model outputs.
//!
//! Directory layout:
//! - `features.idx`: header `{format: "vil-feature-index", version, dim}`, then
//!   one `{image, offset}` record per image (byte offset into `features.bin`);
//! - `features.bin`: little-endian `f32` vectors of length `dim`;
//! - `detections.jsonl`, `vl_scores.jsonl`, `images.jsonl`: optional
//!   line-delimited tables keyed by image hash (or prompt for images).

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::codec;
use super::{
    check_floor, check_prompt, finalize_detections, BackendKind, Detection, ImageId,
    ModelBackend, SceneFeature,
};
use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::jsonl;

pub const INDEX_FILE: &str = "features.idx";
pub const VECTORS_FILE: &str = "features.bin";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const VL_FILE: &str = "vl_scores.jsonl";
pub const IMAGES_FILE: &str = "images.jsonl";

const INDEX_FORMAT: &str = "vil-feature-index";
const DETECTIONS_FORMAT: &str = "vil-detection-cache";
const VL_FORMAT: &str = "vil-vl-cache";
const IMAGES_FORMAT: &str = "vil-image-cache";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableHeader {
    format: String,
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRecord {
    image: ImageId,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    image: ImageId,
    detections: Vec<Detection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VlRecord {
    image: ImageId,
    text: String,
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageRecord {
    prompt: String,
    file: PathBuf,
}

pub struct CacheBackend {
    dir: PathBuf,
    dim: usize,
    features: HashMap<ImageId, Vec<f64>>,
    detections: HashMap<ImageId, Vec<Detection>>,
    vl: HashMap<(ImageId, String), f64>,
    images: HashMap<String, PathBuf>,
}

fn optional_table<R: serde::de::DeserializeOwned>(path: &Path, format: &str) -> Result<Vec<R>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let (_h, recs): (TableHeader, Vec<R>) = jsonl::read(path, format, VERSION)?;
    Ok(recs)
}

impl CacheBackend {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let index_path = dir.join(INDEX_FILE);
        let (header, index): (IndexHeader, Vec<IndexRecord>) =
            jsonl::read(&index_path, INDEX_FORMAT, VERSION)?;
        let bin_path = dir.join(VECTORS_FILE);
        let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let stride = header.dim * 4;
        let mut features = HashMap::with_capacity(index.len());
        for (i, rec) in index.into_iter().enumerate() {
            let start = rec.offset as usize;
            let chunk = bytes.get(start..start + stride).ok_or_else(|| {
                Error::parse(&index_path, i + 1, format!("offset {start} beyond vector file"))
            })?;
            let v = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                .collect();
            features.insert(rec.image, v);
        }

        let detections = optional_table::<DetectionRecord>(&dir.join(DETECTIONS_FILE), DETECTIONS_FORMAT)?
            .into_iter()
            .map(|r| (r.image, r.detections))
            .collect();
        let vl = optional_table::<VlRecord>(&dir.join(VL_FILE), VL_FORMAT)?
            .into_iter()
            .map(|r| ((r.image, r.text), r.score))
            .collect();
        let images = optional_table::<ImageRecord>(&dir.join(IMAGES_FILE), IMAGES_FORMAT)?
            .into_iter()
            .map(|r| (r.prompt, r.file))
            .collect();

        Ok(CacheBackend {
            dir,
            dim: header.dim,
            features,
            detections,
            vl,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, id: &ImageId) -> Option<&[f64]> {
        self.features.get(id).map(Vec::as_slice)
    }

    /// All cached scene vectors, ordered by image hash.
    pub fn all_features(&self) -> Vec<SceneFeature> {
        let mut ids: Vec<&ImageId> = self.features.keys().collect();
        ids.sort();
        ids.into_iter()
            .map(|id| SceneFeature {
                vector: self.features[id].clone(),
            })
            .collect()
    }
}

impl ModelBackend for CacheBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Cache
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn generate_image(&self, prompt: &str) -> Result<Image> {
        check_prompt(prompt)?;
        let file = self.images.get(prompt).ok_or_else(|| Error::MissingFeature {
            kind: "generated image",
            image: prompt.to_string(),
        })?;
        codec::load_image(&self.dir.join(file))
    }

    fn scene_embed(&self, img: &Image) -> Result<SceneFeature> {
        let id = ImageId::of(img);
        match self.features.get(&id) {
            Some(v) => SceneFeature::new(v.clone()),
            None => Err(Error::MissingFeature {
                kind: "scene feature",
                image: id.to_string(),
            }),
        }
    }

    fn detect(&self, img: &Image, score_floor: f64) -> Result<Vec<Detection>> {
        check_floor(score_floor)?;
        let id = ImageId::of(img);
        let dets = self.detections.get(&id).ok_or_else(|| Error::MissingFeature {
            kind: "detections",
            image: id.to_string(),
        })?;
        Ok(finalize_detections(dets.clone(), score_floor))
    }

    fn vl_score(&self, img: &Image, text: &str) -> Result<f64> {
        let id = ImageId::of(img);
        self.vl
            .get(&(id.clone(), text.to_string()))
            .copied()
            .ok_or_else(|| Error::MissingFeature {
                kind: "vision-language score",
                image: id.to_string(),
            })
    }
}

/// Builds a cache directory. Records are written in insertion order.
pub struct CacheWriter {
    dir: PathBuf,
    dim: usize,
    index: Vec<IndexRecord>,
    vectors: Vec<u8>,
    detections: Vec<DetectionRecord>,
    vl: Vec<VlRecord>,
    images: Vec<ImageRecord>,
}

impl CacheWriter {
    pub fn new(dir: impl AsRef<Path>, dim: usize) -> Self {
        CacheWriter {
            dir: dir.as_ref().to_path_buf(),
            dim,
            index: Vec::new(),
            vectors: Vec::new(),
            detections: Vec::new(),
            vl: Vec::new(),
            images: Vec::new(),
        }
    }

    pub fn add_feature(&mut self, img: &Image, vector: &[f64]) -> Result<()> {
        self.add_feature_by_id(ImageId::of(img), vector)
    }

    pub fn add_feature_by_id(&mut self, id: ImageId, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::InvalidFeature(format!(
                "vector of dimension {} in a cache of dimension {}",
                vector.len(),
                self.dim
            )));
        }
        self.index.push(IndexRecord {
            image: id,
            offset: self.vectors.len() as u64,
        });
        for v in vector {
            self.vectors.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Ok(())
    }

    pub fn add_detections(&mut self, img: &Image, detections: Vec<Detection>) {
        self.detections.push(DetectionRecord {
            image: ImageId::of(img),
            detections,
        });
    }

    pub fn add_vl_score(&mut self, img: &Image, text: &str, score: f64) {
        self.vl.push(VlRecord {
            image: ImageId::of(img),
            text: text.to_string(),
            score,
        });
    }

    /// Stores a generated image as PNG under `images/` and indexes it by prompt.
    pub fn add_image(&mut self, prompt: &str, img: &Image) -> Result<()> {
        let rel = PathBuf::from("images").join(format!("{}.png", ImageId::of(img)));
        let abs = self.dir.join(&rel);
        std::fs::create_dir_all(abs.parent().expect("has parent"))
            .map_err(|e| Error::io(&abs, e))?;
        codec::save_png(img, &abs)?;
        self.images.push(ImageRecord {
            prompt: prompt.to_string(),
            file: rel,
        });
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let idx_header = IndexHeader {
            format: INDEX_FORMAT.into(),
            version: VERSION,
            dim: self.dim,
        };
        jsonl::write(&self.dir.join(INDEX_FILE), &idx_header, &self.index)?;
        let bin = self.dir.join(VECTORS_FILE);
        let mut f = std::fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        f.write_all(&self.vectors).map_err(|e| Error::io(&bin, e))?;
        let table = |format: &str| TableHeader {
            format: format.into(),
            version: VERSION,
        };
        if !self.detections.is_empty() {
            jsonl::write(&self.dir.join(DETECTIONS_FILE), &table(DETECTIONS_FORMAT), &self.detections)?;
        }
        if !self.vl.is_empty() {
            jsonl::write(&self.dir.join(VL_FILE), &table(VL_FORMAT), &self.vl)?;
        }
        if !self.images.is_empty() {
            jsonl::write(&self.dir.join(IMAGES_FILE), &table(IMAGES_FORMAT), &self.images)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::remote_request_count;
    use crate::geometry::BBox;

    fn img(v: u8) -> Image {
        Image::filled(4, 4, 3, v).unwrap()
    }

    fn fixture(dir: &Path) {
        let mut w = CacheWriter::new(dir, 3);
        for k in 0..3u8 {
            w.add_feature(&img(k), &[k as f64, 1.0, 0.5]).unwrap();
        }
        let b = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        w.add_detections(
            &img(0),
            vec![
                Detection { label: 0, score: 0.8, bbox: b },
                Detection { label: 4, score: 0.95, bbox: b },
            ],
        );
        w.add_vl_score(&img(1), "a caption", 0.42);
        w.add_image("prompt", &img(2)).unwrap();
        w.finish().unwrap();
    }

    #[test]
    fn cache_roundtrip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let before = remote_request_count();
        let c = CacheBackend::open(dir.path()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.feature_dim(), 3);
        assert_eq!(c.scene_embed(&img(2)).unwrap().vector, vec![2.0, 1.0, 0.5]);
        assert_eq!(c.scene_embed(&img(1)).unwrap(), c.scene_embed(&img(1)).unwrap());
        let miss = c.scene_embed(&img(9));
        assert!(matches!(miss, Err(Error::MissingFeature { .. })));

        let dets = c.detect(&img(0), 0.0).unwrap();
        assert_eq!(dets[0].label, 4);
        assert!(c.detect(&img(1), 0.0).is_err());
        assert_eq!(c.vl_score(&img(1), "a caption").unwrap(), 0.42);
        assert!(c.vl_score(&img(1), "other").is_err());
        assert_eq!(c.generate_image("prompt").unwrap(), img(2));
        assert!(c.generate_image("unknown").is_err());
        assert_eq!(remote_request_count(), before, "cache must not touch the network");
    }

    #[test]
    fn open_requires_index() {
        let dir = tempfile::tempdir().unwrap();
        assert!(CacheBackend::open(dir.path()).is_err());
    }

    #[test]
    fn writer_rejects_wrong_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = CacheWriter::new(dir.path(), 3);
        assert!(w.add_feature(&img(0), &[1.0]).is_err());
    }
}
