//! Uniform access to the four pretrained models the curation pipeline consumes:
//! the image generator, the scene model, the object detector and the
//! vision-language scorer.
//!
//! Three interchangeable implementations exist: [`MockBackend`] (procedural
//! and programmable, for tests and desk-scale runs), [`CacheBackend`]
//! (precomputed outputs, no network) and [`RemoteBackend`] (HTTP client for
//! the inference sidecar).

mod cache;
pub mod codec;
mod mock;
mod remote;

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Image};

pub use cache::{CacheBackend, CacheWriter};
pub use mock::{MockBackend, MockCalls, PromptDecoder, VlFallback};
pub use remote::{remote_request_count, RemoteBackend, RemoteOptions};

/// Content hash of an image raster (dimensions and pixel bytes).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(String);

impl ImageId {
    pub fn of(img: &Image) -> Self {
        let mut h = Sha256::new();
        h.update(img.width().to_le_bytes());
        h.update(img.height().to_le_bytes());
        h.update([img.channels()]);
        h.update(img.pixels());
        ImageId(hex::encode(h.finalize()))
    }

    pub fn from_hex(s: impl Into<String>) -> Self {
        ImageId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First 8 bytes of the hash as an integer, handy for seeding.
    pub fn seed(&self) -> u64 {
        u64::from_str_radix(&self.0[..16], 16).unwrap_or(0)
    }
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SceneFeature {
    pub vector: Vec<f64>,
}

impl SceneFeature {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        if vector.is_empty() || vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeature(
                "scene feature must be non-empty and finite".into(),
            ));
        }
        Ok(SceneFeature { vector })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Cache,
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "cache" => Ok(BackendKind::Cache),
            "mock" => Ok(BackendKind::Mock),
            other => Err(Error::Config(format!("unknown backend kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub feature_dim: usize,
}

impl Default for BackendDescriptor {
    fn default() -> Self {
        BackendDescriptor {
            kind: BackendKind::Mock,
            endpoint: None,
            cache_dir: None,
            feature_dim: MockBackend::DEFAULT_DIM,
        }
    }
}

pub trait ModelBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn feature_dim(&self) -> usize;

    fn generate_image(&self, prompt: &str) -> Result<Image>;

    fn scene_embed(&self, img: &Image) -> Result<SceneFeature>;

    /// Detections with `score >= score_floor`, highest score first.
    fn detect(&self, img: &Image, score_floor: f64) -> Result<Vec<Detection>>;

    fn vl_score(&self, img: &Image, text: &str) -> Result<f64>;
}

pub(crate) fn check_prompt(prompt: &str) -> Result<()> {
    if prompt.trim().is_empty() {
        return Err(Error::InvalidInput("empty prompt".into()));
    }
    Ok(())
}

pub(crate) fn check_floor(score_floor: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&score_floor) {
        return Err(Error::InvalidInput(format!(
            "score floor {score_floor} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Applies the floor and orders by descending score (stable for ties).
pub(crate) fn finalize_detections(mut dets: Vec<Detection>, score_floor: f64) -> Vec<Detection> {
    dets.retain(|d| d.score >= score_floor);
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets
}

/// Builds a backend from its descriptor. Mock backends built this way use
/// the default procedural world without a prompt decoder.
pub fn open_backend(desc: &BackendDescriptor) -> Result<Arc<dyn ModelBackend>> {
    match desc.kind {
        BackendKind::Mock => Ok(Arc::new(MockBackend::new(desc.feature_dim))),
        BackendKind::Cache => {
            let dir = desc
                .cache_dir
                .as_ref()
                .ok_or_else(|| Error::Config("cache backend requires a cache directory".into()))?;
            Ok(Arc::new(CacheBackend::open(dir)?))
        }
        BackendKind::Remote => {
            let endpoint = desc
                .endpoint
                .as_ref()
                .ok_or_else(|| Error::Config("remote backend requires an endpoint".into()))?;
            Ok(Arc::new(RemoteBackend::connect(
                endpoint,
                RemoteOptions::default(),
            )?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_id_depends_on_content_only() {
        let a = Image::new(2, 1, 1, vec![1, 2]).unwrap();
        let b = Image::new(2, 1, 1, vec![1, 2]).unwrap();
        let c = Image::new(1, 2, 1, vec![1, 2]).unwrap();
        assert_eq!(ImageId::of(&a), ImageId::of(&b));
        assert_ne!(ImageId::of(&a), ImageId::of(&c));
        assert_eq!(ImageId::of(&a).as_str().len(), 64);
    }

    #[test]
    fn finalize_filters_and_sorts() {
        let bx = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let d = |label, score| Detection {
            label,
            score,
            bbox: bx,
        };
        let out = finalize_detections(vec![d(0, 0.5), d(1, 0.9), d(2, 0.7)], 0.6);
        assert_eq!(out.iter().map(|d| d.label).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn backend_kind_parses() {
        assert_eq!("cache".parse::<BackendKind>().unwrap(), BackendKind::Cache);
        assert!("gpu".parse::<BackendKind>().is_err());
    }
}
