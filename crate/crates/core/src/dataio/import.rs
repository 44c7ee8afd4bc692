//! Import of real datasets in the public per-image HOI annotation layout:
//! a JSON array of images, each with `file_name`, a list of boxes
//! (`annotations`, xyxy `bbox` plus COCO `category_id`) and a list of
//! interactions (`hoi_annotation`, indices into the box list plus a
//! 1-based interaction `category_id`).

use std::path::Path;

use serde::Deserialize;

use super::manifest::{AnnotationEntry, DatasetManifest, ImageEntry, Provenance};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::music::Lexicon;

#[derive(Debug, Deserialize)]
struct RawBox {
    bbox: [f64; 4],
    category_id: u32,
}

#[derive(Debug, Deserialize)]
struct RawHoi {
    subject_id: i64,
    object_id: i64,
    category_id: usize,
}

#[derive(Debug, Deserialize)]
struct RawImage {
    file_name: String,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
    #[serde(default)]
    annotations: Vec<RawBox>,
    #[serde(default)]
    hoi_annotation: Vec<RawHoi>,
}

/// What an import kept and dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportSummary {
    pub images: usize,
    pub annotations: usize,
    /// Interactions without an object box (object index -1).
    pub skipped_no_object: usize,
}

/// Reads `path` into a real-image manifest over `lexicon`. Image sizes come
/// from the record or, failing that, from the image file under `image_root`.
pub fn import_hoi_json(
    path: &Path,
    lexicon: &Lexicon,
    image_root: Option<&Path>,
) -> Result<(DatasetManifest, ImportSummary)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<RawImage> = serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e))?;
    let person = lexicon
        .person_label()
        .ok_or_else(|| Error::Config("object vocabulary has no `person` class".into()))?;
    let mut m = DatasetManifest::for_lexicon(lexicon);
    let mut summary = ImportSummary::default();
    for (i, img) in raw.iter().enumerate() {
        let bad = |msg: String| Error::parse(path, i, format!("{}: {msg}", img.file_name));
        let (width, height) = match (img.width, img.height, image_root) {
            (Some(w), Some(h), _) => (w, h),
            (_, _, Some(root)) => {
                let p = root.join(&img.file_name);
                image::image_dimensions(&p).map_err(|e| bad(format!("cannot read size from {}: {e}", p.display())))?
            }
            _ => return Err(bad("image size missing and no image root given".into())),
        };
        let id = img.file_name.rsplit_once('.').map_or(img.file_name.as_str(), |(s, _)| s).to_string();
        m.images.push(ImageEntry {
            id: id.clone(),
            path: img.file_name.clone(),
            width,
            height,
            provenance: Provenance::Real,
        });
        summary.images += 1;
        let boxes: Vec<(BBox, u32)> = img
            .annotations
            .iter()
            .map(|b| Ok((BBox::from_array(b.bbox).map_err(|e| bad(e.to_string()))?, b.category_id)))
            .collect::<Result<_>>()?;
        let get = |k: i64| -> Result<&(BBox, u32)> {
            usize::try_from(k)
                .ok()
                .and_then(|k| boxes.get(k))
                .ok_or_else(|| bad(format!("box index {k} out of range ({})", boxes.len())))
        };
        for h in &img.hoi_annotation {
            if h.object_id < 0 {
                summary.skipped_no_object += 1;
                continue;
            }
            let (bh, hcat) = *get(h.subject_id)?;
            let (bo, ocat) = *get(h.object_id)?;
            if lexicon.object_by_coco_id(hcat) != Some(person) {
                return Err(bad(format!("subject box has category {hcat}, not person")));
            }
            let c_o = lexicon
                .object_by_coco_id(ocat)
                .ok_or_else(|| bad(format!("unknown object category {ocat}")))?;
            if h.category_id == 0 || h.category_id > lexicon.num_actions() {
                return Err(bad(format!("interaction category {} out of range", h.category_id)));
            }
            m.annotations.push(AnnotationEntry {
                image_id: id.clone(),
                c_a: Some(h.category_id - 1),
                interactions: None,
                c_o,
                bh,
                bo,
            });
            summary.annotations += 1;
        }
    }
    m.canonicalize();
    m.validate().map_err(|e| Error::parse(path, 0, e))?;
    Ok((m, summary))
}
