//! Manifest images loaded for training and evaluation.

use std::path::Path;

use rayon::prelude::*;

use super::manifest::{DatasetManifest, ImageEntry};
use crate::backends::codec;
use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::teacher_student::{RealSample, VirtualItem};

fn load_entry(entry: &ImageEntry, root: &Path) -> Result<Image> {
    let img = codec::load_image(&root.join(&entry.path))?;
    if (img.width(), img.height()) != (entry.width, entry.height) {
        return Err(Error::InvalidInput(format!(
            "image {} is {}x{} on disk but {}x{} in the manifest",
            entry.id,
            img.width(),
            img.height(),
            entry.width,
            entry.height
        )));
    }
    Ok(img)
}

/// Every image with its ground-truth pairs, in manifest order. Paths are
/// resolved against `root`.
pub fn load_real_samples(m: &DatasetManifest, root: &Path) -> Result<Vec<(String, RealSample)>> {
    m.images
        .par_iter()
        .map(|e| {
            let annotations = m.annotations_for(&e.id).flat_map(|a| a.to_initial()).collect();
            Ok((
                e.id.clone(),
                RealSample {
                    image: load_entry(e, root)?,
                    annotations,
                },
            ))
        })
        .collect()
}

/// Curated images; each must carry exactly one single-action annotation.
pub fn load_virtual_items(m: &DatasetManifest, root: &Path) -> Result<Vec<(String, VirtualItem)>> {
    m.images
        .par_iter()
        .map(|e| {
            if !e.is_virtual() {
                return Err(Error::InvalidInput(format!("image {} is not a curated image", e.id)));
            }
            let anns: Vec<_> = m.annotations_for(&e.id).flat_map(|a| a.to_initial()).collect();
            let [annotation] = anns[..] else {
                return Err(Error::InvalidInput(format!(
                    "curated image {} has {} annotated pairs, expected 1",
                    e.id,
                    anns.len()
                )));
            };
            Ok((
                e.id.clone(),
                VirtualItem {
                    image: load_entry(e, root)?,
                    annotation,
                },
            ))
        })
        .collect()
}
