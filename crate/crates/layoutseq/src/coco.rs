//! COCO detection-annotation ingestion: normalizes boxes by image size,
//! densifies category ids to [0, C), and drops layouts with more than
//! MAX_ELEMENTS boxes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use layoutseq_core::{BBox, Layout};
use serde::{Deserialize, Serialize};

use crate::corpus::Entry;
use crate::error::{AppError, Result};

pub const MAX_ELEMENTS: usize = 128;

#[derive(Debug, Deserialize)]
struct CocoFile {
    #[serde(default)]
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: u64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IngestStats {
    /// Annotations whose image_id has no images[] record.
    pub skipped_unknown_image: usize,
    /// Annotations of images without usable width/height.
    pub skipped_missing_dims: usize,
    /// Annotations with degenerate (non-positive after clamping) boxes.
    pub skipped_degenerate: usize,
    /// Layouts dropped for exceeding MAX_ELEMENTS boxes.
    pub dropped_overlong: usize,
    /// Dense class id per original category id.
    pub category_map: BTreeMap<u64, u32>,
}

pub fn ingest_coco(path: &Path) -> Result<(Vec<Entry>, IngestStats)> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    let coco: CocoFile = serde_json::from_str(&text).map_err(|e| {
        AppError::data(format!(
            "{}: COCO parse error at line {} column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;

    let mut stats = IngestStats::default();
    let mut cat_ids: Vec<u64> = coco.categories.iter().map(|c| c.id).collect();
    if cat_ids.is_empty() {
        // fall back to the ids actually used by annotations
        cat_ids = coco.annotations.iter().map(|a| a.category_id).collect();
    }
    cat_ids.sort_unstable();
    cat_ids.dedup();
    for (dense, &id) in cat_ids.iter().enumerate() {
        stats.category_map.insert(id, dense as u32);
    }

    let mut dims: BTreeMap<u64, Option<(f64, f64)>> = BTreeMap::new();
    for img in &coco.images {
        let d = match (img.width, img.height) {
            (Some(w), Some(h)) if w > 0 && h > 0 => Some((w as f64, h as f64)),
            _ => None,
        };
        dims.insert(img.id, d);
    }

    let mut per_image: BTreeMap<u64, Vec<BBox>> = BTreeMap::new();
    for ann in &coco.annotations {
        let (iw, ih) = match dims.get(&ann.image_id) {
            None => {
                stats.skipped_unknown_image += 1;
                continue;
            }
            Some(None) => {
                stats.skipped_missing_dims += 1;
                continue;
            }
            Some(Some(d)) => *d,
        };
        let class = match stats.category_map.get(&ann.category_id) {
            Some(&c) => c,
            None => {
                return Err(AppError::data(format!(
                    "annotation references unknown category_id {}",
                    ann.category_id
                )))
            }
        };
        let [bx, by, bw, bh] = ann.bbox;
        // clamp edge overhang, standard COCO preparation
        let x = (bx / iw).clamp(0.0, 1.0 - 1e-9);
        let y = (by / ih).clamp(0.0, 1.0 - 1e-9);
        let w = (bw / iw).min(1.0 - x);
        let h = (bh / ih).min(1.0 - y);
        if !(w > 0.0) || !(h > 0.0) {
            stats.skipped_degenerate += 1;
            continue;
        }
        per_image
            .entry(ann.image_id)
            .or_default()
            .push(BBox::new(class, x, y, w, h).map_err(|e| {
                AppError::data(format!("image {}: {e}", ann.image_id))
            })?);
    }

    let mut entries = Vec::new();
    for (image_id, boxes) in per_image {
        if boxes.len() > MAX_ELEMENTS {
            stats.dropped_overlong += 1;
            continue;
        }
        entries.push(Entry {
            layout: Layout::with_id(boxes, image_id.to_string()),
            label: None,
        });
    }
    Ok((entries, stats))
}
