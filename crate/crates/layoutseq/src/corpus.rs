//! Layout corpus JSONL: one layout per line, with an optional leading header
//! line flagging pre-normalized coordinates. Without the header (or with
//! `normalized: false`) box coordinates are absolute pixels and are divided
//! by the record's width/height on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use layoutseq_core::{BBox, Layout};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const CORPUS_FORMAT: &str = "layoutseq-corpus-v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub normalized: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawBox {
    pub class: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub width: u64,
    pub height: u64,
    pub boxes: Vec<RawBox>,
    /// Grammar mode label, when the corpus was synthesized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
}

/// One loaded layout plus its optional mode label.
#[derive(Clone, Debug)]
pub struct Entry {
    pub layout: Layout,
    pub label: Option<u32>,
}

#[derive(Debug)]
pub struct Corpus {
    pub entries: Vec<Entry>,
}

impl Corpus {
    pub fn layouts(&self) -> Vec<Layout> {
        self.entries.iter().map(|e| e.layout.clone()).collect()
    }
}

fn record_to_entry(rec: Record, normalized: bool, line_no: usize) -> Result<Entry> {
    let (sx, sy) = if normalized {
        (1.0, 1.0)
    } else {
        if rec.width == 0 || rec.height == 0 {
            return Err(AppError::data(format!(
                "line {line_no}: record '{}' has zero width/height",
                rec.id
            )));
        }
        (rec.width as f64, rec.height as f64)
    };
    let mut boxes = Vec::with_capacity(rec.boxes.len());
    for (i, b) in rec.boxes.iter().enumerate() {
        let x = (b.x / sx).clamp(0.0, 1.0 - 1e-9);
        let y = (b.y / sy).clamp(0.0, 1.0 - 1e-9);
        let w = (b.w / sx).min(1.0 - x);
        let h = (b.h / sy).min(1.0 - y);
        let bbox = BBox::new(b.class, x, y, w, h).map_err(|e| {
            AppError::data(format!("line {line_no}: box {i} of '{}': {e}", rec.id))
        })?;
        boxes.push(bbox);
    }
    Ok(Entry {
        layout: Layout::with_id(boxes, rec.id),
        label: rec.label,
    })
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    let mut normalized = false;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(header) = serde_json::from_str::<CorpusHeader>(line) {
                if header.format != CORPUS_FORMAT {
                    return Err(AppError::data(format!(
                        "unsupported corpus format '{}'",
                        header.format
                    )));
                }
                normalized = header.normalized;
                continue;
            }
        }
        let rec: Record = serde_json::from_str(line)
            .map_err(|e| AppError::data(format!("line {}: {e}", i + 1)))?;
        entries.push(record_to_entry(rec, normalized, i + 1)?);
    }
    if entries.is_empty() {
        return Err(AppError::data(format!(
            "{}: corpus contains no layouts",
            path.display()
        )));
    }
    Ok(Corpus { entries })
}

/// Serialize normalized entries, header line first. Box coordinates are kept
/// as-is (already in [0, 1]); width/height are nominal.
pub fn write_corpus(path: &Path, entries: &[Entry]) -> Result<()> {
    let mut out = String::new();
    let header = CorpusHeader {
        format: CORPUS_FORMAT.into(),
        normalized: true,
    };
    out.push_str(&serde_json::to_string(&header)?);
    out.push('\n');
    for (i, e) in entries.iter().enumerate() {
        let rec = Record {
            id: e.layout
                .source_id
                .clone()
                .unwrap_or_else(|| i.to_string()),
            width: 1,
            height: 1,
            boxes: e
                .layout
                .boxes
                .iter()
                .map(|b| RawBox {
                    class: b.class_id,
                    x: b.x,
                    y: b.y,
                    w: b.w,
                    h: b.h,
                })
                .collect(),
            label: e.label,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Write via a sibling temp file and rename, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{ext}.tmp"),
        None => "tmp".to_string(),
    });
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}
