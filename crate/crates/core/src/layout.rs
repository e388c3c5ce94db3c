//! Layouts, bounding boxes, and the flat token sequence codec.
//!
//! A layout is flattened as `BOS, c1, x1, y1, w1, h1, c2, ..., EOS` in raster
//! scan order. Coordinates are quantized onto an N x N anchor grid: x/y map
//! to the cell containing the top-left corner (floor), w/h map to the number
//! of cells needed to cover the extent minus one (ceil - 1), so a width
//! spanning 3 cells gets token w-2. Dequantization maps x/y back to the cell
//! left/top edge and extents to (count)/N, making quantize(dequantize(id))
//! the identity on token ids.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Maximum boxes per layout; longer layouts are rejected or dropped.
pub const MAX_ELEMENTS: usize = 128;
/// BOS + 5 tokens per box + EOS at the element cap.
pub const MAX_SEQ_LEN: usize = 2 + 5 * MAX_ELEMENTS;

/// Float slack tolerated on `x + w <= 1` before clamping.
const EDGE_EPS: f64 = 1e-9;

/// A class-labeled box, normalized to the unit square.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BBox {
    pub class_id: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Validate and clamp a box on ingestion. `x`/`y` must land in [0, 1),
    /// `w`/`h` must be positive; overhang beyond the right/bottom edge within
    /// float slack is clamped away.
    pub fn new(class_id: u32, x: f64, y: f64, w: f64, h: f64) -> Result<BBox> {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::Range { what: "bbox x", value: x });
        }
        if !(0.0..1.0).contains(&y) {
            return Err(Error::Range { what: "bbox y", value: y });
        }
        if !(w > 0.0) {
            return Err(Error::Range { what: "bbox w", value: w });
        }
        if !(h > 0.0) {
            return Err(Error::Range { what: "bbox h", value: h });
        }
        if x + w > 1.0 + EDGE_EPS {
            return Err(Error::Range { what: "bbox x+w", value: x + w });
        }
        if y + h > 1.0 + EDGE_EPS {
            return Err(Error::Range { what: "bbox y+h", value: y + h });
        }
        Ok(BBox {
            class_id,
            x,
            y,
            w: w.min(1.0 - x),
            h: h.min(1.0 - y),
        })
    }
}

/// An ordered set of boxes for one scene or document.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Layout {
    pub boxes: Vec<BBox>,
    pub source_id: Option<String>,
}

impl Layout {
    pub fn new(boxes: Vec<BBox>) -> Layout {
        Layout {
            boxes,
            source_id: None,
        }
    }

    pub fn with_id(boxes: Vec<BBox>, id: impl Into<String>) -> Layout {
        Layout {
            boxes,
            source_id: Some(id.into()),
        }
    }
}

/// Mirror a layout left-right in continuous space: x' = 1 - x - w.
/// An involution; classes, y, w, h are untouched.
pub fn flip_lr(layout: &Layout) -> Layout {
    let boxes = layout
        .boxes
        .iter()
        .map(|b| BBox {
            x: (1.0 - b.x - b.w).max(0.0),
            ..*b
        })
        .collect();
    Layout {
        boxes,
        source_id: layout.source_id.clone(),
    }
}

/// Token kinds, in the order they appear within a box span.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Class,
    X,
    Y,
    W,
    H,
    Bos,
    Eos,
    Mask,
    Pad,
}

impl TokenKind {
    /// Kind expected at body offset `p` (0-based, after BOS).
    pub fn at_body_offset(p: usize) -> TokenKind {
        match p % 5 {
            0 => TokenKind::Class,
            1 => TokenKind::X,
            2 => TokenKind::Y,
            3 => TokenKind::W,
            _ => TokenKind::H,
        }
    }
}

/// Bijection between semantic tokens and integer ids for C classes and an
/// N x N anchor grid. Total size C + 4N + 4: classes, x/y/w/h anchors, and
/// BOS/EOS/MASK/PAD. (MASK and PAD exist on top of the C + 4N + 2 enumerated
/// token kinds because masked training needs a mask id and batching needs
/// padding.)
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Vocab {
    pub classes: u32,
    pub grid: u32,
}

impl Vocab {
    pub fn new(classes: u32, grid: u32) -> Result<Vocab> {
        if classes == 0 || grid == 0 {
            return Err(Error::Param {
                what: "vocab",
                detail: format!("classes={classes}, grid={grid} must both be positive"),
            });
        }
        Ok(Vocab { classes, grid })
    }

    pub fn size(&self) -> u32 {
        self.classes + 4 * self.grid + 4
    }

    pub fn bos(&self) -> u32 {
        self.classes + 4 * self.grid
    }
    pub fn eos(&self) -> u32 {
        self.bos() + 1
    }
    pub fn mask(&self) -> u32 {
        self.bos() + 2
    }
    pub fn pad(&self) -> u32 {
        self.bos() + 3
    }

    /// (start, len) of the id range for a token kind.
    pub fn range(&self, kind: TokenKind) -> (u32, u32) {
        let (c, n) = (self.classes, self.grid);
        match kind {
            TokenKind::Class => (0, c),
            TokenKind::X => (c, n),
            TokenKind::Y => (c + n, n),
            TokenKind::W => (c + 2 * n, n),
            TokenKind::H => (c + 3 * n, n),
            TokenKind::Bos => (self.bos(), 1),
            TokenKind::Eos => (self.eos(), 1),
            TokenKind::Mask => (self.mask(), 1),
            TokenKind::Pad => (self.pad(), 1),
        }
    }

    pub fn kind_of(&self, id: u32) -> Result<TokenKind> {
        for kind in [
            TokenKind::Class,
            TokenKind::X,
            TokenKind::Y,
            TokenKind::W,
            TokenKind::H,
            TokenKind::Bos,
            TokenKind::Eos,
            TokenKind::Mask,
            TokenKind::Pad,
        ] {
            let (start, len) = self.range(kind);
            if id >= start && id < start + len {
                return Ok(kind);
            }
        }
        Err(Error::Vocab {
            id,
            context: "kind_of",
        })
    }

    pub fn encode(&self, kind: TokenKind, value: u32) -> Result<u32> {
        let (start, len) = self.range(kind);
        if value >= len {
            return Err(Error::Vocab {
                id: value,
                context: "encode value",
            });
        }
        Ok(start + value)
    }

    /// Inverse of `encode`: the in-range value of an id known to be `kind`.
    pub fn decode(&self, kind: TokenKind, id: u32) -> Result<u32> {
        let (start, len) = self.range(kind);
        if id < start || id >= start + len {
            return Err(Error::Vocab {
                id,
                context: "decode",
            });
        }
        Ok(id - start)
    }
}

/// Flat token sequence: BOS, then 5 tokens per box, then EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_boxes(&self) -> usize {
        (self.ids.len() - 2) / 5
    }

    /// Sequence index of the first token of box `i`.
    pub fn box_start(i: usize) -> usize {
        1 + 5 * i
    }
}

/// Floor quantization of a coordinate in [0, 1) onto an N-cell axis. A cell
/// edge k/n is slack-tolerant: values within EDGE_EPS below it (e.g. 13/23
/// reconstructed through division) still quantize to cell k.
pub fn quantize(v: f64, n: u32) -> Result<u32> {
    if !(0.0..1.0).contains(&v) {
        return Err(Error::Range {
            what: "quantize input",
            value: v,
        });
    }
    Ok((math::floor(v * n as f64 + EDGE_EPS) as u32).min(n - 1))
}

/// Extent quantization: the number of cells needed to cover `e`, minus one.
/// An extent of exactly 3 cells maps to token 2.
pub fn quantize_extent(e: f64, n: u32) -> Result<u32> {
    if !(e > 0.0) {
        return Err(Error::Range {
            what: "quantize_extent input",
            value: e,
        });
    }
    let cells = math::ceil(e * n as f64 - EDGE_EPS).max(1.0) as u32;
    Ok((cells - 1).min(n - 1))
}

/// Map (c, x, y, w, h) token ids back to a continuous box: coordinates to the
/// cell left/top edge, extents to (count)/N.
pub fn dequantize_box(c: u32, x: u32, y: u32, w: u32, h: u32, vocab: &Vocab) -> Result<BBox> {
    let n = vocab.grid as f64;
    let class_id = vocab.decode(TokenKind::Class, c)?;
    let xi = vocab.decode(TokenKind::X, x)?;
    let yi = vocab.decode(TokenKind::Y, y)?;
    let wi = vocab.decode(TokenKind::W, w)?;
    let hi = vocab.decode(TokenKind::H, h)?;
    let bx = xi as f64 / n;
    let by = yi as f64 / n;
    let bw = ((wi + 1) as f64 / n).min(1.0 - bx);
    let bh = ((hi + 1) as f64 / n).min(1.0 - by);
    Ok(BBox {
        class_id,
        x: bx,
        y: by,
        w: bw,
        h: bh,
    })
}

/// Quantized token ids (c, x, y, w, h) of one box.
pub fn box_tokens(b: &BBox, vocab: &Vocab) -> Result<[u32; 5]> {
    let n = vocab.grid;
    Ok([
        vocab.encode(TokenKind::Class, b.class_id)?,
        vocab.encode(TokenKind::X, quantize(b.x, n)?)?,
        vocab.encode(TokenKind::Y, quantize(b.y, n)?)?,
        vocab.encode(TokenKind::W, quantize_extent(b.w, n)?)?,
        vocab.encode(TokenKind::H, quantize_extent(b.h, n)?)?,
    ])
}

/// Flatten a layout into a token sequence, raster ordering boxes by
/// (quantized y, quantized x, class id, original index).
pub fn layout_to_seq(layout: &Layout, vocab: &Vocab) -> Result<TokenSeq> {
    if layout.boxes.is_empty() {
        return Err(Error::Empty("layout"));
    }
    if layout.boxes.len() > MAX_ELEMENTS {
        return Err(Error::Size {
            what: "layout boxes",
            got: layout.boxes.len(),
            max: MAX_ELEMENTS,
        });
    }
    let n = vocab.grid;
    let mut keyed: Vec<(u32, u32, u32, usize)> = Vec::with_capacity(layout.boxes.len());
    for (i, b) in layout.boxes.iter().enumerate() {
        keyed.push((quantize(b.y, n)?, quantize(b.x, n)?, b.class_id, i));
    }
    keyed.sort();
    let mut ids = Vec::with_capacity(2 + 5 * layout.boxes.len());
    ids.push(vocab.bos());
    for &(_, _, _, i) in &keyed {
        ids.extend_from_slice(&box_tokens(&layout.boxes[i], vocab)?);
    }
    ids.push(vocab.eos());
    Ok(TokenSeq { ids })
}

/// The layout with its boxes reordered into raster order (quantized y, then
/// quantized x, then class, then original index); geometry untouched.
pub fn raster_sorted(layout: &Layout, vocab: &Vocab) -> Result<Layout> {
    let n = vocab.grid;
    let mut keyed: Vec<(u32, u32, u32, usize)> = Vec::with_capacity(layout.boxes.len());
    for (i, b) in layout.boxes.iter().enumerate() {
        keyed.push((quantize(b.y, n)?, quantize(b.x, n)?, b.class_id, i));
    }
    keyed.sort();
    Ok(Layout {
        boxes: keyed.iter().map(|&(_, _, _, i)| layout.boxes[i]).collect(),
        source_id: layout.source_id.clone(),
    })
}

/// Parse a fully unmasked, structurally valid sequence back into a layout.
/// Errors name the offending index.
pub fn seq_to_layout(seq: &TokenSeq, vocab: &Vocab) -> Result<Layout> {
    let ids = &seq.ids;
    if ids.len() < 7 {
        return Err(Error::Parse {
            index: ids.len(),
            detail: format!("sequence too short ({} tokens)", ids.len()),
        });
    }
    if ids[0] != vocab.bos() {
        return Err(Error::Parse {
            index: 0,
            detail: format!("expected BOS, got id {}", ids[0]),
        });
    }
    if *ids.last().unwrap() != vocab.eos() {
        return Err(Error::Parse {
            index: ids.len() - 1,
            detail: format!("expected EOS, got id {}", ids.last().unwrap()),
        });
    }
    let body = &ids[1..ids.len() - 1];
    if body.len() % 5 != 0 {
        return Err(Error::Parse {
            index: ids.len() - 1,
            detail: format!("body length {} not divisible by 5", body.len()),
        });
    }
    let mut boxes = Vec::with_capacity(body.len() / 5);
    for (p, &id) in body.iter().enumerate() {
        let expected = TokenKind::at_body_offset(p);
        let got = vocab.kind_of(id)?;
        if got != expected {
            return Err(Error::Parse {
                index: p + 1,
                detail: format!("expected {expected:?} token, got {got:?} (id {id})"),
            });
        }
    }
    for chunk in body.chunks(5) {
        boxes.push(dequantize_box(
            chunk[0], chunk[1], chunk[2], chunk[3], chunk[4], vocab,
        )?);
    }
    Ok(Layout::new(boxes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn vocab() -> Vocab {
        Vocab::new(10, 32).unwrap()
    }

    #[test]
    fn vocab_size_and_ranges_partition() {
        let v = vocab();
        assert_eq!(v.size(), 10 + 4 * 32 + 4);
        // every id belongs to exactly one kind and decode(encode) round-trips
        for id in 0..v.size() {
            let kind = v.kind_of(id).unwrap();
            let val = v.decode(kind, id).unwrap();
            assert_eq!(v.encode(kind, val).unwrap(), id);
        }
        assert!(v.kind_of(v.size()).is_err());
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0, 32).unwrap(), 0);
        assert_eq!(quantize(0.5, 32).unwrap(), 16);
        assert_eq!(quantize(0.999, 32).unwrap(), 31);
        assert!(quantize(1.0, 32).is_err());
        assert!(quantize(-0.1, 32).is_err());
    }

    #[test]
    fn quantize_extent_chair_fixture() {
        // width spanning 3 cells -> w-2, height spanning 4 cells -> h-3
        assert_eq!(quantize_extent(3.0 / 32.0, 32).unwrap(), 2);
        assert_eq!(quantize_extent(4.0 / 32.0, 32).unwrap(), 3);
        assert_eq!(quantize_extent(1.0, 32).unwrap(), 31);
        assert!(quantize_extent(0.0, 32).is_err());
        // sub-cell extents occupy one anchor and keep token 0
        assert_eq!(quantize_extent(1e-6, 32).unwrap(), 0);
    }

    #[test]
    fn quantize_is_monotone() {
        let n = 32;
        let mut prev = 0;
        for i in 0..1000 {
            let v = i as f64 / 1000.0;
            let q = quantize(v, n).unwrap();
            assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn dequantize_full_frame_and_midpoint() {
        let v = vocab();
        let b = dequantize_box(
            v.encode(TokenKind::Class, 0).unwrap(),
            v.encode(TokenKind::X, 0).unwrap(),
            v.encode(TokenKind::Y, 0).unwrap(),
            v.encode(TokenKind::W, 31).unwrap(),
            v.encode(TokenKind::H, 31).unwrap(),
            &v,
        )
        .unwrap();
        assert_eq!((b.x, b.y, b.w, b.h), (0.0, 0.0, 1.0, 1.0));
        let b = dequantize_box(
            v.encode(TokenKind::Class, 3).unwrap(),
            v.encode(TokenKind::X, 16).unwrap(),
            v.encode(TokenKind::Y, 0).unwrap(),
            v.encode(TokenKind::W, 0).unwrap(),
            v.encode(TokenKind::H, 0).unwrap(),
            &v,
        )
        .unwrap();
        assert_eq!(b.x, 0.5);
    }

    #[test]
    fn quantize_dequantize_is_retract() {
        let v = vocab();
        let n = v.grid;
        for (xi, yi, wi, hi) in [(0u32, 0u32, 31u32, 31u32), (5, 7, 2, 3), (31, 31, 0, 0)] {
            let b = dequantize_box(
                v.encode(TokenKind::Class, 1).unwrap(),
                v.encode(TokenKind::X, xi).unwrap(),
                v.encode(TokenKind::Y, yi).unwrap(),
                v.encode(TokenKind::W, wi).unwrap(),
                v.encode(TokenKind::H, hi).unwrap(),
                &v,
            )
            .unwrap();
            assert_eq!(quantize(b.x, n).unwrap(), xi);
            assert_eq!(quantize(b.y, n).unwrap(), yi);
            assert_eq!(quantize_extent(b.w, n).unwrap(), wi);
            assert_eq!(quantize_extent(b.h, n).unwrap(), hi);
        }
    }

    #[test]
    fn single_box_sequence_has_seven_tokens() {
        let v = vocab();
        let l = Layout::new(vec![BBox::new(2, 0.25, 0.25, 0.5, 0.5).unwrap()]);
        let s = layout_to_seq(&l, &v).unwrap();
        assert_eq!(s.len(), 7);
        assert_eq!(s.ids[0], v.bos());
        assert_eq!(*s.ids.last().unwrap(), v.eos());
    }

    #[test]
    fn raster_order_breaks_y_ties_by_x() {
        let v = vocab();
        let b1 = BBox::new(0, 0.1, 0.5, 0.1, 0.1).unwrap();
        let b2 = BBox::new(1, 0.6, 0.5, 0.1, 0.1).unwrap();
        let l = Layout::new(vec![b2, b1]);
        let s = layout_to_seq(&l, &v).unwrap();
        // first box in the sequence is the left one
        assert_eq!(v.decode(TokenKind::Class, s.ids[1]).unwrap(), 0);
    }

    #[test]
    fn empty_layout_rejected() {
        assert!(layout_to_seq(&Layout::default(), &vocab()).is_err());
    }

    #[test]
    fn oversized_layout_rejected() {
        let b = BBox::new(0, 0.0, 0.0, 0.1, 0.1).unwrap();
        let l = Layout::new(vec![b; MAX_ELEMENTS + 1]);
        assert!(matches!(
            layout_to_seq(&l, &vocab()),
            Err(Error::Size { .. })
        ));
    }

    #[test]
    fn seq_to_layout_rejects_mask_and_truncation() {
        let v = vocab();
        let l = Layout::new(vec![BBox::new(2, 0.25, 0.25, 0.5, 0.5).unwrap()]);
        let mut s = layout_to_seq(&l, &v).unwrap();
        let mut masked = s.clone();
        masked.ids[2] = v.mask();
        let err = seq_to_layout(&masked, &v).unwrap_err();
        assert!(matches!(err, Error::Parse { index: 2, .. }));
        s.ids.remove(3);
        assert!(seq_to_layout(&s, &v).is_err());
    }

    #[test]
    fn flip_is_involution_with_fixed_center() {
        let l = Layout::new(vec![
            BBox::new(0, 0.0, 0.2, 0.25, 0.3).unwrap(),
            BBox::new(1, 0.375, 0.1, 0.25, 0.2).unwrap(), // centered: x = (1-w)/2
        ]);
        let f = flip_lr(&l);
        assert!((f.boxes[0].x - 0.75).abs() < 1e-12);
        assert!((f.boxes[1].x - 0.375).abs() < 1e-12);
        let ff = flip_lr(&f);
        for (a, b) in ff.boxes.iter().zip(&l.boxes) {
            assert!((a.x - b.x).abs() < 1e-12);
            assert_eq!((a.y, a.w, a.h), (b.y, b.w, b.h));
        }
    }
}
