//! Property tests for the layout/token representation.

use layoutseq_core::layout::{
    box_tokens, dequantize_box, flip_lr, layout_to_seq, quantize, quantize_extent, raster_sorted,
    seq_to_layout, BBox, Layout, Vocab,
};
use proptest::prelude::*;

fn arb_box(classes: u32) -> impl Strategy<Value = BBox> {
    (
        0..classes,
        0.0..0.99f64,
        0.0..0.99f64,
        0.01..1.0f64,
        0.01..1.0f64,
    )
        .prop_map(|(c, x, y, wf, hf)| {
            BBox::new(c, x, y, wf * (1.0 - x), hf * (1.0 - y)).unwrap()
        })
}

fn arb_layout(classes: u32) -> impl Strategy<Value = Layout> {
    prop::collection::vec(arb_box(classes), 1..12).prop_map(Layout::new)
}

proptest! {
    #[test]
    fn quantize_is_monotone(a in 0.0..1.0f64, b in 0.0..1.0f64, n in 2..64u32) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let qa = quantize(lo, n).unwrap();
        let qb = quantize(hi, n).unwrap();
        prop_assert!(qa <= qb);
        prop_assert!(qb < n);
    }

    #[test]
    fn quantize_extent_is_monotone(a in 1e-6..1.0f64, b in 1e-6..1.0f64, n in 2..64u32) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let qa = quantize_extent(lo, n).unwrap();
        let qb = quantize_extent(hi, n).unwrap();
        prop_assert!(qa <= qb);
        prop_assert!(qb < n);
    }

    #[test]
    fn seq_round_trip_is_stable(layout in arb_layout(7), grid in 4..32u32) {
        let vocab = Vocab::new(7, grid).unwrap();
        let seq1 = layout_to_seq(&layout, &vocab).unwrap();
        let back = seq_to_layout(&seq1, &vocab).unwrap();
        let seq2 = layout_to_seq(&back, &vocab).unwrap();
        // one quantization pass is lossy; a second must be the identity
        prop_assert_eq!(seq1.ids, seq2.ids);
    }

    #[test]
    fn box_token_round_trip(b in arb_box(5), grid in 4..32u32) {
        let vocab = Vocab::new(5, grid).unwrap();
        let t = box_tokens(&b, &vocab).unwrap();
        let deq = dequantize_box(t[0], t[1], t[2], t[3], t[4], &vocab).unwrap();
        prop_assert_eq!(box_tokens(&deq, &vocab).unwrap(), t);
    }

    #[test]
    fn flip_is_involution(layout in arb_layout(6)) {
        let twice = flip_lr(&flip_lr(&layout));
        prop_assert_eq!(twice.boxes.len(), layout.boxes.len());
        for (a, b) in layout.boxes.iter().zip(&twice.boxes) {
            prop_assert_eq!(a.class_id, b.class_id);
            prop_assert!((a.x - b.x).abs() < 1e-9);
            prop_assert_eq!(a.y, b.y);
            prop_assert!((a.w - b.w).abs() < 1e-9);
            prop_assert_eq!(a.h, b.h);
        }
    }

    #[test]
    fn flip_preserves_vertical_tokens(layout in arb_layout(6), grid in 4..32u32) {
        let vocab = Vocab::new(6, grid).unwrap();
        let seq = layout_to_seq(&layout, &vocab).unwrap();
        let flipped = layout_to_seq(&flip_lr(&layout), &vocab).unwrap();
        // same box count; the multisets of (class, y, w, h) tokens must agree
        prop_assert_eq!(seq.ids.len(), flipped.ids.len());
        let keys = |ids: &[u32]| {
            let mut v: Vec<[u32; 4]> = ids[1..ids.len() - 1]
                .chunks(5)
                .map(|c| [c[0], c[2], c[3], c[4]])
                .collect();
            v.sort_unstable();
            v
        };
        prop_assert_eq!(keys(&seq.ids), keys(&flipped.ids));
    }

    #[test]
    fn raster_sort_is_idempotent(layout in arb_layout(6), grid in 4..32u32) {
        let vocab = Vocab::new(6, grid).unwrap();
        let once = raster_sorted(&layout, &vocab).unwrap();
        let twice = raster_sorted(&once, &vocab).unwrap();
        prop_assert_eq!(once.clone(), twice);
        // a permutation of the input
        let mut a = layout.boxes.clone();
        let mut b = once.boxes.clone();
        let key = |x: &BBox| (x.class_id, x.x.to_bits(), x.y.to_bits(), x.w.to_bits(), x.h.to_bits());
        a.sort_by_key(key);
        b.sort_by_key(key);
        prop_assert_eq!(a, b);
    }
}
