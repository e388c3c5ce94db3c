//! Dependency-free SVG rendering of layouts and insertion candidates.
//! Existing boxes are filled with a per-class color; candidates are drawn as
//! dashed outlines whose opacity encodes score / max score (lighter = lower
//! ranked).

use layoutseq_core::{BBox, Layout};

const CANVAS: f64 = 512.0;

/// Fixed palette, cycled by class id.
const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];

pub fn class_color(class_id: u32) -> &'static str {
    PALETTE[class_id as usize % PALETTE.len()]
}

fn fmt(v: f64) -> String {
    format!("{:.2}", v * CANVAS)
}

fn rect(b: &BBox, attrs: &str, title: &str) -> String {
    format!(
        "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" {}><title>{}</title></rect>\n",
        fmt(b.x),
        fmt(b.y),
        fmt(b.w),
        fmt(b.h),
        attrs,
        title
    )
}

fn class_label(class_id: u32, names: Option<&[String]>) -> String {
    names
        .and_then(|n| n.get(class_id as usize).cloned())
        .unwrap_or_else(|| format!("class {class_id}"))
}

pub fn render_svg(
    layout: &Layout,
    candidates: &[(BBox, f64)],
    class_names: Option<&[String]>,
) -> String {
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{c}\" height=\"{c}\" viewBox=\"0 0 {c} {c}\">\n  \
         <rect x=\"0\" y=\"0\" width=\"{c}\" height=\"{c}\" fill=\"#ffffff\" stroke=\"#cccccc\"/>\n",
        c = CANVAS
    );
    for b in &layout.boxes {
        let color = class_color(b.class_id);
        let attrs = format!(
            "fill=\"{color}\" fill-opacity=\"0.35\" stroke=\"{color}\" stroke-width=\"2\""
        );
        svg.push_str(&rect(b, &attrs, &class_label(b.class_id, class_names)));
    }
    let max_score = candidates
        .iter()
        .map(|&(_, s)| s)
        .fold(0.0_f64, f64::max);
    for (b, score) in candidates {
        let opacity = if max_score > 0.0 {
            score / max_score
        } else {
            1.0
        };
        let color = class_color(b.class_id);
        let attrs = format!(
            "fill=\"none\" stroke=\"{color}\" stroke-width=\"3\" stroke-dasharray=\"6 3\" stroke-opacity=\"{opacity:.3}\""
        );
        let title = format!(
            "{} candidate, score {score:.3e}",
            class_label(b.class_id, class_names)
        );
        svg.push_str(&rect(b, &attrs, &title));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_box_layout_renders_one_rect() {
        let layout = Layout::new(vec![BBox::new(0, 0.25, 0.25, 0.5, 0.5).unwrap()]);
        let svg = render_svg(&layout, &[], None);
        // background + one box
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn candidate_opacity_scales_with_score() {
        let layout = Layout::new(vec![BBox::new(0, 0.1, 0.1, 0.2, 0.2).unwrap()]);
        let cands = vec![
            (BBox::new(1, 0.5, 0.5, 0.2, 0.2).unwrap(), 0.8),
            (BBox::new(1, 0.6, 0.6, 0.2, 0.2).unwrap(), 0.4),
        ];
        let svg = render_svg(&layout, &cands, None);
        assert!(svg.contains("stroke-opacity=\"1.000\""));
        assert!(svg.contains("stroke-opacity=\"0.500\""));
    }
}
