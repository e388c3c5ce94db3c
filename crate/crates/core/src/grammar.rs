//! Synthetic layout grammars with an exactly enumerable probability oracle.
//!
//! A grammar is an ordered list of stochastic rules on an N×N cell grid.
//! Each rule places `count` boxes of one class; coordinates come from uniform
//! choices, copies of an earlier rule's box (with an offset), or a
//! span-to-bottom extent. Because every choice is discrete and the support is
//! small, the induced distribution over token sequences can be enumerated
//! exactly, giving ground-truth entropies and conditionals to hold trained
//! models against.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layout::{layout_to_seq, BBox, Layout, TokenSeq, Vocab};
use crate::math;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Field {
    X,
    Y,
    W,
    H,
}

/// How one coordinate (in grid cells) of a rule's boxes is chosen.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ValueSpec {
    /// Uniform over the listed cell values.
    Choice(Vec<u32>),
    /// The field of the first earlier-placed box of `class`, plus `offset`.
    Copy { class: u32, field: Field, offset: i32 },
    /// Extent reaching the bottom edge: grid − y.
    ToBottom,
}

/// How many boxes a rule places.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CountSpec {
    /// Explicit (count, probability) table.
    Table(Vec<(u32, f64)>),
    /// Count equals the number of already-placed boxes of `class`.
    IffPresent(u32),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rule {
    pub class: u32,
    pub count: CountSpec,
    pub x: ValueSpec,
    pub y: ValueSpec,
    pub w: ValueSpec,
    pub h: ValueSpec,
    /// Draw per-box x values without replacement (required when count > 1;
    /// y/w/h are drawn once and shared by the rule's boxes).
    pub distinct_x: bool,
    /// Participates in the layout's mode label (retrieval relevance).
    pub in_mode: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grammar {
    pub name: String,
    pub grid: u32,
    pub classes: Vec<String>,
    pub rules: Vec<Rule>,
}

/// A placed box in grid cells, before normalization.
#[derive(Clone, Copy, Debug)]
struct CellBox {
    rule: usize,
    class: u32,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

fn rule_err(rule: usize, detail: String) -> Error {
    Error::Generation {
        rule: format!("rule {rule}"),
        detail,
    }
}

impl CountSpec {
    fn max_count(&self, rules: &[Rule], index: usize) -> u32 {
        match self {
            CountSpec::Table(t) => t.iter().map(|&(c, _)| c).max().unwrap_or(0),
            CountSpec::IffPresent(class) => rules[..index]
                .iter()
                .enumerate()
                .find(|(_, r)| r.class == *class)
                .map(|(i, r)| r.count.max_count(rules, i))
                .unwrap_or(0),
        }
    }
}

impl Grammar {
    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::new(self.classes.len() as u32, self.grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rules.is_empty() || self.classes.is_empty() {
            return Err(Error::Empty("grammar rules/classes"));
        }
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.class as usize >= self.classes.len() {
                return Err(rule_err(i, format!("class {} out of range", rule.class)));
            }
            match &rule.count {
                CountSpec::Table(t) => {
                    if t.is_empty() {
                        return Err(rule_err(i, "empty count table".into()));
                    }
                    let total: f64 = t.iter().map(|&(_, p)| p).sum();
                    if (total - 1.0).abs() > 1e-9 || t.iter().any(|&(_, p)| p < 0.0) {
                        return Err(rule_err(i, format!("count table sums to {total}")));
                    }
                }
                CountSpec::IffPresent(class) => {
                    if !self.rules[..i].iter().any(|r| r.class == *class) {
                        return Err(rule_err(
                            i,
                            format!("iff_present references class {class} with no earlier rule"),
                        ));
                    }
                }
            }
            let max = rule.count.max_count(&self.rules, i);
            if max > 1 {
                let slots = match &rule.x {
                    ValueSpec::Choice(c) if rule.distinct_x => c.len() as u32,
                    _ => 1,
                };
                if max > slots {
                    return Err(rule_err(
                        i,
                        format!("count up to {max} exceeds {slots} distinct x slots"),
                    ));
                }
            }
            for (field, spec) in [
                (Field::X, &rule.x),
                (Field::Y, &rule.y),
                (Field::W, &rule.w),
                (Field::H, &rule.h),
            ] {
                match spec {
                    ValueSpec::Choice(c) if c.is_empty() => {
                        return Err(rule_err(i, format!("empty choice list for {field:?}")));
                    }
                    ValueSpec::Copy { class, .. } => {
                        if !self.rules[..i].iter().any(|r| r.class == *class) {
                            return Err(rule_err(
                                i,
                                format!("copy references class {class} with no earlier rule"),
                            ));
                        }
                    }
                    ValueSpec::ToBottom if field != Field::H => {
                        return Err(rule_err(i, "to_bottom is only valid for h".into()));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Mixed-radix mode label from the class counts of `in_mode` rules.
    pub fn mode_label(&self, layout: &Layout) -> u32 {
        let mut label = 0u32;
        let mut radix = 1u32;
        for (i, rule) in self.rules.iter().enumerate() {
            if !rule.in_mode {
                continue;
            }
            let count = layout
                .boxes
                .iter()
                .filter(|b| b.class_id == rule.class)
                .count() as u32;
            label += count * radix;
            radix *= rule.count.max_count(&self.rules, i) + 1;
        }
        label
    }

    fn resolve(&self, spec: &ValueSpec, y: Option<u32>, placed: &[CellBox], rule: usize) -> Result<Option<u32>> {
        match spec {
            ValueSpec::Choice(_) => Ok(None),
            ValueSpec::Copy { class, field, offset } => {
                let src = placed
                    .iter()
                    .find(|b| b.class == *class)
                    .ok_or_else(|| rule_err(rule, format!("copy source class {class} absent")))?;
                let base = match field {
                    Field::X => src.x,
                    Field::Y => src.y,
                    Field::W => src.w,
                    Field::H => src.h,
                } as i64;
                let v = base + *offset as i64;
                if v < 0 {
                    return Err(rule_err(rule, format!("copy offset yields {v}")));
                }
                Ok(Some(v as u32))
            }
            ValueSpec::ToBottom => {
                let y = y.ok_or_else(|| rule_err(rule, "to_bottom before y resolved".into()))?;
                if y >= self.grid {
                    return Err(rule_err(rule, format!("to_bottom from y={y}")));
                }
                Ok(Some(self.grid - y))
            }
        }
    }

    fn to_bbox(&self, cb: CellBox) -> Result<BBox> {
        let n = self.grid as f64;
        if cb.w == 0 || cb.h == 0 || cb.x + cb.w > self.grid || cb.y + cb.h > self.grid {
            return Err(rule_err(
                cb.rule,
                format!("box ({},{},{},{}) leaves the {}-cell grid", cb.x, cb.y, cb.w, cb.h, self.grid),
            ));
        }
        BBox::new(
            cb.class,
            cb.x as f64 / n,
            cb.y as f64 / n,
            cb.w as f64 / n,
            cb.h as f64 / n,
        )
    }
}

/// One i.i.d. sample. Returns the layout (unsorted; tokenization raster-sorts)
/// and its mode label.
pub fn sample_layout(grammar: &Grammar, rng: &mut Rng) -> Result<(Layout, u32)> {
    let mut placed: Vec<CellBox> = Vec::new();
    for (i, rule) in grammar.rules.iter().enumerate() {
        let count = match &rule.count {
            CountSpec::Table(t) => {
                let weights: Vec<f64> = t.iter().map(|&(_, p)| p).collect();
                t[rng.sample_weighted(&weights)].0
            }
            CountSpec::IffPresent(class) => {
                placed.iter().filter(|b| b.class == *class).count() as u32
            }
        };
        if count == 0 {
            continue;
        }
        // y, w, h are shared by the rule's boxes; x varies per box.
        let y = match grammar.resolve(&rule.y, None, &placed, i)? {
            Some(v) => v,
            None => match &rule.y {
                ValueSpec::Choice(c) => c[rng.below(c.len())],
                _ => unreachable!(),
            },
        };
        let pick = |spec: &ValueSpec, rng: &mut Rng| -> Result<u32> {
            Ok(match grammar.resolve(spec, Some(y), &placed, i)? {
                Some(v) => v,
                None => match spec {
                    ValueSpec::Choice(c) => c[rng.below(c.len())],
                    _ => unreachable!(),
                },
            })
        };
        let w = pick(&rule.w, rng)?;
        let h = pick(&rule.h, rng)?;
        let xs: Vec<u32> = match grammar.resolve(&rule.x, Some(y), &placed, i)? {
            Some(v) => vec![v; count as usize],
            None => match &rule.x {
                ValueSpec::Choice(c) => {
                    if rule.distinct_x {
                        let mut pool = c.clone();
                        rng.shuffle(&mut pool);
                        pool.truncate(count as usize);
                        pool.sort_unstable();
                        pool
                    } else {
                        if count > 1 {
                            return Err(rule_err(i, "count > 1 requires distinct_x".into()));
                        }
                        vec![c[rng.below(c.len())]]
                    }
                }
                _ => unreachable!(),
            },
        };
        for x in xs {
            placed.push(CellBox { rule: i, class: rule.class, x, y, w, h });
        }
    }
    let boxes = placed
        .iter()
        .map(|&cb| grammar.to_bbox(cb))
        .collect::<Result<Vec<_>>>()?;
    let layout = Layout::new(boxes);
    let label = grammar.mode_label(&layout);
    Ok((layout, label))
}

/// The in-repo benchmark grammar: 6 classes on a 16×16 grid, left-right
/// flip-symmetric, with a right-context dependency (a caption appears exactly
/// when a figure appears later in raster order). Support: 2600 sequences.
pub fn benchmark_grammar() -> Grammar {
    let choice = |v: &[u32]| ValueSpec::Choice(v.to_vec());
    let fixed = |v: u32| ValueSpec::Choice(vec![v]);
    Grammar {
        name: "benchmark-v1".into(),
        grid: 16,
        classes: vec![
            "sky".into(),
            "ground".into(),
            "person".into(),
            "tree".into(),
            "figure".into(),
            "caption".into(),
        ],
        rules: vec![
            Rule {
                class: 0, // sky: full-width top band
                count: CountSpec::Table(vec![(1, 1.0)]),
                x: fixed(0),
                y: fixed(0),
                w: fixed(16),
                h: choice(&[2, 3]),
                distinct_x: false,
                in_mode: false,
            },
            Rule {
                class: 1, // ground: full-width bottom band
                count: CountSpec::Table(vec![(1, 1.0)]),
                x: fixed(0),
                y: choice(&[12, 13]),
                w: fixed(16),
                h: ValueSpec::ToBottom,
                distinct_x: false,
                in_mode: false,
            },
            Rule {
                class: 2, // people standing on the ground line
                count: CountSpec::Table(vec![(1, 1.0 / 3.0), (2, 1.0 / 3.0), (3, 1.0 / 3.0)]),
                x: choice(&[2, 4, 7, 10, 12]),
                y: ValueSpec::Copy { class: 1, field: Field::Y, offset: -3 },
                w: fixed(2),
                h: fixed(3),
                distinct_x: true,
                in_mode: true,
            },
            Rule {
                class: 3, // trees flank both sides or neither
                count: CountSpec::Table(vec![(0, 0.5), (2, 0.5)]),
                x: choice(&[0, 14]),
                y: fixed(4),
                w: fixed(2),
                h: fixed(5),
                distinct_x: true,
                in_mode: true,
            },
            Rule {
                class: 4, // inset figure
                count: CountSpec::Table(vec![(0, 0.5), (1, 0.5)]),
                x: choice(&[3, 5, 8, 10]),
                y: choice(&[5, 6, 7]),
                w: fixed(3),
                h: fixed(4),
                distinct_x: false,
                in_mode: true,
            },
            Rule {
                class: 5, // caption above the figure — earlier in raster
                // order than the figure it depends on (right-context probe)
                count: CountSpec::IffPresent(4),
                x: ValueSpec::Copy { class: 4, field: Field::X, offset: 0 },
                y: ValueSpec::Copy { class: 4, field: Field::Y, offset: -3 },
                w: fixed(3),
                h: fixed(1),
                distinct_x: false,
                in_mode: false,
            },
        ],
    }
}

/// All size-`k` index subsets of `0..n`, lexicographic.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Per-factorization exact entropies in nats per predicted token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entropies {
    /// Next-token factorization: H(joint) / E[tokens after BOS].
    pub causal_per_token: f64,
    /// Iterative 5-step masked factorization averaged over every box.
    pub masked_per_token: f64,
}

/// Exact enumeration of a grammar's support with probabilities.
pub struct GrammarOracle {
    pub vocab: Vocab,
    /// (token sequence, probability), grouped by length then lexicographic.
    pub seqs: Vec<(Vec<u32>, f64)>,
    /// Start offsets of equal-length runs in `seqs`, keyed by length.
    by_len: BTreeMap<usize, (usize, usize)>,
}

const MAX_SUPPORT: usize = 1_000_000;

impl GrammarOracle {
    /// Enumerate the full support. Refuses past [`MAX_SUPPORT`] sequences.
    pub fn build(grammar: &Grammar) -> Result<GrammarOracle> {
        grammar.validate()?;
        let vocab = grammar.vocab()?;
        let mut map: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        let mut stack: Vec<(usize, Vec<CellBox>, f64)> = vec![(0, Vec::new(), 1.0)];
        while let Some((ri, placed, prob)) = stack.pop() {
            if ri == grammar.rules.len() {
                let boxes = placed
                    .iter()
                    .map(|&cb| grammar.to_bbox(cb))
                    .collect::<Result<Vec<_>>>()?;
                let seq = layout_to_seq(&Layout::new(boxes), &vocab)?;
                *map.entry(seq.ids).or_insert(0.0) += prob;
                if map.len() > MAX_SUPPORT {
                    return Err(Error::Size {
                        what: "grammar support",
                        got: map.len(),
                        max: MAX_SUPPORT,
                    });
                }
                continue;
            }
            for (boxes, p) in Self::rule_options(grammar, ri, &placed)? {
                let mut next = placed.clone();
                next.extend(boxes);
                stack.push((ri + 1, next, prob * p));
            }
        }
        let mut seqs: Vec<(Vec<u32>, f64)> = map.into_iter().collect();
        seqs.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.0.cmp(&b.0)));
        let mut by_len = BTreeMap::new();
        let mut start = 0;
        for i in 0..=seqs.len() {
            if i == seqs.len() || (i > start && seqs[i].0.len() != seqs[start].0.len()) {
                if i > start {
                    by_len.insert(seqs[start].0.len(), (start, i));
                }
                start = i;
            }
        }
        Ok(GrammarOracle { vocab, seqs, by_len })
    }

    /// All (boxes, probability) outcomes of one rule given earlier boxes.
    fn rule_options(
        grammar: &Grammar,
        ri: usize,
        placed: &[CellBox],
    ) -> Result<Vec<(Vec<CellBox>, f64)>> {
        let rule = &grammar.rules[ri];
        let counts: Vec<(u32, f64)> = match &rule.count {
            CountSpec::Table(t) => t.clone(),
            CountSpec::IffPresent(class) => {
                vec![(placed.iter().filter(|b| b.class == *class).count() as u32, 1.0)]
            }
        };
        let mut out = Vec::new();
        for (count, pc) in counts {
            if pc == 0.0 {
                continue;
            }
            if count == 0 {
                out.push((Vec::new(), pc));
                continue;
            }
            let y_opts: Vec<u32> = match grammar.resolve(&rule.y, None, placed, ri)? {
                Some(v) => vec![v],
                None => match &rule.y {
                    ValueSpec::Choice(c) => c.clone(),
                    _ => unreachable!(),
                },
            };
            for &y in &y_opts {
                let opts = |spec: &ValueSpec| -> Result<Vec<u32>> {
                    Ok(match grammar.resolve(spec, Some(y), placed, ri)? {
                        Some(v) => vec![v],
                        None => match spec {
                            ValueSpec::Choice(c) => c.clone(),
                            _ => unreachable!(),
                        },
                    })
                };
                let w_opts = opts(&rule.w)?;
                let h_opts = opts(&rule.h)?;
                let x_sets: Vec<Vec<u32>> = match grammar.resolve(&rule.x, Some(y), placed, ri)? {
                    Some(v) => vec![vec![v; count as usize]],
                    None => match &rule.x {
                        ValueSpec::Choice(c) => {
                            if rule.distinct_x {
                                combinations(c.len(), count as usize)
                                    .into_iter()
                                    .map(|idx| idx.iter().map(|&j| c[j]).collect())
                                    .collect()
                            } else {
                                c.iter().map(|&v| vec![v]).collect()
                            }
                        }
                        _ => unreachable!(),
                    },
                };
                let p = pc / (y_opts.len() * w_opts.len() * h_opts.len() * x_sets.len()) as f64;
                for xs in &x_sets {
                    for &w in &w_opts {
                        for &h in &h_opts {
                            let boxes = xs
                                .iter()
                                .map(|&x| CellBox { rule: ri, class: rule.class, x, y, w, h })
                                .collect();
                            out.push((boxes, p));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn total_probability(&self) -> f64 {
        self.seqs.iter().map(|&(_, p)| p).sum()
    }

    /// Exact conditional distribution (length `vocab.size()`) of the token at
    /// `position` given a context whose MASK positions are unconstrained.
    /// The context fixes the sequence length.
    pub fn conditional(&self, context: &[u32], position: usize) -> Result<Vec<f64>> {
        if position >= context.len() {
            return Err(Error::Index {
                what: "oracle conditional position",
                got: position,
                len: context.len(),
            });
        }
        let mask = self.vocab.mask();
        let mut dist = vec![0.0; self.vocab.size() as usize];
        let mut total = 0.0;
        let (lo, hi) = match self.by_len.get(&context.len()) {
            Some(&r) => r,
            None => (0, 0),
        };
        for (seq, p) in &self.seqs[lo..hi] {
            let matches = context
                .iter()
                .zip(seq)
                .all(|(&c, &s)| c == mask || c == s);
            if matches {
                dist[seq[position] as usize] += p;
                total += p;
            }
        }
        if total <= 0.0 {
            return Err(Error::Generation {
                rule: "oracle".into(),
                detail: format!("zero-probability context of length {}", context.len()),
            });
        }
        for d in &mut dist {
            *d /= total;
        }
        Ok(dist)
    }

    /// Conditional of the token at `position` given only the prefix before it
    /// (marginalized over lengths — the causal visibility pattern).
    pub fn causal_conditional(&self, prefix: &[u32], position: usize) -> Result<Vec<f64>> {
        let mut dist = vec![0.0; self.vocab.size() as usize];
        let mut total = 0.0;
        for (seq, p) in &self.seqs {
            if seq.len() > position && seq[..position] == prefix[..position] {
                dist[seq[position] as usize] += p;
                total += p;
            }
        }
        if total <= 0.0 {
            return Err(Error::Generation {
                rule: "oracle".into(),
                detail: format!("zero-probability prefix of length {position}"),
            });
        }
        for d in &mut dist {
            *d /= total;
        }
        Ok(dist)
    }

    /// Exact entropies under both factorizations, nats per predicted token.
    pub fn entropy(&self) -> Result<Entropies> {
        // Causal: every token after BOS (EOS included) is predicted, and the
        // chain rule telescopes to -ln p(sequence).
        let mut h_joint = 0.0;
        let mut causal_tokens = 0.0;
        for (seq, p) in &self.seqs {
            h_joint += -p * math::ln(*p);
            causal_tokens += p * (seq.len() - 1) as f64;
        }

        // Masked: Fig.-2 pattern over every box — mask the box's 5-token
        // span, then score each token given the span's suffix masked.
        let mask = self.vocab.mask();
        let mut cache: BTreeMap<Vec<u32>, Vec<f64>> = BTreeMap::new();
        let mut h_masked = 0.0;
        let mut masked_tokens = 0.0;
        for (seq, p) in &self.seqs {
            let n_boxes = (seq.len() - 2) / 5;
            for b in 0..n_boxes {
                let span = TokenSeq::box_start(b);
                for k in 0..5 {
                    let target = span + k;
                    let mut ctx = seq.clone();
                    for t in ctx.iter_mut().take(span + 5).skip(target) {
                        *t = mask;
                    }
                    let dist = match cache.get(&ctx) {
                        Some(d) => d,
                        None => {
                            let d = self.conditional(&ctx, target)?;
                            cache.entry(ctx).or_insert(d)
                        }
                    };
                    h_masked += -p * math::ln(dist[seq[target] as usize]);
                }
            }
            masked_tokens += p * (5 * n_boxes) as f64;
        }
        Ok(Entropies {
            causal_per_token: h_joint / causal_tokens,
            masked_per_token: h_masked / masked_tokens,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::seq_to_layout;

    fn single_box_grammar(h_choices: &[u32]) -> Grammar {
        Grammar {
            name: "micro".into(),
            grid: 8,
            classes: vec!["thing".into()],
            rules: vec![Rule {
                class: 0,
                count: CountSpec::Table(vec![(1, 1.0)]),
                x: ValueSpec::Choice(vec![1]),
                y: ValueSpec::Choice(vec![2]),
                w: ValueSpec::Choice(vec![3]),
                h: ValueSpec::Choice(h_choices.to_vec()),
                distinct_x: false,
                in_mode: true,
            }],
        }
    }

    #[test]
    fn fixed_seed_reproduces_layout() {
        let g = benchmark_grammar();
        let (a, la) = sample_layout(&g, &mut Rng::new(7)).unwrap();
        let (b, lb) = sample_layout(&g, &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn samples_tokenize_and_round_trip() {
        let g = benchmark_grammar();
        let vocab = g.vocab().unwrap();
        let mut rng = Rng::new(11);
        for _ in 0..200 {
            let (layout, _) = sample_layout(&g, &mut rng).unwrap();
            let seq = layout_to_seq(&layout, &vocab).unwrap();
            let back = seq_to_layout(&seq, &vocab).unwrap();
            let again = layout_to_seq(&back, &vocab).unwrap();
            assert_eq!(seq, again);
        }
    }

    #[test]
    fn class_marginals_match_declared_distribution() {
        let g = benchmark_grammar();
        let mut rng = Rng::new(3);
        let n = 10_000;
        let mut counts = [0.0f64; 6];
        for _ in 0..n {
            let (layout, _) = sample_layout(&g, &mut rng).unwrap();
            for b in &layout.boxes {
                counts[b.class_id as usize] += 1.0;
            }
        }
        // expected boxes per layout: sky 1, ground 1, person 2, tree 1,
        // figure 0.5, caption 0.5
        let expected = [1.0, 1.0, 2.0, 1.0, 0.5, 0.5];
        for (c, e) in counts.iter().zip(expected) {
            let mean = c / n as f64;
            assert!(
                (mean - e).abs() < 0.02 * e.max(1.0),
                "marginal {mean} vs expected {e}"
            );
        }
    }

    #[test]
    fn benchmark_support_enumerates_exactly() {
        let oracle = GrammarOracle::build(&benchmark_grammar()).unwrap();
        // hc(2) x gy(2) x person sets(5 + 10 + 10) x trees(2) x figure(1 + 12)
        assert_eq!(oracle.seqs.len(), 2 * 2 * 25 * 2 * 13);
        assert!((oracle.total_probability() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampler_agrees_with_enumeration() {
        let g = benchmark_grammar();
        let vocab = g.vocab().unwrap();
        let oracle = GrammarOracle::build(&g).unwrap();
        let mut rng = Rng::new(21);
        let mut seen: BTreeMap<Vec<u32>, u32> = BTreeMap::new();
        for _ in 0..5000 {
            let (layout, _) = sample_layout(&g, &mut rng).unwrap();
            let seq = layout_to_seq(&layout, &vocab).unwrap();
            *seen.entry(seq.ids).or_insert(0) += 1;
        }
        for ids in seen.keys() {
            assert!(
                oracle.seqs.iter().any(|(s, _)| s == ids),
                "sampled sequence outside enumerated support"
            );
        }
        // the most likely sequences (p = 1/1500) should show up in 5000 draws
        let n_hit = seen.len();
        assert!(n_hit > 400, "only {n_hit} distinct sequences sampled");
    }

    #[test]
    fn deterministic_grammar_has_zero_entropy() {
        let oracle = GrammarOracle::build(&single_box_grammar(&[4])).unwrap();
        assert_eq!(oracle.seqs.len(), 1);
        let e = oracle.entropy().unwrap();
        assert!(e.causal_per_token.abs() < 1e-12);
        assert!(e.masked_per_token.abs() < 1e-12);
    }

    #[test]
    fn two_layout_coin_flip_entropy_is_ln2_over_tokens() {
        // two equiprobable single-box layouts differing only in the h token:
        // causal spreads ln 2 over 6 predicted tokens, masked over 5.
        let oracle = GrammarOracle::build(&single_box_grammar(&[4, 5])).unwrap();
        assert_eq!(oracle.seqs.len(), 2);
        let e = oracle.entropy().unwrap();
        let ln2 = math::ln(2.0);
        assert!((e.causal_per_token - ln2 / 6.0).abs() < 1e-12);
        assert!((e.masked_per_token - ln2 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn benchmark_entropies_match_frozen_goldens() {
        // frozen output of the exact enumeration; the gap between the two
        // factorizations is what the bidirectional model gets to exploit
        let e = GrammarOracle::build(&benchmark_grammar())
            .unwrap()
            .entropy()
            .unwrap();
        assert!((e.causal_per_token - 0.231780334471).abs() < 1e-9);
        assert!((e.masked_per_token - 0.083942987388).abs() < 1e-9);
    }

    #[test]
    fn conditional_on_full_context_is_point_mass() {
        let oracle = GrammarOracle::build(&benchmark_grammar()).unwrap();
        let (seq, _) = oracle.seqs[17].clone();
        let dist = oracle.conditional(&seq, 3).unwrap();
        assert!((dist[seq[3] as usize] - 1.0).abs() < 1e-12);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn right_context_separates_causal_from_bidirectional() {
        // Pick a support sequence containing a caption; its class token is
        // deterministic bidirectionally (the later figure reveals it) but
        // uncertain causally.
        let g = benchmark_grammar();
        let vocab = g.vocab().unwrap();
        let oracle = GrammarOracle::build(&g).unwrap();
        let caption_class = vocab.encode(crate::layout::TokenKind::Class, 5).unwrap();
        let (seq, _) = oracle
            .seqs
            .iter()
            .find(|(s, _)| s.contains(&caption_class))
            .unwrap()
            .clone();
        let pos = seq.iter().position(|&t| t == caption_class).unwrap();
        // bidirectional: mask the caption's whole span, everything else seen
        let mut ctx = seq.clone();
        for t in ctx.iter_mut().skip(pos).take(5) {
            *t = vocab.mask();
        }
        let bi = oracle.conditional(&ctx, pos).unwrap();
        assert!((bi[caption_class as usize] - 1.0).abs() < 1e-9);
        // causal: only the prefix before the caption is visible
        let causal = oracle.causal_conditional(&seq, pos).unwrap();
        assert!(causal[caption_class as usize] < 0.99);
        assert!((causal.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mode_labels_cover_twelve_modes() {
        let g = benchmark_grammar();
        let mut rng = Rng::new(9);
        let mut labels = alloc::collections::BTreeSet::new();
        for _ in 0..2000 {
            let (_, label) = sample_layout(&g, &mut rng).unwrap();
            labels.insert(label);
        }
        assert_eq!(labels.len(), 12);
    }

    #[test]
    fn invalid_grammars_rejected() {
        let mut g = single_box_grammar(&[4]);
        g.rules[0].count = CountSpec::Table(vec![(1, 0.7)]);
        assert!(g.validate().is_err());

        let mut g = single_box_grammar(&[4]);
        g.rules[0].x = ValueSpec::Choice(vec![]);
        assert!(g.validate().is_err());

        let mut g = single_box_grammar(&[4]);
        g.rules[0].count = CountSpec::IffPresent(3);
        assert!(g.validate().is_err());

        // two boxes through a single slot without distinct_x
        let mut g = single_box_grammar(&[4]);
        g.rules[0].count = CountSpec::Table(vec![(2, 1.0)]);
        assert!(g.validate().is_err());
    }

    #[test]
    fn out_of_grid_rule_fails_generation() {
        let mut g = single_box_grammar(&[9]); // y=2, h=9 leaves an 8-cell grid
        g.validate().unwrap();
        assert!(sample_layout(&mut g, &mut Rng::new(0)).is_err());
        assert!(GrammarOracle::build(&g).is_err());
    }
}
