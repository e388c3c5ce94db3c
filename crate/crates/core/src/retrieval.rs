//! Layout-to-layout retrieval over pooled encoder embeddings, plus the
//! AP@k / mAP@k metrics used to judge it.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layout::{layout_to_seq, Layout, Vocab};
use crate::math;
use crate::model::Model;

/// How a sequence's hidden states are pooled into one embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Pooling {
    /// Mean of the final hidden states (default for both model kinds).
    Mean,
    /// Last position's hidden state (causal alternative).
    Last,
}

/// Exact cosine-similarity index: unit-normalized rows, brute-force search.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingIndex {
    pub ids: Vec<String>,
    pub dim: usize,
    /// Row-major [len × dim], every row L2-normalized.
    pub vectors: Vec<f64>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> EmbeddingIndex {
        EmbeddingIndex {
            ids: Vec::new(),
            dim,
            vectors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Insert a vector, normalizing it. Duplicate ids and degenerate vectors
    /// are rejected.
    pub fn insert(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "index insert",
                lhs: alloc::vec![self.dim],
                rhs: alloc::vec![vector.len()],
            });
        }
        let id = id.into();
        if self.ids.contains(&id) {
            return Err(Error::Param {
                what: "index id",
                detail: alloc::format!("duplicate id '{id}'"),
            });
        }
        let norm = math::sqrt(vector.iter().map(|v| v * v).sum());
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numeric {
                detail: alloc::format!("embedding norm {norm}"),
            });
        }
        self.vectors.extend(vector.iter().map(|v| v / norm));
        self.ids.push(id);
        Ok(())
    }

    pub fn vector(&self, row: usize) -> &[f64] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    /// Exact top-k by cosine, descending; ties broken by insertion order.
    /// The query is normalized before the scan.
    pub fn query(&self, embedding: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        if self.is_empty() {
            return Err(Error::Empty("embedding index"));
        }
        if embedding.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "index query",
                lhs: alloc::vec![self.dim],
                rhs: alloc::vec![embedding.len()],
            });
        }
        let norm = math::sqrt(embedding.iter().map(|v| v * v).sum());
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numeric {
                detail: alloc::format!("query norm {norm}"),
            });
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|r| {
                let cos = self
                    .vector(r)
                    .iter()
                    .zip(embedding)
                    .map(|(a, b)| a * b / norm)
                    .sum();
                (r, cos)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(r, c)| (self.ids[r].clone(), c))
            .collect())
    }
}

/// Embed every layout and build an index. Layouts that fail to tokenize are
/// skipped; the second return value counts them. Ids come from the layout's
/// `source_id`, falling back to the corpus position.
pub fn build_index(
    model: &Model,
    layouts: &[Layout],
    vocab: &Vocab,
    pooling: Pooling,
) -> Result<(EmbeddingIndex, usize)> {
    let mut index = EmbeddingIndex::new(model.config.d_model);
    let mut skipped = 0;
    for (i, layout) in layouts.iter().enumerate() {
        let ids = match layout_to_seq(layout, vocab) {
            Ok(s) if s.len() <= model.config.max_seq_len => s.ids,
            _ => {
                skipped += 1;
                continue;
            }
        };
        let emb = match pooling {
            Pooling::Mean => model.embed_layout(&ids, vocab.pad())?,
            Pooling::Last => model.embed_layout_last(&ids, vocab.pad())?,
        };
        let id = layout
            .source_id
            .clone()
            .unwrap_or_else(|| i.to_string());
        index.insert(id, &emb)?;
    }
    Ok((index, skipped))
}

/// Truncated average precision with normalizer min(k, |relevant|):
/// AP@k = (1/min(k,|R|)) Σ_{i≤k, ranking_i ∈ R} precision@i.
/// An empty relevant set scores 0.
pub fn average_precision_at_k(
    ranking: &[String],
    relevant: &BTreeSet<String>,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::Param {
            what: "ap k",
            detail: "k must be >= 1".into(),
        });
    }
    if relevant.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranking.iter().take(k).enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / k.min(relevant.len()) as f64)
}

/// Unweighted mean AP@k over queries against an index. Each query is an
/// indexed id; its own entry is excluded from the ranking. Queries missing a
/// relevance entry (or absent from the index) are excluded and counted.
pub fn map_at_k(
    index: &EmbeddingIndex,
    queries: &[String],
    relevance: &BTreeMap<String, BTreeSet<String>>,
    k: usize,
) -> Result<(f64, usize)> {
    if queries.is_empty() {
        return Err(Error::Empty("map_at_k queries"));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for q in queries {
        let (row, relevant) = match (index.row_of(q), relevance.get(q)) {
            (Some(r), Some(rel)) => (r, rel),
            _ => {
                excluded += 1;
                continue;
            }
        };
        let ranked = index.query(index.vector(row), k + 1)?;
        let ranking: Vec<String> = ranked
            .into_iter()
            .filter(|(id, _)| id != q)
            .take(k)
            .map(|(id, _)| id)
            .collect();
        total += average_precision_at_k(&ranking, relevant, k)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Empty("map_at_k usable queries"));
    }
    Ok((total / used as f64, excluded))
}
