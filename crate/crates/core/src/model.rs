//! Transformer encoder with switchable bidirectional or causal attention.
//!
//! Pre-norm residual blocks: x + Attn(LN(x)), then x + FF(LN(x)) with GELU
//! and dropout after the feed-forward, a final layer norm, learned positional
//! embeddings, and an untied output projection to vocabulary logits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layout::MAX_SEQ_LEN;
use crate::math;
use crate::rng::Rng;
use crate::tensor::{softmax_row, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum AttentionMode {
    Bidirectional,
    Causal,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub attention_mode: AttentionMode,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn preset(name: &str, vocab_size: usize, mode: AttentionMode) -> Result<ModelConfig> {
        let (d_model, n_layers, n_heads, d_ff) = match name {
            "tiny" => (64, 2, 2, 256),
            "small" => (256, 4, 4, 1024),
            "medium" => (512, 6, 8, 2048),
            "large" => (768, 12, 12, 3072),
            other => {
                return Err(Error::Param {
                    what: "model preset",
                    detail: format!("unknown preset '{other}'"),
                })
            }
        };
        Ok(ModelConfig {
            d_model,
            n_layers,
            n_heads,
            d_ff,
            dropout: 0.1,
            max_seq_len: MAX_SEQ_LEN,
            attention_mode: mode,
            vocab_size,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Param {
                what: "model config",
                detail: format!(
                    "d_model {} not divisible by n_heads {}",
                    self.d_model, self.n_heads
                ),
            });
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 || self.n_layers == 0 {
            return Err(Error::Param {
                what: "model config",
                detail: format!("zero-sized dimension in {self:?}"),
            });
        }
        Ok(())
    }

    /// Closed-form parameter count for this configuration.
    pub fn param_count(&self) -> usize {
        let (d, v, s, l, f) = (
            self.d_model,
            self.vocab_size,
            self.max_seq_len,
            self.n_layers,
            self.d_ff,
        );
        v * d + s * d // embeddings
            + l * (4 * (d * d + d)      // q, k, v, o projections
                 + d * f + f + f * d + d // feed-forward
                 + 4 * d)               // two layer norms
            + 2 * d                     // final layer norm
            + d * v + v // output projection
    }
}

/// One named parameter buffer.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// All model weights, in a fixed order.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub entries: Vec<Param>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> &Param {
        self.entries
            .iter()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn lens(&self) -> Vec<usize> {
        self.entries.iter().map(|p| p.data.len()).collect()
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    /// Build graph leaves for every parameter, trainable or frozen.
    pub fn bind(&self, trainable: bool) -> BoundParams {
        let tensors = self
            .entries
            .iter()
            .map(|p| {
                if trainable {
                    Tensor::param(&p.shape, p.data.clone())
                } else {
                    Tensor::constant(&p.shape, p.data.clone())
                }
            })
            .collect();
        BoundParams {
            names: self.entries.iter().map(|p| p.name.clone()).collect(),
            tensors,
        }
    }
}

/// Parameter leaves for one forward/backward pass.
pub struct BoundParams {
    names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl BoundParams {
    /// Bind pre-built leaves (e.g. externally perturbed copies) by name.
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> BoundParams {
        assert_eq!(names.len(), tensors.len());
        BoundParams { names, tensors }
    }

    fn get(&self, name: &str) -> &Tensor {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        &self.tensors[i]
    }

    /// Gradients in parameter order (zeros where a leaf was never touched).
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.len()]))
            .collect()
    }
}

/// Truncated-normal (sigma = 0.02) weights, zero biases, unit layer-norm
/// gains.
pub fn init_params(config: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    config.validate()?;
    let d = config.d_model;
    let mut entries = Vec::new();
    let weight = |name: String, shape: Vec<usize>, rng: &mut Rng| {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.next_trunc_normal(0.02)).collect();
        Param { name, shape, data }
    };
    let zeros = |name: String, shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        Param {
            name,
            shape,
            data: vec![0.0; n],
        }
    };
    let ones = |name: String, shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        Param {
            name,
            shape,
            data: vec![1.0; n],
        }
    };
    entries.push(weight(
        "tok_emb".into(),
        vec![config.vocab_size, d],
        rng,
    ));
    entries.push(weight(
        "pos_emb".into(),
        vec![config.max_seq_len, d],
        rng,
    ));
    for l in 0..config.n_layers {
        for proj in ["q", "k", "v", "o"] {
            entries.push(weight(format!("layer{l}.attn.w{proj}"), vec![d, d], rng));
            entries.push(zeros(format!("layer{l}.attn.b{proj}"), vec![d]));
        }
        entries.push(ones(format!("layer{l}.ln1.gamma"), vec![d]));
        entries.push(zeros(format!("layer{l}.ln1.beta"), vec![d]));
        entries.push(weight(format!("layer{l}.ff.w1"), vec![d, config.d_ff], rng));
        entries.push(zeros(format!("layer{l}.ff.b1"), vec![config.d_ff]));
        entries.push(weight(format!("layer{l}.ff.w2"), vec![config.d_ff, d], rng));
        entries.push(zeros(format!("layer{l}.ff.b2"), vec![d]));
        entries.push(ones(format!("layer{l}.ln2.gamma"), vec![d]));
        entries.push(zeros(format!("layer{l}.ln2.beta"), vec![d]));
    }
    entries.push(ones("final_ln.gamma".into(), vec![d]));
    entries.push(zeros("final_ln.beta".into(), vec![d]));
    entries.push(weight("out.w".into(), vec![d, config.vocab_size], rng));
    entries.push(zeros("out.b".into(), vec![config.vocab_size]));
    Ok(ModelParams { entries })
}

/// Output of one forward pass over a padded batch.
pub struct ForwardOutput {
    /// Final hidden states after the last layer norm, `[batch*seq, d_model]`.
    pub hidden: Tensor,
    /// Unnormalized vocabulary logits, `[batch*seq, vocab]`.
    pub logits: Tensor,
    pub batch: usize,
    pub seq: usize,
}

const MASK_NEG: f64 = -1e30;

/// Forward pass over `batch` sequences of equal (padded) length.
///
/// Attention adds a large negative constant to padded keys and, in causal
/// mode, to keys right of the query. The pad mask (true = real position) is
/// derived from `pad_id` unless given explicitly. Dropout fires only when
/// `training`.
pub fn forward(
    bound: &BoundParams,
    config: &ModelConfig,
    seqs: &[Vec<u32>],
    pad_id: u32,
    pad_mask: Option<&[Vec<bool>]>,
    training: bool,
    rng: &mut Rng,
) -> Result<ForwardOutput> {
    let batch = seqs.len();
    if batch == 0 {
        return Err(Error::Empty("forward batch"));
    }
    let seq = seqs[0].len();
    if seq == 0 {
        return Err(Error::Empty("forward sequence"));
    }
    if seq > config.max_seq_len {
        return Err(Error::Size {
            what: "sequence length",
            got: seq,
            max: config.max_seq_len,
        });
    }
    let mut flat_ids = Vec::with_capacity(batch * seq);
    for s in seqs {
        if s.len() != seq {
            return Err(Error::ShapeMismatch {
                op: "forward batch",
                lhs: vec![seq],
                rhs: vec![s.len()],
            });
        }
        for &id in s {
            if id as usize >= config.vocab_size {
                return Err(Error::Vocab {
                    id,
                    context: "forward input",
                });
            }
            flat_ids.push(id as usize);
        }
    }

    // Per-sample additive attention masks over keys.
    if let Some(pm) = pad_mask {
        if pm.len() != batch || pm.iter().any(|m| m.len() != seq) {
            return Err(Error::ShapeMismatch {
                op: "forward pad_mask",
                lhs: vec![batch, seq],
                rhs: vec![pm.len()],
            });
        }
    }
    let masks: Vec<Tensor> = seqs
        .iter()
        .enumerate()
        .map(|(b, s)| {
            let mut m = vec![0.0; seq * seq];
            for i in 0..seq {
                for j in 0..seq {
                    let pad = match pad_mask {
                        Some(pm) => !pm[b][j],
                        None => s[j] == pad_id,
                    };
                    let future = config.attention_mode == AttentionMode::Causal && j > i;
                    if pad || future {
                        m[i * seq + j] = MASK_NEG;
                    }
                }
            }
            Tensor::constant(&[seq, seq], m)
        })
        .collect();

    let d = config.d_model;
    let dh = d / config.n_heads;
    let scale = 1.0 / math::sqrt(dh as f64);

    let tok = bound.get("tok_emb").gather_rows(&flat_ids)?;
    let pos_rows: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
    let pos = bound.get("pos_emb").gather_rows(&pos_rows)?;
    let mut x = tok.add(&pos)?;

    for l in 0..config.n_layers {
        let p = |suffix: &str| bound.get(&format!("layer{l}.{suffix}"));
        let h = x.layer_norm(p("ln1.gamma"), p("ln1.beta"), 1e-5)?;
        let q = h.matmul(p("attn.wq"))?.add_bias(p("attn.bq"))?;
        let k = h.matmul(p("attn.wk"))?.add_bias(p("attn.bk"))?;
        let v = h.matmul(p("attn.wv"))?.add_bias(p("attn.bv"))?;
        let mut sample_outs = Vec::with_capacity(batch);
        for b in 0..batch {
            let qb = q.slice_rows(b * seq, seq)?;
            let kb = k.slice_rows(b * seq, seq)?;
            let vb = v.slice_rows(b * seq, seq)?;
            let mut head_outs = Vec::with_capacity(config.n_heads);
            for hd in 0..config.n_heads {
                let qh = qb.narrow_cols(hd * dh, dh)?;
                let kh = kb.narrow_cols(hd * dh, dh)?;
                let vh = vb.narrow_cols(hd * dh, dh)?;
                let scores = qh.matmul_nt(&kh)?.scale(scale).add(&masks[b])?;
                let probs = scores.softmax_last();
                head_outs.push(probs.matmul(&vh)?);
            }
            sample_outs.push(Tensor::concat_cols(&head_outs)?);
        }
        let attn = Tensor::concat_rows(&sample_outs)?
            .matmul(p("attn.wo"))?
            .add_bias(p("attn.bo"))?;
        x = x.add(&attn)?;

        let h2 = x.layer_norm(p("ln2.gamma"), p("ln2.beta"), 1e-5)?;
        let ff = h2
            .matmul(p("ff.w1"))?
            .add_bias(p("ff.b1"))?
            .gelu()
            .matmul(p("ff.w2"))?
            .add_bias(p("ff.b2"))?
            .dropout(config.dropout, training, rng)?;
        x = x.add(&ff)?;
    }

    let hidden = x.layer_norm(bound.get("final_ln.gamma"), bound.get("final_ln.beta"), 1e-5)?;
    let logits = hidden.matmul(bound.get("out.w"))?.add_bias(bound.get("out.b"))?;
    Ok(ForwardOutput {
        hidden,
        logits,
        batch,
        seq,
    })
}

/// A config paired with its weights; the unit the rest of the crate passes
/// around.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Model> {
        let params = init_params(&config, rng)?;
        Ok(Model { config, params })
    }

    /// Evaluation-mode forward pass (dropout off, frozen weights).
    pub fn forward_eval(&self, seqs: &[Vec<u32>], pad_id: u32) -> Result<ForwardOutput> {
        let bound = self.params.bind(false);
        let mut rng = Rng::new(0); // unused: dropout is off
        forward(&bound, &self.config, seqs, pad_id, None, false, &mut rng)
    }

    /// Softmax probability rows at the given positions of one sequence.
    pub fn probs_at(&self, ids: &[u32], positions: &[usize], pad_id: u32) -> Result<Vec<Vec<f64>>> {
        let out = self.forward_eval(&[ids.to_vec()], pad_id)?;
        let v = self.config.vocab_size;
        let mut rows = Vec::with_capacity(positions.len());
        for &p in positions {
            if p >= out.seq {
                return Err(Error::Index {
                    what: "probs_at position",
                    got: p,
                    len: out.seq,
                });
            }
            let mut row = out.logits.data()[p * v..(p + 1) * v].to_vec();
            softmax_row(&mut row);
            rows.push(row);
        }
        Ok(rows)
    }

    /// Mean of the final hidden states over non-pad positions of a fully
    /// unmasked sequence. Deterministic (dropout off).
    pub fn embed_layout(&self, ids: &[u32], pad_id: u32) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::Empty("embed_layout sequence"));
        }
        let out = self.forward_eval(&[ids.to_vec()], pad_id)?;
        let rows: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] != pad_id).collect();
        Ok(out.hidden.mean_rows(&rows)?.data().to_vec())
    }

    /// Last non-pad position's hidden state (the causal pooling alternative).
    pub fn embed_layout_last(&self, ids: &[u32], pad_id: u32) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::Empty("embed_layout sequence"));
        }
        let out = self.forward_eval(&[ids.to_vec()], pad_id)?;
        let last = (0..ids.len())
            .rev()
            .find(|&i| ids[i] != pad_id)
            .ok_or(Error::Empty("embed_layout non-pad positions"))?;
        Ok(out.hidden.slice_rows(last, 1)?.data().to_vec())
    }
}

/// Right-pad sequences to a common length.
pub fn pad_batch(seqs: &[Vec<u32>], pad_id: u32) -> Vec<Vec<u32>> {
    let max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut p = s.clone();
            p.resize(max, pad_id);
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Vocab;

    fn mini_config(mode: AttentionMode) -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            dropout: 0.1,
            max_seq_len: 24,
            attention_mode: mode,
            vocab_size: 30,
        }
    }

    #[test]
    fn param_count_matches_closed_form() {
        let vocab = Vocab::new(10, 32).unwrap();
        let mut cfg = ModelConfig::preset("small", vocab.size() as usize, AttentionMode::Bidirectional)
            .unwrap();
        cfg.max_seq_len = 64;
        let mut rng = Rng::new(0);
        let params = init_params(&cfg, &mut rng).unwrap();
        assert_eq!(params.total_len(), cfg.param_count());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = mini_config(AttentionMode::Bidirectional);
        let a = init_params(&cfg, &mut Rng::new(5)).unwrap();
        let b = init_params(&cfg, &mut Rng::new(5)).unwrap();
        let c = init_params(&cfg, &mut Rng::new(6)).unwrap();
        for (pa, pb) in a.entries.iter().zip(&b.entries) {
            assert_eq!(pa.data, pb.data);
        }
        assert!(a
            .entries
            .iter()
            .zip(&c.entries)
            .any(|(pa, pc)| pa.data != pc.data));
    }

    #[test]
    fn invalid_head_split_rejected() {
        let mut cfg = mini_config(AttentionMode::Bidirectional);
        cfg.n_heads = 3;
        assert!(init_params(&cfg, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn causal_logits_ignore_future_tokens() {
        let cfg = mini_config(AttentionMode::Causal);
        let model = Model::init(cfg, &mut Rng::new(1)).unwrap();
        let a = vec![1u32, 2, 3, 4, 5, 6];
        let mut b = a.clone();
        b[4] = 9;
        b[5] = 7;
        let out_a = model.forward_eval(&[a], 29).unwrap();
        let out_b = model.forward_eval(&[b], 29).unwrap();
        let v = model.config.vocab_size;
        for p in 0..4 {
            for j in 0..v {
                assert_eq!(
                    out_a.logits.data()[p * v + j],
                    out_b.logits.data()[p * v + j],
                    "position {p} changed"
                );
            }
        }
    }

    #[test]
    fn bidirectional_logits_see_the_whole_sequence() {
        let cfg = mini_config(AttentionMode::Bidirectional);
        let model = Model::init(cfg, &mut Rng::new(1)).unwrap();
        let a = vec![1u32, 2, 3, 4, 5, 6];
        let mut b = a.clone();
        *b.last_mut().unwrap() = 9;
        let out_a = model.forward_eval(&[a], 29).unwrap();
        let out_b = model.forward_eval(&[b], 29).unwrap();
        let v = model.config.vocab_size;
        let diff: f64 = (0..v)
            .map(|j| (out_a.logits.data()[j] - out_b.logits.data()[j]).abs())
            .sum();
        assert!(diff > 1e-9, "position 0 unaffected by last token");
    }

    #[test]
    fn changing_a_pad_slot_id_leaves_non_pad_logits_unchanged() {
        let cfg = mini_config(AttentionMode::Bidirectional);
        let model = Model::init(cfg, &mut Rng::new(2)).unwrap();
        let pad = 29u32;
        let bound = model.params.bind(false);
        let mut rng = Rng::new(0);
        let mask = vec![vec![true, true, true, false, false]];
        let a = vec![vec![1u32, 2, 3, pad, pad]];
        let b = vec![vec![1u32, 2, 3, 7, 11]]; // different ids in pad slots
        let out_a = forward(&bound, &model.config, &a, pad, Some(&mask), false, &mut rng).unwrap();
        let out_b = forward(&bound, &model.config, &b, pad, Some(&mask), false, &mut rng).unwrap();
        let v = model.config.vocab_size;
        for p in 0..3 {
            for j in 0..v {
                assert_eq!(
                    out_a.logits.data()[p * v + j],
                    out_b.logits.data()[p * v + j]
                );
            }
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = mini_config(AttentionMode::Bidirectional);
        let model = Model::init(cfg, &mut Rng::new(3)).unwrap();
        let ids = vec![1u32, 2, 3, 4];
        let a = model.forward_eval(&[ids.clone()], 29).unwrap();
        let b = model.forward_eval(&[ids], 29).unwrap();
        assert_eq!(a.logits.data(), b.logits.data());
    }

    #[test]
    fn embedding_basics() {
        let cfg = mini_config(AttentionMode::Bidirectional);
        let model = Model::init(cfg, &mut Rng::new(4)).unwrap();
        let ids = vec![1u32, 2, 3, 4];
        let e1 = model.embed_layout(&ids, 29).unwrap();
        let e2 = model.embed_layout(&ids, 29).unwrap();
        assert_eq!(e1, e2);
        assert!(e1.iter().all(|v| v.is_finite()));
        let swapped = vec![1u32, 3, 2, 4];
        let e3 = model.embed_layout(&swapped, 29).unwrap();
        assert!(e3.iter().all(|v| v.is_finite()));
        // cosine(e, e) == 1
        let dot: f64 = e1.iter().map(|v| v * v).sum();
        let norm = dot.sqrt();
        let cos: f64 = e1.iter().map(|v| v * v).sum::<f64>() / (norm * norm);
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_long_sequence_rejected() {
        let cfg = mini_config(AttentionMode::Bidirectional);
        let model = Model::init(cfg, &mut Rng::new(0)).unwrap();
        let ids = vec![1u32; 25];
        assert!(matches!(
            model.forward_eval(&[ids], 29),
            Err(Error::Size { .. })
        ));
    }

    #[test]
    fn unknown_id_rejected() {
        let cfg = mini_config(AttentionMode::Bidirectional);
        let model = Model::init(cfg, &mut Rng::new(0)).unwrap();
        assert!(matches!(
            model.forward_eval(&[vec![30u32]], 29),
            Err(Error::Vocab { .. })
        ));
    }
}
