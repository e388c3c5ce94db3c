//! Training objectives: the iterative masked-span scheme for bidirectional
//! models and next-token prediction for the causal baseline.
//!
//! One training example masks the full 5-token span of a single box and
//! expands into 5 samples, unmasking from the left; sample k predicts the
//! k-th token of the span given everything outside the span plus the span's
//! first k−1 tokens. All 5 expansions of a layout travel in the same batch.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layout::{flip_lr, layout_to_seq, Layout, TokenSeq, Vocab};
use crate::model::{forward, pad_batch, BoundParams, Model, ModelConfig};
use crate::rng::Rng;
use crate::tensor::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::tensor::Tensor;

/// One masked prediction problem: a sequence whose suffix-span of one box is
/// masked, and the left-most masked token to recover.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedSample {
    pub ids: Vec<u32>,
    pub target_pos: usize,
    pub target_id: u32,
}

/// Optimization schedule knobs shared by both objectives.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainPlan {
    pub total_steps: u64,
    /// Layouts per batch (masked batches hold 5x this many samples).
    pub batch_size: usize,
    pub base_lr: f64,
    pub flip_probability: f64,
    pub seed: u64,
    /// Validation cadence in steps.
    pub eval_every: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            total_steps: 1000,
            batch_size: 16,
            base_lr: 1e-3,
            flip_probability: 0.5,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Param {
                what: "train plan",
                detail: "total_steps, batch_size and eval_every must be positive".into(),
            });
        }
        if !(self.base_lr > 0.0) || !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Param {
                what: "train plan",
                detail: "base_lr must be positive and flip_probability in [0, 1]".into(),
            });
        }
        Ok(())
    }
}

/// The 5 iterative-unmasking expansions of one (sequence, box) pair.
/// Sample k (0-based) masks tokens k..5 of the box's span and targets token k.
pub fn expand_masked(seq: &TokenSeq, box_index: usize, vocab: &Vocab) -> Result<Vec<MaskedSample>> {
    if box_index >= seq.n_boxes() {
        return Err(Error::Index {
            what: "expand_masked box_index",
            got: box_index,
            len: seq.n_boxes(),
        });
    }
    if seq.ids.contains(&vocab.mask()) {
        return Err(Error::Param {
            what: "expand_masked input",
            detail: "sequence already contains MASK".into(),
        });
    }
    let span = TokenSeq::box_start(box_index);
    let mut out = Vec::with_capacity(5);
    for k in 0..5 {
        let target_pos = span + k;
        let mut ids = seq.ids.clone();
        for t in ids.iter_mut().take(span + 5).skip(target_pos) {
            *t = vocab.mask();
        }
        out.push(MaskedSample {
            ids,
            target_pos,
            target_id: seq.ids[target_pos],
        });
    }
    Ok(out)
}

/// Build one masked training batch: per layout, flip with the given
/// probability, tokenize, pick one box uniformly, and emit its 5 expansions,
/// padded to a common length. Overlong or empty layouts are skipped; the
/// second return value counts them.
pub fn make_batch(
    layouts: &[Layout],
    vocab: &Vocab,
    rng: &mut Rng,
    flip_probability: f64,
) -> Result<(Vec<MaskedSample>, usize)> {
    if layouts.is_empty() {
        return Err(Error::Empty("make_batch layouts"));
    }
    let mut samples = Vec::with_capacity(layouts.len() * 5);
    let mut skipped = 0;
    for layout in layouts {
        let flipped;
        let layout = if rng.next_f64() < flip_probability {
            flipped = flip_lr(layout);
            &flipped
        } else {
            layout
        };
        let seq = match layout_to_seq(layout, vocab) {
            Ok(s) => s,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let box_index = rng.below(seq.n_boxes());
        samples.extend(expand_masked(&seq, box_index, vocab)?);
    }
    if samples.is_empty() {
        return Err(Error::Empty("make_batch usable layouts"));
    }
    let max = samples.iter().map(|s| s.ids.len()).max().unwrap_or(0);
    for s in &mut samples {
        s.ids.resize(max, vocab.pad());
    }
    Ok((samples, skipped))
}

/// Cross-entropy at each sample's target position only, averaged over the
/// batch.
pub fn bert_loss(
    bound: &BoundParams,
    config: &ModelConfig,
    batch: &[MaskedSample],
    vocab: &Vocab,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::Empty("bert_loss batch"));
    }
    let seqs: Vec<Vec<u32>> = batch.iter().map(|s| s.ids.clone()).collect();
    let out = forward(bound, config, &seqs, vocab.pad(), None, training, rng)?;
    let ignore = vocab.pad();
    let mut targets = vec![ignore; out.batch * out.seq];
    for (b, s) in batch.iter().enumerate() {
        targets[b * out.seq + s.target_pos] = s.target_id;
    }
    out.logits.cross_entropy(&targets, ignore)
}

/// Next-token cross-entropy over all non-pad transitions, EOS included.
pub fn gpt_loss(
    bound: &BoundParams,
    config: &ModelConfig,
    seqs: &[Vec<u32>],
    vocab: &Vocab,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    if seqs.is_empty() {
        return Err(Error::Empty("gpt_loss batch"));
    }
    let out = forward(bound, config, seqs, vocab.pad(), None, training, rng)?;
    let ignore = vocab.pad();
    let mut targets = vec![ignore; out.batch * out.seq];
    for (b, s) in seqs.iter().enumerate() {
        for t in 0..out.seq - 1 {
            if s[t] != ignore && s[t + 1] != ignore {
                targets[b * out.seq + t] = s[t + 1];
            }
        }
    }
    out.logits.cross_entropy(&targets, ignore)
}

/// One optimizer step on a masked batch. Returns the batch loss.
pub fn train_step_bert(
    model: &mut Model,
    batch: &[MaskedSample],
    vocab: &Vocab,
    opt: &mut AdamWState,
    cfg: &AdamWConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let bound = model.params.bind(true);
    let loss = bert_loss(&bound, &model.config, batch, vocab, true, rng)?;
    apply_step(model, &bound, &loss, opt, cfg)
}

/// One optimizer step on a batch of padded full sequences (causal model).
pub fn train_step_gpt(
    model: &mut Model,
    seqs: &[Vec<u32>],
    vocab: &Vocab,
    opt: &mut AdamWState,
    cfg: &AdamWConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let bound = model.params.bind(true);
    let loss = gpt_loss(&bound, &model.config, seqs, vocab, true, rng)?;
    apply_step(model, &bound, &loss, opt, cfg)
}

fn apply_step(
    model: &mut Model,
    bound: &BoundParams,
    loss: &Tensor,
    opt: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<f64> {
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::Numeric {
            detail: alloc::format!("non-finite loss {value}"),
        });
    }
    loss.backward();
    let grads = bound.grads();
    let mut datas: Vec<Vec<f64>> = model
        .params
        .entries
        .iter_mut()
        .map(|p| core::mem::take(&mut p.data))
        .collect();
    let res = adamw_step(&mut datas, &grads, opt, cfg);
    for (p, d) in model.params.entries.iter_mut().zip(datas) {
        p.data = d;
    }
    res?;
    Ok(value)
}

/// Tokenize layouts into a padded batch of full sequences for the causal
/// objective, applying the same flip augmentation. Skipped layouts counted.
pub fn make_gpt_batch(
    layouts: &[Layout],
    vocab: &Vocab,
    rng: &mut Rng,
    flip_probability: f64,
) -> Result<(Vec<Vec<u32>>, usize)> {
    if layouts.is_empty() {
        return Err(Error::Empty("make_gpt_batch layouts"));
    }
    let mut seqs = Vec::with_capacity(layouts.len());
    let mut skipped = 0;
    for layout in layouts {
        let flipped;
        let layout = if rng.next_f64() < flip_probability {
            flipped = flip_lr(layout);
            &flipped
        } else {
            layout
        };
        match layout_to_seq(layout, vocab) {
            Ok(s) => seqs.push(s.ids),
            Err(_) => skipped += 1,
        }
    }
    if seqs.is_empty() {
        return Err(Error::Empty("make_gpt_batch usable layouts"));
    }
    Ok((pad_batch(&seqs, vocab.pad()), skipped))
}
