//! Training orchestration: AdamW with cosine annealing, periodic validation
//! NLL, append-only metrics JSONL, and best/last checkpoints.

use std::path::Path;

use layoutseq_core::evaluation::eval_nll;
use layoutseq_core::model::Model;
use layoutseq_core::tensor::optim::{cosine_lr, AdamWConfig, AdamWState};
use layoutseq_core::training::{make_batch, make_gpt_batch, train_step_bert, train_step_gpt, TrainPlan};
use layoutseq_core::{AttentionMode, Layout, ModelConfig, Rng, Vocab};
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::corpus::write_atomic;
use crate::error::{AppError, Result};

/// Fraction of training after which the learning rate starts annealing to 0.
pub const WARM_FRACTION: f64 = 0.75;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_nll: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<StepLog>,
    pub best_val_nll: f64,
    pub best_step: u64,
}

/// Deterministic 90/10 split by sample index (every 10th layout validates).
pub fn split_corpus(layouts: &[Layout]) -> (Vec<Layout>, Vec<Layout>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, l) in layouts.iter().enumerate() {
        if i % 10 == 9 {
            val.push(l.clone());
        } else {
            train.push(l.clone());
        }
    }
    if val.is_empty() {
        val = train.clone();
    }
    (train, val)
}

/// Run the full training loop. When `out_dir` is given, writes
/// `metrics.jsonl`, `best.ckpt` and `last.ckpt` (each with its sidecar).
pub fn train(
    layouts: &[Layout],
    vocab: &Vocab,
    config: ModelConfig,
    plan: &TrainPlan,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    plan.validate()?;
    config.validate()?;
    if layouts.is_empty() {
        return Err(AppError::data("training corpus is empty".to_string()));
    }
    let (train_set, val_set) = split_corpus(layouts);

    let root = Rng::new(plan.seed);
    let mut init_rng = root.split("init");
    let mut batch_rng = root.split("batch");
    let mut step_rng = root.split("step");

    let mut model = Model::init(config, &mut init_rng)?;
    let mut opt = AdamWState::new(&model.params.lens());
    let mut opt_cfg = AdamWConfig::default();

    let mut metrics: Vec<StepLog> = Vec::with_capacity(plan.total_steps as usize);
    let mut best_val_nll = f64::INFINITY;
    let mut best_step = 0;

    for step in 0..plan.total_steps {
        let lr = cosine_lr(step, plan.total_steps, plan.base_lr, WARM_FRACTION)?;
        opt_cfg.lr = lr;
        let batch_indices: Vec<usize> = (0..plan.batch_size)
            .map(|_| batch_rng.below(train_set.len()))
            .collect();
        let batch_layouts: Vec<Layout> = batch_indices
            .iter()
            .map(|&i| train_set[i].clone())
            .collect();

        let result = match model.config.attention_mode {
            AttentionMode::Bidirectional => {
                let (batch, _skipped) =
                    make_batch(&batch_layouts, vocab, &mut batch_rng, plan.flip_probability)?;
                train_step_bert(&mut model, &batch, vocab, &mut opt, &opt_cfg, &mut step_rng)
            }
            AttentionMode::Causal => {
                let (seqs, _skipped) =
                    make_gpt_batch(&batch_layouts, vocab, &mut batch_rng, plan.flip_probability)?;
                train_step_gpt(&mut model, &seqs, vocab, &mut opt, &opt_cfg, &mut step_rng)
            }
        };
        let train_loss = result.map_err(|e| {
            AppError::data(format!(
                "training aborted at step {step} (lr {lr:.3e}, batch {batch_indices:?}): {e}"
            ))
        })?;

        let is_eval = (step + 1) % plan.eval_every == 0 || step + 1 == plan.total_steps;
        let val_nll = if is_eval {
            let nll = eval_nll(&model, &val_set, vocab)?;
            if nll < best_val_nll {
                best_val_nll = nll;
                best_step = step;
                if let Some(dir) = out_dir {
                    save_checkpoint(&dir.join("best.ckpt"), &model, vocab, step + 1, Some(&opt))?;
                }
            }
            Some(nll)
        } else {
            None
        };
        metrics.push(StepLog {
            step,
            lr,
            train_loss,
            val_nll,
        });
    }

    if let Some(dir) = out_dir {
        save_checkpoint(
            &dir.join("last.ckpt"),
            &model,
            vocab,
            plan.total_steps,
            Some(&opt),
        )?;
        let mut log = String::new();
        for m in &metrics {
            log.push_str(&serde_json::to_string(m)?);
            log.push('\n');
        }
        write_atomic(&dir.join("metrics.jsonl"), log.as_bytes())?;
    }

    Ok(TrainOutcome {
        model,
        metrics,
        best_val_nll,
        best_step,
    })
}
