//! Subcommand implementations. Every command resolves its configuration up
//! front, echoes it into the artifacts it writes (`run_config`), writes
//! outputs atomically, and never mutates its inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use layoutseq_core::grammar::{sample_layout, Grammar, GrammarOracle};
use layoutseq_core::inference::{insert_object, recommend_classes, SamplerConfig, Strategy};
use layoutseq_core::retrieval::{build_index, map_at_k, Pooling};
use layoutseq_core::training::TrainPlan;
use layoutseq_core::{AttentionMode, BBox, Layout, ModelConfig, Rng, Vocab};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{load_checkpoint, LoadedCheckpoint};
use crate::coco::ingest_coco;
use crate::corpus::{read_corpus, write_atomic, write_corpus, Entry};
use crate::error::{AppError, Result};
use crate::render::render_svg;
use crate::trainer;

#[derive(Parser, Debug)]
#[command(name = "layoutseq", version, about = "Layout sequence modeling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a synthetic corpus from a layout grammar (with optional exact
    /// probability oracle), or ingest a COCO annotation file.
    GenData(GenDataArgs),
    /// Train a model on a corpus; writes metrics JSONL and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus (NLL, top-1 class accuracy, mIoU).
    Eval(EvalArgs),
    /// Rank candidate classes to insert into a layout.
    Recommend(RecommendArgs),
    /// Insert one or more objects into a layout.
    Insert(InsertArgs),
    /// Embed a corpus and run top-k retrieval for query layouts.
    Retrieve(RetrieveArgs),
    /// Render a layout (and optional candidates) to SVG.
    Render(RenderArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionArg {
    Bidirectional,
    Causal,
}

impl From<AttentionArg> for AttentionMode {
    fn from(a: AttentionArg) -> Self {
        match a {
            AttentionArg::Bidirectional => AttentionMode::Bidirectional,
            AttentionArg::Causal => AttentionMode::Causal,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    Greedy,
    TopK,
    TopP,
    Beam,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::TopK => Strategy::TopK,
            StrategyArg::TopP => Strategy::TopP,
            StrategyArg::Beam => Strategy::Beam,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingArg {
    Mean,
    Last,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::Last => Pooling::Last,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Grammar spec JSON; defaults to the built-in benchmark grammar.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    /// COCO annotation JSON to ingest instead of sampling a grammar.
    #[arg(long, conflicts_with_all = ["grammar", "count", "oracle"])]
    pub coco: Option<PathBuf>,
    /// Number of layouts to sample.
    #[arg(long, default_value_t = 1000)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also enumerate the grammar's support and write oracle.json.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus JSONL.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for checkpoints and metrics.
    #[arg(long)]
    pub out: PathBuf,
    /// Training config JSON overriding the defaults (TrainPlan fields).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model size preset.
    #[arg(long, default_value = "tiny")]
    pub model: String,
    #[arg(long, value_enum, default_value_t = AttentionArg::Bidirectional)]
    pub attention: AttentionArg,
    /// Grid resolution N (N x N anchors).
    #[arg(long, default_value_t = 16)]
    pub grid_n: u32,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub flip_probability: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory (eval.json + per_class.csv).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct RecommendArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus JSONL holding the query layout.
    #[arg(long)]
    pub layout: PathBuf,
    /// Index of the layout within the file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 5)]
    pub top_m: usize,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InsertArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus JSONL holding the query layout.
    #[arg(long)]
    pub layout: PathBuf,
    /// Index of the layout within the file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Class to insert; recommended automatically when omitted.
    #[arg(long)]
    pub class: Option<u32>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
    /// Sampled candidates per insertion position.
    #[arg(long, default_value_t = 4)]
    pub candidates: usize,
    /// Number of objects to insert sequentially.
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (candidates.json + updated.jsonl).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated layout ids to use as queries; defaults to all.
    #[arg(long)]
    pub query_ids: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long, value_enum, default_value_t = PoolingArg::Mean)]
    pub pooling: PoolingArg,
    /// Relevance sets JSON {query_id: [ids]}; enables mAP. Without it,
    /// corpus `label` fields (same label = relevant) are used when present.
    #[arg(long)]
    pub relevance: Option<PathBuf>,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Corpus JSONL holding the layout to draw.
    #[arg(long)]
    pub layout: PathBuf,
    /// Index of the layout within the file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Candidates JSON (as written by `insert`) to overlay.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Output SVG file.
    #[arg(long)]
    pub out: PathBuf,
}

/// A generated or NMS-surviving box in output JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateOut {
    pub class: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub insertion_position: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Ok(threads) = std::env::var("LAYOUTSEQ_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| AppError::usage(format!("LAYOUTSEQ_THREADS='{threads}' is not a number")))?;
        layoutseq_core::tensor::set_max_threads(n);
    }
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Recommend(a) => cmd_recommend(a),
        Command::Insert(a) => cmd_insert(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Render(a) => cmd_render(a),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn load_grammar(path: Option<&Path>) -> Result<Grammar> {
    let grammar = match path {
        None => layoutseq_core::grammar::benchmark_grammar(),
        Some(p) => serde_json::from_str(
            &std::fs::read_to_string(p)
                .map_err(|e| AppError::data(format!("{}: {e}", p.display())))?,
        )?,
    };
    grammar.validate()?;
    Ok(grammar)
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    if let Some(coco_path) = &a.coco {
        let (entries, stats) = ingest_coco(coco_path)?;
        if entries.is_empty() {
            return Err(AppError::data("COCO file yielded no layouts".to_string()));
        }
        write_corpus(&a.out.join("corpus.jsonl"), &entries)?;
        let run_config = json!({
            "command": "gen-data",
            "coco": coco_path.display().to_string(),
            "out": a.out.display().to_string(),
        });
        write_json(
            &a.out.join("ingest.json"),
            &json!({ "run_config": run_config, "layouts": entries.len(), "stats": stats }),
        )?;
        return Ok(());
    }

    let grammar = load_grammar(a.grammar.as_deref())?;
    if a.count == 0 {
        return Err(AppError::usage("--count must be positive".to_string()));
    }
    let root = Rng::new(a.seed);
    let mut entries = Vec::with_capacity(a.count as usize);
    for i in 0..a.count {
        let mut rng = root.split(&format!("sample-{i}"));
        let (mut layout, label) = sample_layout(&grammar, &mut rng)?;
        layout.source_id = Some(format!("g{i}"));
        entries.push(Entry {
            layout,
            label: Some(label),
        });
    }
    write_corpus(&a.out.join("corpus.jsonl"), &entries)?;

    let mut grammar_echo = serde_json::to_value(&grammar)?;
    let run_config = json!({
        "command": "gen-data",
        "grammar": a.grammar.as_ref().map(|p| p.display().to_string()),
        "count": a.count,
        "seed": a.seed,
        "out": a.out.display().to_string(),
    });
    if let serde_json::Value::Object(m) = &mut grammar_echo {
        m.insert("run_config".into(), run_config.clone());
    }
    write_json(&a.out.join("grammar.json"), &grammar_echo)?;

    if a.oracle {
        let oracle = GrammarOracle::build(&grammar)?;
        let entropies = oracle.entropy()?;
        let table: Vec<serde_json::Value> = oracle
            .seqs
            .iter()
            .map(|(ids, p)| json!({ "ids": ids, "p": p }))
            .collect();
        write_json(
            &a.out.join("oracle.json"),
            &json!({
                "run_config": run_config,
                "support": table.len(),
                "causal_entropy_per_token": entropies.causal_per_token,
                "masked_entropy_per_token": entropies.masked_per_token,
                "table": table,
            }),
        )?;
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
struct TrainFileConfig {
    total_steps: Option<u64>,
    batch_size: Option<usize>,
    base_lr: Option<f64>,
    flip_probability: Option<f64>,
    eval_every: Option<u64>,
    model: Option<String>,
    attention: Option<String>,
    grid_n: Option<u32>,
    seed: Option<u64>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file: TrainFileConfig = match &a.config {
        None => TrainFileConfig::default(),
        Some(p) => serde_json::from_str(
            &std::fs::read_to_string(p)
                .map_err(|e| AppError::data(format!("{}: {e}", p.display())))?,
        )?,
    };
    // flags override file values, file overrides defaults
    let defaults = TrainPlan::default();
    let plan = TrainPlan {
        total_steps: a.steps.or(file.total_steps).unwrap_or(defaults.total_steps),
        batch_size: a
            .batch_size
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        base_lr: a.lr.or(file.base_lr).unwrap_or(defaults.base_lr),
        flip_probability: a
            .flip_probability
            .or(file.flip_probability)
            .unwrap_or(defaults.flip_probability),
        seed: if a.seed != 0 { a.seed } else { file.seed.unwrap_or(a.seed) },
        eval_every: a.eval_every.or(file.eval_every).unwrap_or(defaults.eval_every),
    };
    let preset = file.model.as_deref().unwrap_or(&a.model);
    let attention: AttentionMode = match file.attention.as_deref() {
        Some("bidirectional") => AttentionMode::Bidirectional,
        Some("causal") => AttentionMode::Causal,
        Some(other) => {
            return Err(AppError::usage(format!(
                "unknown attention mode '{other}' in config file"
            )))
        }
        None => a.attention.into(),
    };
    let grid = file.grid_n.unwrap_or(a.grid_n);

    let corpus = read_corpus(&a.corpus)?;
    let layouts = corpus.layouts();
    let max_class = layouts
        .iter()
        .flat_map(|l| l.boxes.iter().map(|b| b.class_id))
        .max()
        .unwrap_or(0);
    let vocab = Vocab::new(max_class + 1, grid)?;
    let config = ModelConfig::preset(preset, vocab.size() as usize, attention)?;

    let run_config = json!({
        "command": "train",
        "corpus": a.corpus.display().to_string(),
        "out": a.out.display().to_string(),
        "model": preset,
        "attention": config.attention_mode,
        "grid_n": grid,
        "classes": vocab.classes,
        "plan": plan,
        "warm_fraction": trainer::WARM_FRACTION,
    });
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("run_config.json"), &run_config)?;

    let outcome = trainer::train(&layouts, &vocab, config, &plan, Some(&a.out))?;
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "run_config": run_config,
            "best_val_nll": outcome.best_val_nll,
            "best_step": outcome.best_step,
            "final_train_loss": outcome.metrics.last().map(|m| m.train_loss),
        }),
    )?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let LoadedCheckpoint { model, vocab, .. } = load_checkpoint(&a.checkpoint)?;
    let corpus = read_corpus(&a.corpus)?;
    let report = layoutseq_core::evaluation::evaluate(&model, &corpus.layouts(), &vocab, a.seed)?;

    let run_config = json!({
        "command": "eval",
        "checkpoint": a.checkpoint.display().to_string(),
        "corpus": a.corpus.display().to_string(),
        "seed": a.seed,
    });
    write_json(
        &a.out.join("eval.json"),
        &json!({ "run_config": run_config, "report": report }),
    )?;

    let mut csv = String::from("class,nll,nll_boxes,miou,miou_boxes\n");
    let classes: BTreeSet<u32> = report
        .per_class_nll
        .keys()
        .chain(report.per_class_miou.keys())
        .copied()
        .collect();
    for c in classes {
        let (nll, nc) = report.per_class_nll.get(&c).copied().unwrap_or((f64::NAN, 0));
        let (miou, mc) = report
            .per_class_miou
            .get(&c)
            .copied()
            .unwrap_or((f64::NAN, 0));
        csv.push_str(&format!("{c},{nll},{nc},{miou},{mc}\n"));
    }
    write_atomic(&a.out.join("per_class.csv"), csv.as_bytes())?;
    Ok(())
}

fn load_one_layout(path: &Path, index: usize) -> Result<Layout> {
    let corpus = read_corpus(path)?;
    corpus
        .entries
        .get(index)
        .map(|e| e.layout.clone())
        .ok_or_else(|| {
            AppError::usage(format!(
                "layout index {index} out of range ({} layouts in {})",
                corpus.entries.len(),
                path.display()
            ))
        })
}

fn cmd_recommend(a: RecommendArgs) -> Result<()> {
    let LoadedCheckpoint { model, vocab, .. } = load_checkpoint(&a.checkpoint)?;
    let layout = load_one_layout(&a.layout, a.index)?;
    let ranked = recommend_classes(&model, &layout, &vocab, a.top_m)?;
    let run_config = json!({
        "command": "recommend",
        "checkpoint": a.checkpoint.display().to_string(),
        "layout": a.layout.display().to_string(),
        "index": a.index,
        "top_m": a.top_m,
    });
    let rows: Vec<serde_json::Value> = ranked
        .iter()
        .map(|&(class, prob, position)| json!({ "class": class, "prob": prob, "position": position }))
        .collect();
    write_json(&a.out, &json!({ "run_config": run_config, "classes": rows }))
}

fn sampler_from_args(a: &InsertArgs, mode: AttentionMode) -> Result<SamplerConfig> {
    let mut sampler = match mode {
        AttentionMode::Bidirectional => SamplerConfig::bert_default(a.seed),
        AttentionMode::Causal => SamplerConfig::gpt_default(a.seed),
    };
    if let Some(s) = a.strategy {
        sampler.strategy = s.into();
    }
    if let Some(k) = a.top_k {
        sampler.k = k;
    }
    if let Some(p) = a.top_p {
        sampler.p = p;
    }
    if let Some(t) = a.temperature {
        sampler.temperature = t;
    }
    if let Some(b) = a.beam_width {
        sampler.beam_width = b;
    }
    sampler.validate()?;
    Ok(sampler)
}

fn cmd_insert(a: InsertArgs) -> Result<()> {
    let LoadedCheckpoint { model, vocab, .. } = load_checkpoint(&a.checkpoint)?;
    let mut layout = load_one_layout(&a.layout, a.index)?;
    let sampler = sampler_from_args(&a, model.config.attention_mode)?;
    if a.iterations == 0 {
        return Err(AppError::usage("--iterations must be positive".to_string()));
    }

    let mut all_candidates: Vec<Vec<CandidateOut>> = Vec::with_capacity(a.iterations);
    for iteration in 0..a.iterations {
        let mut sampler = sampler.clone();
        sampler.seed = Rng::new(sampler.seed)
            .split(&format!("iteration-{iteration}"))
            .next_u64();
        let (candidates, updated) = insert_object(
            &model,
            &layout,
            a.class,
            &vocab,
            &sampler,
            a.nms_iou,
            a.candidates,
        )?;
        all_candidates.push(
            candidates
                .iter()
                .map(|c| CandidateOut {
                    class: c.bbox.class_id,
                    x: c.bbox.x,
                    y: c.bbox.y,
                    w: c.bbox.w,
                    h: c.bbox.h,
                    score: c.score,
                    insertion_position: c.insertion_position,
                })
                .collect(),
        );
        layout = updated;
    }

    let run_config = json!({
        "command": "insert",
        "checkpoint": a.checkpoint.display().to_string(),
        "layout": a.layout.display().to_string(),
        "index": a.index,
        "class": a.class,
        "sampler": sampler,
        "nms_iou": a.nms_iou,
        "candidates_per_position": a.candidates,
        "iterations": a.iterations,
        "seed": a.seed,
    });
    write_json(
        &a.out.join("candidates.json"),
        &json!({ "run_config": run_config, "iterations": all_candidates }),
    )?;
    write_corpus(
        &a.out.join("updated.jsonl"),
        &[Entry {
            layout,
            label: None,
        }],
    )
}

fn cmd_retrieve(a: RetrieveArgs) -> Result<()> {
    let LoadedCheckpoint { model, vocab, .. } = load_checkpoint(&a.checkpoint)?;
    let corpus = read_corpus(&a.corpus)?;
    let layouts = corpus.layouts();
    let (index, skipped) = build_index(&model, &layouts, &vocab, a.pooling.into())?;

    let queries: Vec<String> = match &a.query_ids {
        Some(s) => s.split(',').map(|q| q.trim().to_string()).collect(),
        None => index.ids.clone(),
    };
    for q in &queries {
        if !index.ids.contains(q) {
            return Err(AppError::usage(format!("query id '{q}' not in corpus index")));
        }
    }

    let mut rankings = serde_json::Map::new();
    for q in &queries {
        let row = index
            .ids
            .iter()
            .position(|id| id == q)
            .expect("checked above");
        let hits = index.query(index.vector(row), a.top_k + 1)?;
        let rows: Vec<serde_json::Value> = hits
            .into_iter()
            .filter(|(id, _)| id != q)
            .take(a.top_k)
            .map(|(id, score)| json!({ "id": id, "score": score }))
            .collect();
        rankings.insert(q.clone(), serde_json::Value::Array(rows));
    }

    // relevance: explicit file, else same-label corpus entries
    let relevance: Option<BTreeMap<String, BTreeSet<String>>> = match &a.relevance {
        Some(p) => Some(serde_json::from_str(
            &std::fs::read_to_string(p)
                .map_err(|e| AppError::data(format!("{}: {e}", p.display())))?,
        )?),
        None => {
            let labeled: Vec<(&String, u32)> = corpus
                .entries
                .iter()
                .filter_map(|e| {
                    e.layout
                        .source_id
                        .as_ref()
                        .zip(e.label)
                })
                .collect();
            if labeled.len() == corpus.entries.len() && !labeled.is_empty() {
                let mut map = BTreeMap::new();
                for (id, label) in &labeled {
                    let rel: BTreeSet<String> = labeled
                        .iter()
                        .filter(|(other, l)| l == label && other != id)
                        .map(|(other, _)| (*other).clone())
                        .collect();
                    map.insert((*id).clone(), rel);
                }
                Some(map)
            } else {
                None
            }
        }
    };
    let map_score = match &relevance {
        Some(rel) => {
            let (score, excluded) = map_at_k(&index, &queries, rel, a.top_k)?;
            Some(json!({ "map_at_k": score, "queries_excluded": excluded }))
        }
        None => None,
    };

    let run_config = json!({
        "command": "retrieve",
        "checkpoint": a.checkpoint.display().to_string(),
        "corpus": a.corpus.display().to_string(),
        "top_k": a.top_k,
        "pooling": a.pooling,
        "queries": queries,
        "relevance": a.relevance.as_ref().map(|p| p.display().to_string()),
    });
    write_json(
        &a.out,
        &json!({
            "run_config": run_config,
            "skipped_layouts": skipped,
            "rankings": rankings,
            "map": map_score,
        }),
    )
}

#[derive(Debug, Deserialize)]
struct CandidatesFile {
    iterations: Vec<Vec<CandidateOut>>,
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let layout = load_one_layout(&a.layout, a.index)?;
    let mut candidates: Vec<(BBox, f64)> = Vec::new();
    if let Some(p) = &a.candidates {
        let file: CandidatesFile = serde_json::from_str(
            &std::fs::read_to_string(p)
                .map_err(|e| AppError::data(format!("{}: {e}", p.display())))?,
        )?;
        for c in file.iterations.into_iter().flatten() {
            candidates.push((
                BBox::new(c.class, c.x, c.y, c.w, c.h)
                    .map_err(|e| AppError::data(format!("candidate box: {e}")))?,
                c.score,
            ));
        }
    }
    let svg = render_svg(&layout, &candidates, None);
    write_atomic(&a.out, svg.as_bytes())
}
