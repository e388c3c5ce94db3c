//! Versioned checkpoint container: a binary file with a JSON header mapping
//! parameter names to shapes/offsets and a little-endian f32 payload
//! (parameters, then optional AdamW moment buffers), plus a JSON sidecar
//! (`<file>.json`) carrying the ModelConfig and Vocab for compatibility
//! checks on load.

use std::fs;
use std::path::{Path, PathBuf};

use layoutseq_core::model::{Model, ModelParams, Param};
use layoutseq_core::tensor::optim::AdamWState;
use layoutseq_core::{ModelConfig, Rng, Vocab};
use serde::{Deserialize, Serialize};

use crate::corpus::write_atomic;
use crate::error::{AppError, Result};

const MAGIC: &[u8; 4] = b"LSQC";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    step: u64,
    opt_step: Option<u64>,
    params: Vec<ParamMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: ModelConfig,
    pub vocab: Vocab,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn push_f32(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_f32(bytes: &[u8], cursor: &mut usize, n: usize) -> Result<Vec<f64>> {
    let end = *cursor + 4 * n;
    if end > bytes.len() {
        return Err(AppError::data("checkpoint payload truncated".to_string()));
    }
    let out = bytes[*cursor..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    *cursor = end;
    Ok(out)
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    vocab: &Vocab,
    step: u64,
    opt: Option<&AdamWState>,
) -> Result<()> {
    let header = Header {
        step,
        opt_step: opt.map(|o| o.step),
        params: model
            .params
            .entries
            .iter()
            .map(|p| ParamMeta {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for p in &model.params.entries {
        push_f32(&mut bytes, &p.data);
    }
    if let Some(o) = opt {
        for m in &o.m {
            push_f32(&mut bytes, m);
        }
        for v in &o.v {
            push_f32(&mut bytes, v);
        }
    }
    write_atomic(path, &bytes)?;
    let sidecar = Sidecar {
        config: model.config.clone(),
        vocab: *vocab,
    };
    let mut sj = serde_json::to_vec_pretty(&sidecar)?;
    sj.push(b'\n');
    write_atomic(&sidecar_path(path), &sj)
}

pub struct LoadedCheckpoint {
    pub model: Model,
    pub vocab: Vocab,
    pub step: u64,
    pub opt: Option<AdamWState>,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let sidecar: Sidecar = serde_json::from_str(
        &fs::read_to_string(sidecar_path(path))
            .map_err(|e| AppError::data(format!("{}: {e}", sidecar_path(path).display())))?,
    )?;
    sidecar.config.validate()?;
    if sidecar.vocab.size() as usize != sidecar.config.vocab_size {
        return Err(AppError::data(format!(
            "checkpoint vocab size {} does not match model vocab_size {}",
            sidecar.vocab.size(),
            sidecar.config.vocab_size
        )));
    }

    let bytes = fs::read(path).map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(AppError::data(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(AppError::data(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if 16 + hlen > bytes.len() {
        return Err(AppError::data("checkpoint header truncated".to_string()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + hlen])?;

    // shapes must match what this config would initialize
    let reference = layoutseq_core::model::init_params(&sidecar.config, &mut Rng::new(0))?;
    if reference.entries.len() != header.params.len() {
        return Err(AppError::data("checkpoint parameter list mismatch".to_string()));
    }
    for (want, got) in reference.entries.iter().zip(&header.params) {
        if want.name != got.name || want.shape != got.shape {
            return Err(AppError::data(format!(
                "checkpoint parameter '{}' {:?} does not match config's '{}' {:?}",
                got.name, got.shape, want.name, want.shape
            )));
        }
    }

    let mut cursor = 16 + hlen;
    let mut entries = Vec::with_capacity(header.params.len());
    for meta in &header.params {
        let n: usize = meta.shape.iter().product();
        entries.push(Param {
            name: meta.name.clone(),
            shape: meta.shape.clone(),
            data: read_f32(&bytes, &mut cursor, n)?,
        });
    }
    let lens: Vec<usize> = entries.iter().map(|p| p.data.len()).collect();
    let opt = match header.opt_step {
        None => None,
        Some(opt_step) => {
            let mut m = Vec::with_capacity(lens.len());
            let mut v = Vec::with_capacity(lens.len());
            for &n in &lens {
                m.push(read_f32(&bytes, &mut cursor, n)?);
            }
            for &n in &lens {
                v.push(read_f32(&bytes, &mut cursor, n)?);
            }
            let mut state = AdamWState::new(&lens);
            state.step = opt_step;
            state.m = m;
            state.v = v;
            Some(state)
        }
    };
    if cursor != bytes.len() {
        return Err(AppError::data("checkpoint has trailing bytes".to_string()));
    }
    Ok(LoadedCheckpoint {
        model: Model {
            config: sidecar.config,
            params: ModelParams { entries },
        },
        vocab: sidecar.vocab,
        step: header.step,
        opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use layoutseq_core::AttentionMode;

    fn tiny_model(vocab: &Vocab) -> Model {
        let config = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            dropout: 0.0,
            max_seq_len: 16,
            attention_mode: AttentionMode::Bidirectional,
            vocab_size: vocab.size() as usize,
        };
        Model::init(config, &mut Rng::new(3)).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let vocab = Vocab::new(3, 4).unwrap();
        let model = tiny_model(&vocab);
        let mut opt = AdamWState::new(&model.params.lens());
        opt.step = 42;
        opt.m[0][0] = 0.5;
        save_checkpoint(&path, &model, &vocab, 7, Some(&opt)).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.step, 7);
        assert_eq!(loaded.vocab, vocab);
        assert_eq!(loaded.model.config, model.config);
        let o = loaded.opt.unwrap();
        assert_eq!(o.step, 42);
        assert_eq!(o.m[0][0] as f32, 0.5);
        // payload survives modulo f32 rounding
        for (a, b) in model.params.entries.iter().zip(&loaded.model.params.entries) {
            assert_eq!(a.name, b.name);
            for (&x, &y) in a.data.iter().zip(&b.data) {
                assert_eq!(x as f32, y as f32);
            }
        }
    }

    #[test]
    fn saving_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::new(3, 4).unwrap();
        let model = tiny_model(&vocab);
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&p1, &model, &vocab, 0, None).unwrap();
        save_checkpoint(&p2, &model, &vocab, 0, None).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn incompatible_sidecar_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let vocab = Vocab::new(3, 4).unwrap();
        let model = tiny_model(&vocab);
        save_checkpoint(&path, &model, &vocab, 0, None).unwrap();
        // corrupt the sidecar's vocab
        let bad = Sidecar {
            config: model.config.clone(),
            vocab: Vocab::new(5, 4).unwrap(),
        };
        write_atomic(&sidecar_path(&path), &serde_json::to_vec(&bad).unwrap()).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
