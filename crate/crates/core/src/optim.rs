//! Optimizers, learning-rate schedule, gradient clipping, and the
//! checkpoint file format.

use crate::linalg::Mat;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW). Zero gives plain Adam.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn adam(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            weight_decay,
            ..AdamConfig::adam(lr)
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[&Mat]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            step: 0,
        }
    }
}

/// One Adam/AdamW step with bias correction. `lr` overrides the config
/// learning rate so schedules can feed in the per-epoch value.
pub fn adam_step(
    params: &mut [&mut Mat],
    grads: &[Mat],
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(p.data.len(), g.data.len(), "parameter/gradient shape mismatch");
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            if cfg.weight_decay != 0.0 {
                p.data[i] -= lr * cfg.weight_decay * p.data[i];
            }
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Scale all gradients down when the global L2 norm exceeds `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Mat], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().map(|g| g.data.iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in &mut g.data {
                *v *= scale;
            }
        }
    }
    norm
}

/// Cosine annealing from `lr_base` at epoch 0 to `lr_min` at `total_epochs`.
pub fn cosine_anneal(lr_base: f64, epoch: usize, total_epochs: usize, lr_min: f64) -> f64 {
    assert!(epoch <= total_epochs);
    let frac = epoch as f64 / total_epochs as f64;
    lr_min + 0.5 * (lr_base - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("checkpoint parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

const CHECKPOINT_HEADER: &str = "gridflow-checkpoint v1";

/// Write named parameter arrays as text. Values are printed with 17
/// significant digits so the round trip is bit-exact for f64.
pub fn save_checkpoint(path: &Path, entries: &[(&str, &Mat)]) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    for (name, mat) in entries {
        out.push_str(&format!("param {} {} {}\n", name, mat.rows, mat.cols));
        let mut first = true;
        for v in &mat.data {
            if !first {
                out.push(' ');
            }
            out.push_str(&format!("{v:.16e}"));
            first = false;
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(out.as_bytes()).map_err(io_err)?;
    Ok(())
}

/// Read a checkpoint back as (name, matrix) pairs in file order.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Mat)>, CheckpointError> {
    let f = std::fs::File::open(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(f);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines.next().ok_or(CheckpointError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let header = header.map_err(|e| CheckpointError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.trim() != CHECKPOINT_HEADER {
        return Err(CheckpointError::Parse {
            line: 1,
            message: format!("expected header '{CHECKPOINT_HEADER}', got '{header}'"),
        });
    }

    let mut entries = Vec::new();
    while let Some((idx, line)) = lines.next() {
        let line = line.map_err(|e| CheckpointError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "param" {
            return Err(CheckpointError::Parse {
                line: idx + 1,
                message: format!("expected 'param <name> <rows> <cols>', got '{line}'"),
            });
        }
        let name = parts[1].to_string();
        let rows: usize = parts[2].parse().map_err(|_| CheckpointError::Parse {
            line: idx + 1,
            message: "bad row count".into(),
        })?;
        let cols: usize = parts[3].parse().map_err(|_| CheckpointError::Parse {
            line: idx + 1,
            message: "bad column count".into(),
        })?;
        let (didx, data_line) = lines.next().ok_or(CheckpointError::Parse {
            line: idx + 2,
            message: format!("missing data line for parameter '{name}'"),
        })?;
        let data_line = data_line.map_err(|e| CheckpointError::Parse {
            line: didx + 1,
            message: e.to_string(),
        })?;
        let data: Result<Vec<f64>, _> = data_line.split_whitespace().map(str::parse).collect();
        let data = data.map_err(|_| CheckpointError::Parse {
            line: didx + 1,
            message: format!("bad float in data for parameter '{name}'"),
        })?;
        if data.len() != rows * cols {
            return Err(CheckpointError::Parse {
                line: didx + 1,
                message: format!(
                    "parameter '{name}': expected {} values, found {}",
                    rows * cols,
                    data.len()
                ),
            });
        }
        entries.push((name, Mat::from_vec(rows, cols, data)));
    }
    Ok(entries)
}
