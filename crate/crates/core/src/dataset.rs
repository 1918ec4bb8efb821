//! Oracle-labelled samples: generation over scaled load scenarios, and a
//! columnar text format for persistence.
//!
//! Each sample scales the base load vector by one uniform factor, then
//! solves the exact dispatch problem. Files carry a header row and one
//! row per sample: `n_buses` load columns (MW), `n_generators` dispatch
//! columns (MW), one cost column ($), all at full double precision.

use crate::grid::{DispatchVector, LoadVector, PowerSystem};
use crate::oracle::{solve_economic_dispatch, verify_kkt, OracleError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub loads: LoadVector,
    pub optimal_dispatch: DispatchVector,
    pub optimal_cost: f64,
}

/// A load band: factors drawn uniformly from [scale_lo, scale_hi] applied
/// to the base load vector.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub n_samples: usize,
}

impl ScenarioSpec {
    pub fn new(name: &str, scale_lo: f64, scale_hi: f64, n_samples: usize) -> Self {
        assert!(0.0 < scale_lo && scale_lo <= scale_hi);
        ScenarioSpec {
            name: name.to_string(),
            scale_lo,
            scale_hi,
            n_samples,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("dataset parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sample {index} failed verification: {message}")]
    BadSample { index: usize, message: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Draw factors sequentially (so the stream depends only on the seed), then
/// solve the oracle for each sample in parallel, preserving index order.
pub fn generate(
    system: &PowerSystem,
    spec: &ScenarioSpec,
    seed: u64,
) -> Result<Vec<Sample>, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors: Vec<f64> = (0..spec.n_samples)
        .map(|_| {
            if spec.scale_lo == spec.scale_hi {
                spec.scale_lo
            } else {
                rng.random_range(spec.scale_lo..=spec.scale_hi)
            }
        })
        .collect();

    factors
        .par_iter()
        .map(|&factor| {
            let loads = LoadVector::scaled(&system.base_load, factor);
            let sol = solve_economic_dispatch(system, &loads)?;
            Ok(Sample {
                loads,
                optimal_dispatch: sol.dispatch,
                optimal_cost: sol.cost,
            })
        })
        .collect()
}

fn header(n_buses: usize, n_generators: usize) -> String {
    let mut cols = Vec::with_capacity(n_buses + n_generators + 1);
    for b in 1..=n_buses {
        cols.push(format!("load_{b}"));
    }
    for g in 1..=n_generators {
        cols.push(format!("pg_{g}"));
    }
    cols.push("cost".to_string());
    cols.join(",")
}

pub fn save(samples: &[Sample], path: &Path) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    assert!(!samples.is_empty(), "refusing to save an empty dataset");
    let n_buses = samples[0].loads.len();
    let n_gens = samples[0].optimal_dispatch.len();
    let mut out = String::new();
    out.push_str(&header(n_buses, n_gens));
    out.push('\n');
    for s in samples {
        let mut first = true;
        for v in s.loads.iter().chain(s.optimal_dispatch.iter()).chain([&s.optimal_cost]) {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v:.16e}"));
            first = false;
        }
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(out.as_bytes()).map_err(io_err)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or(DatasetError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;

    let cols: Vec<&str> = head.split(',').collect();
    let n_buses = cols.iter().take_while(|c| c.starts_with("load_")).count();
    let n_gens = cols[n_buses..].iter().take_while(|c| c.starts_with("pg_")).count();
    if n_buses == 0 || n_gens == 0 || cols.len() != n_buses + n_gens + 1 || cols[cols.len() - 1] != "cost" {
        return Err(DatasetError::Parse {
            line: 1,
            message: format!("unexpected header '{head}'"),
        });
    }
    for (i, c) in cols.iter().enumerate().take(n_buses) {
        let want = format!("load_{}", i + 1);
        if *c != want {
            return Err(DatasetError::Parse {
                line: 1,
                message: format!("expected column '{want}', found '{c}'"),
            });
        }
    }
    for (i, c) in cols.iter().skip(n_buses).take(n_gens).enumerate() {
        let want = format!("pg_{}", i + 1);
        if *c != want {
            return Err(DatasetError::Parse {
                line: 1,
                message: format!("expected column '{want}', found '{c}'"),
            });
        }
    }

    let mut samples = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let values: Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
        let values = values.map_err(|e| DatasetError::Parse {
            line: idx + 1,
            message: format!("bad float: {e}"),
        })?;
        if values.len() != n_buses + n_gens + 1 {
            return Err(DatasetError::Parse {
                line: idx + 1,
                message: format!(
                    "expected {} columns, found {}",
                    n_buses + n_gens + 1,
                    values.len()
                ),
            });
        }
        samples.push(Sample {
            loads: LoadVector(values[..n_buses].to_vec()),
            optimal_dispatch: DispatchVector(values[n_buses..n_buses + n_gens].to_vec()),
            optimal_cost: values[n_buses + n_gens],
        });
    }
    if samples.is_empty() {
        return Err(DatasetError::Parse {
            line: 1,
            message: "file has a header but no samples".into(),
        });
    }
    Ok(samples)
}

/// Re-verify roughly `fraction` of the samples against the optimality
/// system (always including the first), as a load-time integrity check.
pub fn spot_verify(
    system: &PowerSystem,
    samples: &[Sample],
    fraction: f64,
) -> Result<(), DatasetError> {
    let stride = (1.0 / fraction.clamp(1e-6, 1.0)).round() as usize;
    for (index, s) in samples.iter().enumerate().step_by(stride.max(1)) {
        let report = verify_kkt(system, &s.optimal_dispatch, &s.loads, 1e-9);
        if report.max_residual() >= 1e-6 {
            return Err(DatasetError::BadSample {
                index,
                message: format!(
                    "optimality residual {:.3e} exceeds 1e-6",
                    report.max_residual()
                ),
            });
        }
        let cost = crate::grid::cost(system, &s.optimal_dispatch).map_err(|e| {
            DatasetError::BadSample {
                index,
                message: e.to_string(),
            }
        })?;
        if (cost - s.optimal_cost).abs() > 1e-9 * s.optimal_cost.abs().max(1.0) {
            return Err(DatasetError::BadSample {
                index,
                message: format!("stored cost {} != recomputed {}", s.optimal_cost, cost),
            });
        }
    }
    Ok(())
}

/// `load` followed by a 1% optimality spot check.
pub fn load_verified(path: &Path, system: &PowerSystem) -> Result<Vec<Sample>, DatasetError> {
    let samples = load(path)?;
    spot_verify(system, &samples, 0.01)?;
    Ok(samples)
}
