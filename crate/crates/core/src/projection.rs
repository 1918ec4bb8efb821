//! Constraint projection.
//!
//! Training uses the soft, everywhere-differentiable projection; inference
//! (and every ODE refinement step) uses the iterative hard projection,
//! which restores power balance through capacity-weighted adjustments and
//! guarantees bounds exactly.

use crate::grid::{DispatchVector, LoadVector, PowerSystem};
use crate::ptdf::{compute_ptdf, line_flows};
use thiserror::Error;

#[derive(Debug, Clone, Copy)]
pub struct ProjectionConfig {
    /// Soft-clamp temperature.
    pub tau: f64,
    /// Balance tolerance of the hard projection, MW.
    pub hard_tol: f64,
    pub hard_max_iters: usize,
    /// Feasibility-check tolerance, MW.
    pub feas_tol: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            tau: 0.05,
            hard_tol: 0.005,
            hard_max_iters: 15,
            feas_tol: 0.1,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProjectionError {
    /// Unreachable for feasible totals (the weighted step restores balance
    /// exactly whenever no clamp binds); surfaced instead of silently
    /// returning an unbalanced dispatch.
    #[error("hard projection did not reach {tol} MW balance in {iters} iterations (residual {residual} MW)")]
    NoConvergence { tol: f64, iters: usize, residual: f64 },
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Temperature-controlled differentiable clamp. Output lies strictly inside
/// (x_min, x_max); a degenerate range (x_min == x_max) returns the constant.
pub fn soft_clamp(x: f64, x_min: f64, x_max: f64, tau: f64) -> f64 {
    assert!(x_min <= x_max, "soft_clamp requires x_min <= x_max");
    assert!(tau > 0.0, "soft_clamp requires tau > 0");
    let range = x_max - x_min;
    if range == 0.0 {
        return x_min;
    }
    x_min + range * sigmoid(((x - x_min) / range - 0.5) / tau)
}

fn soft_clamp_all(system: &PowerSystem, dispatch: &[f64], tau: f64) -> Vec<f64> {
    system
        .generators
        .iter()
        .zip(dispatch)
        .map(|(g, &p)| soft_clamp(p, g.p_min, g.p_max, tau))
        .collect()
}

/// Capacity-weighted balance restoration followed by a soft clamp.
/// Differentiable end to end; no data-dependent branching.
pub fn soft_balance_project(
    dispatch: &[f64],
    loads: &LoadVector,
    system: &PowerSystem,
    tau: f64,
) -> DispatchVector {
    let weights = system.capacity_weights();
    let delta_p = loads.total() - dispatch.iter().sum::<f64>();
    let adjusted: Vec<f64> = dispatch
        .iter()
        .zip(&weights)
        .map(|(&p, w)| p + delta_p * w)
        .collect();
    DispatchVector(soft_clamp_all(system, &adjusted, tau))
}

/// Full soft projection used in the training path: clamp, rebalance, clamp.
pub fn soft_project(
    dispatch: &[f64],
    loads: &LoadVector,
    system: &PowerSystem,
    tau: f64,
) -> DispatchVector {
    let clamped = soft_clamp_all(system, dispatch, tau);
    soft_balance_project(&clamped, loads, system, tau)
}

/// Iterative clamp-and-rebalance projection: clamp to bounds, then up to
/// `hard_max_iters` rounds of capacity-weighted balance restoration plus
/// clamping, stopping once |imbalance| < `hard_tol`.
pub fn hard_project(
    dispatch: &[f64],
    loads: &LoadVector,
    system: &PowerSystem,
    cfg: &ProjectionConfig,
) -> Result<DispatchVector, ProjectionError> {
    let total_load = loads.total();
    let weights = system.capacity_weights();
    let mut p: Vec<f64> = system
        .generators
        .iter()
        .zip(dispatch)
        .map(|(g, &v)| v.clamp(g.p_min, g.p_max))
        .collect();

    for _ in 0..cfg.hard_max_iters {
        let delta_p = total_load - p.iter().sum::<f64>();
        if delta_p.abs() < cfg.hard_tol {
            break;
        }
        for ((pi, w), g) in p.iter_mut().zip(&weights).zip(&system.generators) {
            *pi = (*pi + delta_p * w).clamp(g.p_min, g.p_max);
        }
    }

    let residual = total_load - p.iter().sum::<f64>();
    if residual.abs() >= cfg.hard_tol {
        return Err(ProjectionError::NoConvergence {
            tol: cfg.hard_tol,
            iters: cfg.hard_max_iters,
            residual,
        });
    }
    Ok(DispatchVector(p))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    BelowMin { generator: usize, amount_mw: f64 },
    AboveMax { generator: usize, amount_mw: f64 },
    Balance { amount_mw: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::BelowMin { generator, amount_mw } => {
                write!(f, "generator {} is {:.4} MW below p_min", generator + 1, amount_mw)
            }
            Violation::AboveMax { generator, amount_mw } => {
                write!(f, "generator {} is {:.4} MW above p_max", generator + 1, amount_mw)
            }
            Violation::Balance { amount_mw } => {
                write!(f, "power balance is off by {amount_mw:.4} MW")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
    /// Informational only: line loadings versus finite limits, when any
    /// limit is set. Never affects `feasible`.
    pub line_flow_notes: Vec<String>,
}

/// Bounds and balance within `feas_tol` MW. Line flows are reported as
/// informational notes when finite limits exist; they never flip the verdict.
pub fn check_feasibility(
    dispatch: &[f64],
    loads: &LoadVector,
    system: &PowerSystem,
    feas_tol: f64,
) -> FeasibilityReport {
    let mut violations = Vec::new();
    for (i, (g, &p)) in system.generators.iter().zip(dispatch).enumerate() {
        if p < g.p_min - feas_tol {
            violations.push(Violation::BelowMin {
                generator: i,
                amount_mw: g.p_min - p,
            });
        } else if p > g.p_max + feas_tol {
            violations.push(Violation::AboveMax {
                generator: i,
                amount_mw: p - g.p_max,
            });
        }
    }
    let imbalance = dispatch.iter().sum::<f64>() - loads.total();
    if imbalance.abs() > feas_tol {
        violations.push(Violation::Balance { amount_mw: imbalance });
    }

    let mut line_flow_notes = Vec::new();
    if system.lines.iter().any(|l| l.limit.is_some()) {
        if let Ok(ptdf) = compute_ptdf(system) {
            if let Ok(flows) = line_flows(&ptdf, system, dispatch, loads) {
                for (i, (line, flow)) in system.lines.iter().zip(&flows).enumerate() {
                    if let Some(limit) = line.limit {
                        line_flow_notes.push(format!(
                            "line {} ({}-{}): |{:.3}| MW of {:.3} MW limit",
                            i + 1,
                            line.from + 1,
                            line.to + 1,
                            flow,
                            limit
                        ));
                    }
                }
            }
        }
    }

    FeasibilityReport {
        feasible: violations.is_empty(),
        violations,
        line_flow_notes,
    }
}
