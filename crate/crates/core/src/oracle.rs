//! Exact economic-dispatch oracle.
//!
//! For strictly convex separable quadratic costs, one power-balance
//! equality, and box limits, the optimum dispatches every unit at
//! clamp((lambda - c1)/(2 c2), p_min, p_max) for the system marginal price
//! lambda. Total output is continuous and nondecreasing in lambda, so a
//! bisection on lambda pins the unique global optimum to any tolerance.
//! No general-purpose optimizer is involved, which keeps the ground truth
//! certifiable: every solution is checked against the first-order
//! optimality system before it leaves this module.

use crate::grid::{cost, marginal_cost, DispatchVector, LoadVector, PowerSystem};
use thiserror::Error;

/// Absolute power-balance tolerance the bisection drives to, in MW.
pub const BALANCE_TOL_MW: f64 = 1e-10;
const MAX_BISECT_ITERS: usize = 200;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("infeasible: total load {total_load} MW is below the minimum generation {sum_p_min} MW")]
    BelowMinimum { total_load: f64, sum_p_min: f64 },
    #[error("infeasible: total load {total_load} MW exceeds the maximum generation {sum_p_max} MW")]
    AboveMaximum { total_load: f64, sum_p_max: f64 },
    #[error("bisection failed to reach {tol} MW balance after {iters} iterations (residual {residual})")]
    NoConvergence { tol: f64, iters: usize, residual: f64 },
}

/// First-order optimality report for a dispatch.
///
/// `mu_min`/`mu_max` are the bound multipliers in $/MW, nonnegative by
/// construction; any dual-side violation therefore shows up in the
/// stationarity residual instead.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// System marginal price estimate in $/MW.
    pub lambda: f64,
    pub mu_min: Vec<f64>,
    pub mu_max: Vec<f64>,
    /// max_i |dC_i/dp_i - lambda + mu_max_i - mu_min_i|
    pub stationarity_residual: f64,
    /// max_i of |mu * bound slack|
    pub complementarity_residual: f64,
    /// |sum(dispatch) - sum(loads)| in MW
    pub balance_residual: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity_residual
            .max(self.complementarity_residual)
            .max(self.balance_residual)
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub dispatch: DispatchVector,
    pub cost: f64,
    pub kkt: KktReport,
}

fn dispatch_at_lambda(system: &PowerSystem, lambda: f64) -> Vec<f64> {
    system
        .generators
        .iter()
        .map(|g| ((lambda - g.c1) / (2.0 * g.c2)).clamp(g.p_min, g.p_max))
        .collect()
}

/// Solve the dispatch problem for the given bus loads.
///
/// The optimum depends on the loads only through their sum; the full vector
/// is accepted so call sites stay in the domain types.
pub fn solve_economic_dispatch(
    system: &PowerSystem,
    loads: &LoadVector,
) -> Result<OracleSolution, OracleError> {
    let total_load = loads.total();
    let sum_p_min = system.sum_p_min();
    let sum_p_max = system.sum_p_max();
    if total_load < sum_p_min {
        return Err(OracleError::BelowMinimum { total_load, sum_p_min });
    }
    if total_load > sum_p_max {
        return Err(OracleError::AboveMaximum { total_load, sum_p_max });
    }

    // Bracket: below lambda_lo every unit sits at p_min, above lambda_hi at
    // p_max, so the imbalance changes sign inside.
    let mut lo = system
        .generators
        .iter()
        .map(|g| g.marginal_cost_at(g.p_min))
        .fold(f64::INFINITY, f64::min);
    let mut hi = system
        .generators
        .iter()
        .map(|g| g.marginal_cost_at(g.p_max))
        .fold(f64::NEG_INFINITY, f64::max);

    let imbalance = |lambda: f64| -> f64 {
        dispatch_at_lambda(system, lambda).iter().sum::<f64>() - total_load
    };

    let mut lambda = lo;
    if imbalance(lo).abs() >= BALANCE_TOL_MW {
        if imbalance(hi).abs() < BALANCE_TOL_MW {
            lambda = hi;
        } else {
            let mut converged = false;
            for _ in 0..MAX_BISECT_ITERS {
                let mid = 0.5 * (lo + hi);
                let r = imbalance(mid);
                if r.abs() < BALANCE_TOL_MW {
                    lambda = mid;
                    converged = true;
                    break;
                }
                if r < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if !converged {
                return Err(OracleError::NoConvergence {
                    tol: BALANCE_TOL_MW,
                    iters: MAX_BISECT_ITERS,
                    residual: imbalance(0.5 * (lo + hi)),
                });
            }
        }
    }

    let dispatch = dispatch_at_lambda(system, lambda);
    let total_cost = cost(system, &dispatch).expect("dispatch length matches system");
    let kkt = verify_kkt(system, &dispatch, loads, 1e-9);
    Ok(OracleSolution {
        dispatch: DispatchVector(dispatch),
        cost: total_cost,
        kkt,
    })
}

/// Evaluate the first-order optimality system at a dispatch.
///
/// `tol` classifies a generator as at-bound. lambda is estimated as the mean
/// marginal cost of strictly interior generators; with none interior it falls
/// back to the midpoint of the lambda interval consistent with the bound
/// pattern. Never fails: violating inputs come back as large residuals.
pub fn verify_kkt(system: &PowerSystem, dispatch: &[f64], loads: &LoadVector, tol: f64) -> KktReport {
    let mc = marginal_cost(system, dispatch).expect("dispatch length matches system");
    let n = system.n_generators();

    #[derive(PartialEq)]
    enum Position {
        AtMin,
        AtMax,
        Interior,
    }
    let position: Vec<Position> = system
        .generators
        .iter()
        .zip(dispatch)
        .map(|(g, &p)| {
            if (p - g.p_min).abs() <= tol {
                Position::AtMin
            } else if (g.p_max - p).abs() <= tol {
                Position::AtMax
            } else {
                Position::Interior
            }
        })
        .collect();

    let interior_mc: Vec<f64> = (0..n)
        .filter(|&i| position[i] == Position::Interior)
        .map(|i| mc[i])
        .collect();
    let lambda = if !interior_mc.is_empty() {
        interior_mc.iter().sum::<f64>() / interior_mc.len() as f64
    } else {
        // All units pinned: any lambda between the dearest unit at p_max and
        // the cheapest unit at p_min satisfies stationarity.
        let lo = (0..n)
            .filter(|&i| position[i] == Position::AtMax)
            .map(|i| mc[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let hi = (0..n)
            .filter(|&i| position[i] == Position::AtMin)
            .map(|i| mc[i])
            .fold(f64::INFINITY, f64::min);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            (false, false) => mc.iter().sum::<f64>() / n as f64,
        }
    };

    let mut mu_min = vec![0.0; n];
    let mut mu_max = vec![0.0; n];
    let mut stationarity: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..n {
        match position[i] {
            Position::AtMin => mu_min[i] = (mc[i] - lambda).max(0.0),
            Position::AtMax => mu_max[i] = (lambda - mc[i]).max(0.0),
            Position::Interior => {}
        }
        stationarity = stationarity.max((mc[i] - lambda + mu_max[i] - mu_min[i]).abs());
        let g = &system.generators[i];
        complementarity = complementarity
            .max((mu_min[i] * (dispatch[i] - g.p_min)).abs())
            .max((mu_max[i] * (g.p_max - dispatch[i])).abs());
    }

    let balance = (dispatch.iter().sum::<f64>() - loads.total()).abs();
    KktReport {
        lambda,
        mu_min,
        mu_max,
        stationarity_residual: stationarity,
        complementarity_residual: complementarity,
        balance_residual: balance,
    }
}
