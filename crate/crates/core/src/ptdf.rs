//! DC power flow: PTDF matrix and branch flows.
//!
//! Flows are a reporting diagnostic in this pipeline; no optimization step
//! enforces them. The slack bus absorbs any injection imbalance, which is
//! what fixes its PTDF column to zero.

use crate::grid::{GridError, PowerSystem};
use crate::linalg::{solve, Mat};

/// Power Transfer Distribution Factors, n_lines x n_buses.
///
/// Built from the DC assumptions: nodal susceptance matrix B from 1/x,
/// reduced by the slack bus; column j of the result is the vector of line
/// flows caused by injecting 1 MW at bus j and withdrawing it at the slack.
pub fn compute_ptdf(system: &PowerSystem) -> Result<Mat, GridError> {
    let n = system.n_buses;
    let m = system.lines.len();
    let slack = system.slack_bus;

    // Nodal susceptance matrix.
    let mut b_full = Mat::zeros(n, n);
    for line in &system.lines {
        let b = 1.0 / line.reactance;
        let (i, j) = (line.from, line.to);
        b_full.set(i, i, b_full.at(i, i) + b);
        b_full.set(j, j, b_full.at(j, j) + b);
        b_full.set(i, j, b_full.at(i, j) - b);
        b_full.set(j, i, b_full.at(j, i) - b);
    }

    // Reduce by the slack bus.
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mut b_red = Mat::zeros(n - 1, n - 1);
    for (ri, &i) in keep.iter().enumerate() {
        for (rj, &j) in keep.iter().enumerate() {
            b_red.set(ri, rj, b_full.at(i, j));
        }
    }

    // Branch susceptance-incidence Bf = diag(1/x) * A, restricted to the
    // non-slack columns, as the right-hand side of B_red^T Y = Bf_red^T.
    let mut rhs = Mat::zeros(n - 1, m);
    for (l, line) in system.lines.iter().enumerate() {
        let b = 1.0 / line.reactance;
        if line.from != slack {
            let r = keep.iter().position(|&k| k == line.from).unwrap();
            rhs.set(r, l, b);
        }
        if line.to != slack {
            let r = keep.iter().position(|&k| k == line.to).unwrap();
            rhs.set(r, l, -b);
        }
    }

    // B_red is symmetric, so solving B_red Y = Bf_red^T gives Y = B_red^-1 Bf_red^T
    // and PTDF_red = Y^T.
    let y = solve(&b_red, &rhs).ok_or(GridError::Disconnected)?;

    let mut ptdf = Mat::zeros(m, n);
    for l in 0..m {
        for (ri, &bus) in keep.iter().enumerate() {
            ptdf.set(l, bus, y.at(ri, l));
        }
        // slack column stays zero
    }
    Ok(ptdf)
}

/// Net injection A_g * p_g - p_d per bus.
pub fn net_injection(
    system: &PowerSystem,
    dispatch: &[f64],
    loads: &[f64],
) -> Result<Vec<f64>, GridError> {
    if dispatch.len() != system.n_generators() {
        return Err(GridError::DispatchLength {
            expected: system.n_generators(),
            got: dispatch.len(),
        });
    }
    if loads.len() != system.n_buses {
        return Err(GridError::LoadLength {
            expected: system.n_buses,
            got: loads.len(),
        });
    }
    let mut inj: Vec<f64> = loads.iter().map(|d| -d).collect();
    for (g, &p) in system.generators.iter().zip(dispatch) {
        inj[g.bus] += p;
    }
    Ok(inj)
}

/// Branch flows PTDF * (A_g p_g - p_d) in MW. Power balance is not required;
/// any imbalance is absorbed at the slack bus.
pub fn line_flows(
    ptdf: &Mat,
    system: &PowerSystem,
    dispatch: &[f64],
    loads: &[f64],
) -> Result<Vec<f64>, GridError> {
    let inj = net_injection(system, dispatch, loads)?;
    let mut flows = vec![0.0; ptdf.rows];
    for (l, flow) in flows.iter_mut().enumerate() {
        let row = ptdf.row(l);
        *flow = row.iter().zip(&inj).map(|(p, i)| p * i).sum();
    }
    Ok(flows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_case30;
    use crate::grid::PowerSystem;

    fn tiny_system(n_buses: usize, lines: &[(usize, usize, f64)]) -> PowerSystem {
        // Hand-built systems for PTDF checks; validation is bypassed on
        // purpose (no servability constraint applies here).
        PowerSystem {
            name: "tiny".into(),
            n_buses,
            slack_bus: 0,
            generators: vec![],
            lines: lines
                .iter()
                .map(|&(from, to, reactance)| crate::grid::Line {
                    from,
                    to,
                    reactance,
                    limit: None,
                })
                .collect(),
            base_load: vec![0.0; n_buses],
        }
    }

    #[test]
    fn slack_column_is_zero() {
        let sys = build_case30();
        let ptdf = compute_ptdf(&sys).unwrap();
        for l in 0..ptdf.rows {
            assert_eq!(ptdf.at(l, sys.slack_bus), 0.0);
        }
    }

    #[test]
    fn two_bus_line_carries_full_injection() {
        let sys = tiny_system(2, &[(0, 1, 0.1)]);
        let ptdf = compute_ptdf(&sys).unwrap();
        // Injection at bus 1 flows entirely back to the slack against the
        // line orientation 0 -> 1.
        assert!((ptdf.at(0, 1) - (-1.0)).abs() < 1e-12);
        assert_eq!(ptdf.at(0, 0), 0.0);
    }

    #[test]
    fn triangle_splits_two_thirds_one_third() {
        // Equal reactances, slack at bus 0, injection at bus 1. Solving
        // the 3-bus DC system by hand: theta = (0, 2/3, 1/3) * x, so the
        // direct line carries 2/3 and the two-hop path 1/3.
        let sys = tiny_system(3, &[(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)]);
        let ptdf = compute_ptdf(&sys).unwrap();
        assert!((ptdf.at(0, 1) - (-2.0 / 3.0)).abs() < 1e-12);
        assert!((ptdf.at(1, 1) - (-1.0 / 3.0)).abs() < 1e-12);
        assert!((ptdf.at(2, 1) - (1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn disconnected_graph_is_reported() {
        let sys = tiny_system(4, &[(0, 1, 0.1), (2, 3, 0.1)]);
        assert!(matches!(compute_ptdf(&sys), Err(GridError::Disconnected)));
    }

    #[test]
    fn flows_are_linear_in_injections() {
        let sys = build_case30();
        let ptdf = compute_ptdf(&sys).unwrap();
        let d1 = vec![120.0, 40.0, 30.0, 20.0, 15.0, 25.0];
        let d2 = vec![80.0, 60.0, 20.0, 30.0, 25.0, 35.0];
        let l1: Vec<f64> = sys.base_load.clone();
        let l2: Vec<f64> = sys.base_load.iter().map(|v| v * 0.8).collect();
        let (a, b) = (0.3, -1.7);

        let fx = line_flows(&ptdf, &sys, &d1, &l1).unwrap();
        let fy = line_flows(&ptdf, &sys, &d2, &l2).unwrap();
        let combo_d: Vec<f64> = d1.iter().zip(&d2).map(|(x, y)| a * x + b * y).collect();
        let combo_l: Vec<f64> = l1.iter().zip(&l2).map(|(x, y)| a * x + b * y).collect();
        let f_combo = line_flows(&ptdf, &sys, &combo_d, &combo_l).unwrap();
        for i in 0..f_combo.len() {
            let want = a * fx[i] + b * fy[i];
            assert!((f_combo[i] - want).abs() < 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn zero_injections_zero_flows_and_slack_only_injection() {
        let sys = build_case30();
        let ptdf = compute_ptdf(&sys).unwrap();
        let zero_d = vec![0.0; 6];
        let zero_l = vec![0.0; 30];
        let flows = line_flows(&ptdf, &sys, &zero_d, &zero_l).unwrap();
        assert!(flows.iter().all(|&f| f == 0.0));

        // Injection at the slack bus only: generator 1 sits at bus 1.
        let d = vec![50.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let flows = line_flows(&ptdf, &sys, &d, &zero_l).unwrap();
        assert!(flows.iter().all(|&f| f.abs() < 1e-12));
    }
}
