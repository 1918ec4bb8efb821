//! Graph-building helpers shared by the two training stages: generation
//! cost and marginal cost as tensor expressions, the differentiable
//! projection, and the constraint penalty terms.
//!
//! All of these operate on a batch laid out as rows: `dispatch` is
//! (batch x n_generators) in MW.

use crate::autodiff::{Graph, Tensor};
use crate::grid::PowerSystem;
use crate::linalg::Mat;

/// Total generation cost per sample, (batch x 1) in $.
pub fn cost_tensor(g: &mut Graph, dispatch: Tensor, system: &PowerSystem) -> Tensor {
    let c2: Vec<f64> = system.generators.iter().map(|gen| gen.c2).collect();
    let c1: Vec<f64> = system.generators.iter().map(|gen| gen.c1).collect();
    let c0_sum: f64 = system.generators.iter().map(|gen| gen.c0).sum();
    let sq = g.mul(dispatch, dispatch);
    let quad = g.mul_const_row(sq, c2);
    let lin = g.mul_const_row(dispatch, c1);
    let sum = g.add(quad, lin);
    let per_sample = g.sum_rows(sum);
    if c0_sum != 0.0 {
        g.add_scalar(per_sample, c0_sum)
    } else {
        per_sample
    }
}

/// Marginal cost 2 c2 p + c1 per generator, (batch x n_generators) in $/MW.
pub fn marginal_cost_tensor(g: &mut Graph, dispatch: Tensor, system: &PowerSystem) -> Tensor {
    let two_c2: Vec<f64> = system.generators.iter().map(|gen| 2.0 * gen.c2).collect();
    let c1: Vec<f64> = system.generators.iter().map(|gen| gen.c1).collect();
    let scaled = g.mul_const_row(dispatch, two_c2);
    g.add_const_row(scaled, c1)
}

/// Differentiable clamp of every generator to its box, temperature `tau`.
pub fn soft_clamp_tensor(g: &mut Graph, x: Tensor, system: &PowerSystem, tau: f64) -> Tensor {
    let p_min = system.p_min_vec();
    let neg_p_min: Vec<f64> = p_min.iter().map(|v| -v).collect();
    let range: Vec<f64> = system.generators.iter().map(|gen| gen.range()).collect();
    let inv_range: Vec<f64> = range.iter().map(|r| 1.0 / r).collect();

    let shifted = g.add_const_row(x, neg_p_min);
    let unit = g.mul_const_row(shifted, inv_range);
    let centered = g.add_scalar(unit, -0.5);
    let sharp = g.scale(centered, 1.0 / tau);
    let sig = g.sigmoid(sharp);
    let scaled = g.mul_const_row(sig, range);
    g.add_const_row(scaled, p_min)
}

/// Capacity-weighted balance restoration followed by a soft clamp;
/// `totals` is the (batch x 1) constant of total loads in MW.
pub fn soft_balance_project_tensor(
    g: &mut Graph,
    x: Tensor,
    totals: &Mat,
    system: &PowerSystem,
    tau: f64,
) -> Tensor {
    let weights = system.capacity_weights();
    let sum = g.sum_rows(x);
    let neg_sum = g.scale(sum, -1.0);
    let delta = g.add_const_mat(neg_sum, totals);
    let adjust = g.col_times_const_row(delta, weights);
    let moved = g.add(x, adjust);
    soft_clamp_tensor(g, moved, system, tau)
}

/// Full soft projection of the training path: clamp, rebalance, clamp.
pub fn soft_project_tensor(
    g: &mut Graph,
    x: Tensor,
    totals: &Mat,
    system: &PowerSystem,
    tau: f64,
) -> Tensor {
    let clamped = soft_clamp_tensor(g, x, system, tau);
    soft_balance_project_tensor(g, clamped, totals, system, tau)
}

/// Squared power-balance violation per sample, (batch x 1).
pub fn balance_sq_tensor(g: &mut Graph, dispatch: Tensor, totals: &Mat) -> Tensor {
    let sum = g.sum_rows(dispatch);
    let neg_totals = Mat::from_vec(
        totals.rows,
        totals.cols,
        totals.data.iter().map(|v| -v).collect(),
    );
    let miss = g.add_const_mat(sum, &neg_totals);
    g.mul(miss, miss)
}

/// Squared bound violations summed per sample, (batch x 1):
/// sum_i (relu(p_min - p) + relu(p - p_max))^2.
pub fn limits_sq_tensor(g: &mut Graph, dispatch: Tensor, system: &PowerSystem) -> Tensor {
    let p_min = system.p_min_vec();
    let neg_p_max: Vec<f64> = system.generators.iter().map(|gen| -gen.p_max).collect();

    let neg = g.scale(dispatch, -1.0);
    let below_arg = g.add_const_row(neg, p_min);
    let below = g.relu(below_arg);
    let above_arg = g.add_const_row(dispatch, neg_p_max);
    let above = g.relu(above_arg);
    let viol = g.add(below, above);
    let sq = g.mul(viol, viol);
    g.sum_rows(sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_case30, cost, LoadVector};
    use crate::projection::soft_project;

    #[test]
    fn cost_and_marginal_cost_match_scalar_path() {
        let sys = build_case30();
        let batch = vec![
            vec![120.0, 45.0, 30.0, 20.0, 15.0, 25.0],
            vec![50.0, 20.0, 15.0, 10.0, 10.0, 12.0],
        ];
        let mut g = Graph::new();
        let data: Vec<f64> = batch.iter().flatten().copied().collect();
        let d = g.constant(Mat::from_vec(2, 6, data));
        let c = cost_tensor(&mut g, d, &sys);
        let mc = marginal_cost_tensor(&mut g, d, &sys);
        for (i, row) in batch.iter().enumerate() {
            assert!((g.value(c).data[i] - cost(&sys, row).unwrap()).abs() < 1e-9);
            let want = crate::grid::marginal_cost(&sys, row).unwrap();
            for (a, b) in g.value(mc).row(i).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tensor_soft_projection_matches_scalar_path() {
        let sys = build_case30();
        let raw = [300.0, -10.0, 22.0, 18.0, 40.0, 5.0];
        let loads = LoadVector::scaled(&sys.base_load, 0.9);
        let expect = soft_project(&raw, &loads, &sys, 0.05);

        let mut g = Graph::new();
        let x = g.constant(Mat::from_vec(1, 6, raw.to_vec()));
        let totals = Mat::col_vector(vec![loads.total()]);
        let projected = soft_project_tensor(&mut g, x, &totals, &sys, 0.05);
        for (a, b) in g.value(projected).data.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn penalty_terms_are_zero_in_the_feasible_interior() {
        let sys = build_case30();
        let d = [150.0, 50.0, 30.0, 20.0, 15.0, 20.0];
        let total: f64 = d.iter().sum();
        let mut g = Graph::new();
        let x = g.constant(Mat::from_vec(1, 6, d.to_vec()));
        let totals = Mat::col_vector(vec![total]);
        let bal = balance_sq_tensor(&mut g, x, &totals);
        let lim = limits_sq_tensor(&mut g, x, &sys);
        assert!(g.value(bal).data[0].abs() < 1e-18);
        assert_eq!(g.value(lim).data[0], 0.0);
    }
}
