//! Relative value iteration, exact policy evaluation, and kernel simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::instance::{sample_row, MdpConfig, MdpInstance};
use crate::error::{Error, Result};
use crate::model::Action;

/// Reference state with every channel at grid index 0 and every queue empty.
pub const REFERENCE_STATE: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RviSolution {
    /// Optimal average cost per stage.
    pub theta: f64,
    /// Relative values, zero at the reference state.
    pub v: Vec<f64>,
    /// Greedy action index per state.
    pub policy: Vec<usize>,
    /// `span(T h - h)` per sweep.
    pub span_history: Vec<f64>,
}

fn bellman(inst: &MdpInstance, h: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut th = vec![0.0; inst.n_states()];
    let mut arg = vec![0; inst.n_states()];
    for s in 0..inst.n_states() {
        let mut best = f64::INFINITY;
        for a in 0..inst.n_actions() {
            let q = inst.costs[s][a] + inst.rows[s][a].iter().map(|&(x, p)| p * h[x]).sum::<f64>();
            // Strict comparison keeps the lowest action index on ties.
            if q < best {
                best = q;
                arg[s] = a;
            }
        }
        th[s] = best;
    }
    (th, arg)
}

/// Iterates `h <- T h - (T h)(ref)` until `span(T h - h) < tol`.
pub fn relative_value_iteration(inst: &MdpInstance, tol: f64, max_sweeps: usize) -> Result<RviSolution> {
    let n = inst.n_states();
    let mut h = vec![0.0; n];
    let mut history = Vec::new();
    for _ in 0..max_sweeps {
        let (th, policy) = bellman(inst, &h);
        let diff: Vec<f64> = th.iter().zip(&h).map(|(a, b)| a - b).collect();
        let hi = diff.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = diff.iter().cloned().fold(f64::INFINITY, f64::min);
        let span = hi - lo;
        history.push(span);
        let offset = th[REFERENCE_STATE];
        h = th.iter().map(|x| x - offset).collect();
        if span < tol {
            let (_, policy_final) = bellman(inst, &h);
            debug_assert_eq!(policy.len(), policy_final.len());
            return Ok(RviSolution {
                theta: 0.5 * (hi + lo),
                v: h,
                policy: policy_final,
                span_history: history,
            });
        }
    }
    let residual = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::NotConverged { iterations: max_sweeps, residual, history })
}

/// Kernel under a stationary policy given as one action per state.
pub fn policy_rows(config: &MdpConfig, policy: &[Action]) -> Result<Vec<Vec<(usize, f64)>>> {
    (0..config.n_states()).map(|s| config.row_for(s, &policy[s])).collect()
}

/// Number of closed communicating classes of a sparse chain.
pub fn recurrent_classes(rows: &[Vec<(usize, f64)>]) -> usize {
    let n = rows.len();
    let reach = |start: usize| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for &(j, p) in &rows[i] {
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let sets: Vec<Vec<bool>> = (0..n).map(reach).collect();
    let mut classes: Vec<usize> = Vec::new();
    for i in 0..n {
        let recurrent = (0..n).all(|j| !sets[i][j] || sets[j][i]);
        if recurrent && !classes.iter().any(|&c| sets[c][i]) {
            classes.push(i);
        }
    }
    classes.len()
}

/// Largest chain solved by dense elimination in [`stationary_of`].
pub const DENSE_LIMIT: usize = 4096;

/// Stationary law of a unichain sparse chain.
pub fn stationary_of(rows: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    let n = rows.len();
    if n > DENSE_LIMIT {
        return Err(Error::Contract(format!("{n} states exceed the dense solver limit {DENSE_LIMIT}")));
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for &(j, p) in row {
            a[(j, i)] += p;
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or_else(|| Error::Kernel("policy chain is not unichain".into()))?;
    Ok(pi.iter().map(|v| v.max(0.0)).collect())
}

/// Exact long-run average cost of a stationary policy.
pub fn evaluate_policy(config: &MdpConfig, policy: &[Action]) -> Result<f64> {
    let rows = policy_rows(config, policy)?;
    let pi = stationary_of(&rows)?;
    Ok((0..config.n_states()).map(|s| pi[s] * config.cost(s, &policy[s])).sum())
}

/// Average cost of `slots` transitions drawn from the kernel under `act`.
pub fn simulate_kernel<R: Rng + ?Sized>(
    config: &MdpConfig,
    start: usize,
    slots: u64,
    rng: &mut R,
    mut act: impl FnMut(usize) -> Action,
) -> Result<f64> {
    let mut s = start;
    let mut total = 0.0;
    for _ in 0..slots {
        let a = act(s);
        total += config.cost(s, &a);
        s = sample_row(&config.row_for(s, &a)?, rng);
    }
    Ok(total / slots as f64)
}

/// Faster variant of [`simulate_kernel`] for a discrete policy on a built
/// instance.
pub fn simulate_instance<R: Rng + ?Sized>(inst: &MdpInstance, policy: &[usize], start: usize, slots: u64, rng: &mut R) -> f64 {
    let mut s = start;
    let mut total = 0.0;
    for _ in 0..slots {
        let a = policy[s];
        total += inst.costs[s][a];
        s = sample_row(&inst.rows[s][a], rng);
    }
    total / slots as f64
}

#[cfg(test)]
mod tests {
    use super::super::instance::{build_instance, MdpConfig};
    use super::*;
    use crate::channel::ChannelModel;
    use crate::model::CostWeights;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_link(weights: CostWeights) -> MdpConfig {
        MdpConfig {
            links: 1,
            subcarriers: 1,
            channel: ChannelModel::new(vec![0.5, 2.0], vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap(),
            buffer: 3,
            arrival_prob: vec![0.15],
            service_scale: vec![0.2],
            power_levels: vec![0.5, 1.0, 2.0],
            weights,
        }
    }

    #[test]
    fn zero_cost_instance() {
        let inst = build_instance(one_link(CostWeights::uniform(1, 0.0, 0.0, 0.0))).unwrap();
        let sol = relative_value_iteration(&inst, 1e-12, 10_000).unwrap();
        assert_eq!(sol.theta, 0.0);
        assert!(sol.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_state_single_action() {
        let cfg = one_link(CostWeights::uniform(1, 0.0, 0.0, 0.0));
        let inst = MdpInstance {
            config: cfg,
            actions: vec![Action::idle(1, 1)],
            rows: vec![vec![vec![(0, 1.0)]]],
            costs: vec![vec![5.0]],
        };
        let sol = relative_value_iteration(&inst, 1e-12, 100).unwrap();
        assert_eq!(sol.theta, 5.0);
        assert_eq!(sol.v, vec![0.0]);
        assert_eq!(recurrent_classes(&inst.rows[0]), 1);
    }

    #[test]
    fn spans_never_increase_and_theta_matches_simulation() {
        let inst = build_instance(one_link(CostWeights::uniform(1, 1.0, 5.0, 0.3))).unwrap();
        let sol = relative_value_iteration(&inst, 1e-9, 100_000).unwrap();
        assert!(sol.span_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15));
        assert_eq!(sol.v[REFERENCE_STATE], 0.0);
        let policy: Vec<Action> = sol.policy.iter().map(|&a| inst.actions[a].clone()).collect();
        let exact = evaluate_policy(&inst.config, &policy).unwrap();
        assert_abs_diff_eq!(exact, sol.theta, epsilon = 1e-7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sim = simulate_instance(&inst, &sol.policy, REFERENCE_STATE, 1_000_000, &mut rng);
        assert!((sim - sol.theta).abs() / sol.theta < 0.01, "sim {sim} theta {}", sol.theta);
    }

    #[test]
    fn greedy_policy_is_unichain() {
        let inst = build_instance(one_link(CostWeights::uniform(1, 1.0, 5.0, 0.3))).unwrap();
        let sol = relative_value_iteration(&inst, 1e-9, 100_000).unwrap();
        let policy: Vec<Action> = sol.policy.iter().map(|&a| inst.actions[a].clone()).collect();
        assert_eq!(recurrent_classes(&policy_rows(&inst.config, &policy).unwrap()), 1);
    }

    #[test]
    fn two_closed_classes_are_counted() {
        let rows = vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 0.5), (1, 0.5)]];
        assert_eq!(recurrent_classes(&rows), 2);
    }
}
