use serde::{Deserialize, Serialize};

use super::{Policy, State, TabularMdp};
use crate::error::{ensure, Error, Result};

pub const MAX_SWEEPS: usize = 100_000;

/// Optimal action values for a tabular MDP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    /// Indexed by `s * n_actions + a`.
    pub q: Vec<f64>,
    pub residual: f64,
    pub sweeps: usize,
}

impl QTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn value(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action per state, ties to the lowest index.
    pub fn greedy(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| argmax(self.row(s))).collect()
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn backup(mdp: &TabularMdp, gamma: f64, values: &[f64], s: usize, a: usize) -> f64 {
    let r = mdp.reward(s, a);
    if mdp.terminates(s, a) {
        return r;
    }
    r + gamma * mdp.row(s, a).iter().map(|&(n, p)| p * values[n]).sum::<f64>()
}

/// Jacobi value iteration until the sup-norm Bellman residual is at most `tol`.
pub fn value_iteration(mdp: &TabularMdp, gamma: f64, tol: f64) -> Result<QTable> {
    ensure!(tol > 0.0, InvalidParameter, "tolerance must be positive");
    ensure!((0.0..=1.0).contains(&gamma), InvalidParameter, "gamma must lie in [0, 1]");
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = vec![0.0; ns * na];
    let mut values = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        let mut next = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                next[s * na + a] = backup(mdp, gamma, &values, s, a);
            }
        }
        residual = next
            .iter()
            .zip(&q)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        q = next;
        for (s, v) in values.iter_mut().enumerate() {
            *v = q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok(QTable {
                n_states: ns,
                n_actions: na,
                q,
                residual,
                sweeps: sweep,
            });
        }
    }
    Err(Error::NonConvergence {
        sweeps: MAX_SWEEPS,
        residual,
    })
}

/// `V_h(s)` for `h = horizon` under `policy`: expected discounted reward over
/// the next `horizon` steps, by backward induction.
pub fn finite_horizon_values<P: Policy>(mdp: &TabularMdp, policy: &P, gamma: f64, horizon: usize) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; ns];
    for _ in 0..horizon {
        let mut next = vec![0.0; ns];
        for (s, slot) in next.iter_mut().enumerate() {
            let state = State::Cell(s);
            *slot = (0..na)
                .map(|a| policy.action_prob(&state, a) * backup(mdp, gamma, &v, s, a))
                .sum();
        }
        v = next;
    }
    v
}

/// Exact expected discounted return of a `horizon`-step episode from ρ0.
pub fn expected_return<P: Policy>(mdp: &TabularMdp, policy: &P, gamma: f64, horizon: usize) -> f64 {
    let v = finite_horizon_values(mdp, policy, gamma, horizon);
    mdp.initial().iter().zip(&v).map(|(p, x)| p * x).sum()
}
