use serde::{Deserialize, Serialize};

use super::net::QNet;
use crate::error::{ensure, Result};
use crate::mdp::{EnvModel, Transition};

/// A transition with its states already encoded as network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatTransition {
    pub x: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub x_next: Vec<f64>,
    pub terminal: bool,
}

pub fn featurize(env: &EnvModel, t: &Transition) -> FeatTransition {
    FeatTransition {
        x: env.features(&t.s),
        a: t.a,
        r: t.r,
        x_next: env.features(&t.s_next),
        terminal: t.terminal,
    }
}

/// Validated forward pass.
pub fn q_forward(net: &QNet, x: &[f64]) -> Result<Vec<f64>> {
    ensure!(
        x.len() == net.input_dim(),
        ContractViolation,
        "state has {} features, network expects {}",
        x.len(),
        net.input_dim()
    );
    ensure!(x.iter().all(|v| v.is_finite()), ContractViolation, "state features must be finite");
    Ok(net.forward(x))
}

pub(crate) fn log_sum_exp(q: &[f64]) -> f64 {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + q.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Loss of one transition and its gradient:
/// `½(Q(s,a) − y)² + α(logsumexp Q(s,·) − Q(s,a))` with
/// `y = r + γ (1 − done) max Q_target(s′,·)` treated as a constant.
pub fn cql_example(net: &QNet, target: &QNet, t: &FeatTransition, alpha: f64, gamma: f64) -> (f64, Vec<f64>) {
    let (q, cache) = net.forward_cached(&t.x);
    let bootstrap = if t.terminal {
        0.0
    } else {
        target.forward(&t.x_next).into_iter().fold(f64::NEG_INFINITY, f64::max)
    };
    let y = t.r + gamma * bootstrap;
    let td = q[t.a] - y;
    let lse = log_sum_exp(&q);
    let loss = 0.5 * td * td + alpha * (lse - q[t.a]);
    let mut dq: Vec<f64> = q.iter().map(|v| alpha * (v - lse).exp()).collect();
    dq[t.a] += td - alpha;
    (loss, net.backward(&cache, &dq))
}

/// Mean loss over `batch` and the per-example gradients.
pub fn cql_loss_and_grad(
    net: &QNet,
    target: &QNet,
    batch: &[&FeatTransition],
    alpha: f64,
    gamma: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    ensure!(!batch.is_empty(), ContractViolation, "batch is empty");
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for t in batch {
        let (l, g) = cql_example(net, target, t, alpha, gamma);
        total += l;
        grads.push(g);
    }
    Ok((total / batch.len() as f64, grads))
}

/// The conservative penalty `logsumexp Q(s,·) − Q(s,a)` alone.
pub fn cql_penalty(q: &[f64], a: usize) -> f64 {
    log_sum_exp(q) - q[a]
}

pub(crate) fn mean_grad(grads: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; grads[0].len()];
    for g in grads {
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
    let n = grads.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}
