use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tiny::{NeighbourPair, TinyInstance};
use crate::error::{ensure, Result};
use crate::experts::TabularPolicy;
use crate::mdp::{Policy, State};
use crate::privacy::{RandomNoise, ReleaseParams};
use crate::release::scan;

/// Largest ensemble the audit will enumerate outputs for.
pub const MAX_AUDIT_EXPERTS: usize = 5;
const CHUNK: usize = 50_000;

/// Dense index over the release outputs of a single scanned trajectory:
/// slot 0 is "nothing released", the rest are the prefixes of length
/// `1..=L` laid out by length.
#[derive(Clone, Debug)]
pub struct OutputSpace {
    n_states: usize,
    n_actions: usize,
    offsets: Vec<usize>,
    size: usize,
}

impl OutputSpace {
    pub fn new(n_states: usize, n_actions: usize, horizon: usize) -> Self {
        let mut offsets = vec![0, 1];
        let mut per = n_states;
        for _ in 1..=horizon {
            per *= n_states * n_actions;
            let last = *offsets.last().unwrap();
            offsets.push(last + per);
        }
        let size = *offsets.last().unwrap();
        Self {
            n_states,
            n_actions,
            offsets,
            size,
        }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Slot of the released prefix `states[..=k]`, `actions[..k]`.
    pub fn key(&self, states: &[State], actions: &[usize], k: usize) -> usize {
        if k == 0 {
            return 0;
        }
        let mut code = states[0].cell().expect("tabular state");
        for j in 0..k {
            let next = states[j + 1].cell().expect("tabular state");
            code = (code * self.n_actions + actions[j]) * self.n_states + next;
        }
        self.offsets[k] + code
    }
}

/// `Σ_o max{P(o) − e^ε Q(o), 0}`, with `e^∞ · 0` read as 0.
pub fn hockey_stick(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let scale = eps.exp();
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let bound = if qi == 0.0 { 0.0 } else { scale * qi };
            (pi - bound).max(0.0)
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub value: f64,
    /// Three standard deviations of `P̂(S) − e^ε Q̂(S)` for the maximising set `S`.
    pub slack: f64,
}

/// Empirical hockey-stick divergence and its Monte-Carlo slack from two
/// histograms with `n` trials each.
pub fn empirical_divergence(p_counts: &[u64], q_counts: &[u64], n: u64, eps: f64) -> Divergence {
    let nf = n as f64;
    let p: Vec<f64> = p_counts.iter().map(|&c| c as f64 / nf).collect();
    let q: Vec<f64> = q_counts.iter().map(|&c| c as f64 / nf).collect();
    let scale = eps.exp();
    let (mut ps, mut qs) = (0.0, 0.0);
    for (&pi, &qi) in p.iter().zip(&q) {
        let bound = if qi == 0.0 { 0.0 } else { scale * qi };
        if pi > bound {
            ps += pi;
            qs += qi;
        }
    }
    let var = if eps.is_finite() {
        ps * (1.0 - ps) + scale * scale * qs * (1.0 - qs)
    } else {
        ps * (1.0 - ps)
    };
    Divergence {
        value: hockey_stick(&p, &q, eps),
        slack: 3.0 * (var / nf).sqrt(),
    }
}

/// Smallest `ε ≥ 0` at which the empirical divergence drops to `delta`,
/// to bisection precision. Saturates at 50.
pub fn epsilon_at(p_counts: &[u64], q_counts: &[u64], n: u64, delta: f64) -> f64 {
    let f = |e: f64| empirical_divergence(p_counts, q_counts, n, e).value;
    if f(0.0) <= delta {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 50.0);
    if f(hi) > delta {
        return hi;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Output histogram of the single-trajectory release on `experts`.
pub fn release_histogram<P: Policy + Sync>(
    inst: &TinyInstance,
    experts: &[P],
    params: &ReleaseParams,
    trials: usize,
    seed: u64,
) -> Result<Vec<u64>> {
    ensure!(!experts.is_empty(), InvalidParameter, "ensemble is empty");
    ensure!(
        params.t == 1 && params.l == inst.horizon,
        InvalidParameter,
        "audit runs one trajectory of horizon {}",
        inst.horizon
    );
    let space = OutputSpace::new(inst.mdp.n_states(), inst.mdp.n_actions(), inst.horizon);
    let chunks = trials.div_ceil(CHUNK);
    let hist = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = CHUNK.min(trials - c * CHUNK);
            let mut rng = crate::rng::stream(seed, "audit", &[c as u64]);
            let mut hist = vec![0u64; space.len()];
            let mut states = Vec::with_capacity(inst.horizon + 1);
            let mut actions = Vec::with_capacity(inst.horizon);
            for _ in 0..n {
                states.clear();
                actions.clear();
                let expert = &experts[rng.random_range(0..experts.len())];
                let mut s = inst.mdp.sample_initial(&mut rng);
                states.push(State::Cell(s));
                for _ in 0..inst.horizon {
                    let a = expert.sample_action(&State::Cell(s), &mut rng);
                    s = inst.mdp.sample_next(s, a, &mut rng);
                    actions.push(a);
                    states.push(State::Cell(s));
                }
                let k = scan(experts, &states, &actions, params, &mut RandomNoise(&mut rng));
                hist[space.key(&states, &actions, k)] += 1;
            }
            hist
        })
        .reduce(
            || vec![0u64; space.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(hist)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub eps: f64,
    pub claimed_delta: f64,
    /// Worse of the two orientations.
    pub divergence: f64,
    pub slack: f64,
    pub eps_hat: f64,
    pub trials: usize,
    pub holds: bool,
}

/// Audits one neighbour pair: `trials` releases per side, hockey-stick
/// divergence at `2ε′` in both directions against `δ1 / (2T)`.
pub fn empirical_dp_audit(
    inst: &TinyInstance,
    pair: &NeighbourPair<TabularPolicy>,
    params: &ReleaseParams,
    trials: usize,
    seed: u64,
) -> Result<AuditResult> {
    ensure!(
        inst.mdp.n_actions() == 2 && inst.horizon <= 2 && pair.large.len() <= MAX_AUDIT_EXPERTS && params.t == 1,
        InvalidParameter,
        "audit needs |A| = 2, L <= 2, m <= {MAX_AUDIT_EXPERTS} and T = 1"
    );
    ensure!(trials >= 1, InvalidParameter, "need at least one trial");
    let big = release_histogram(inst, &pair.large, params, trials, crate::rng::derive_seed(seed, "side", &[0]))?;
    let small = release_histogram(inst, &pair.small, params, trials, crate::rng::derive_seed(seed, "side", &[1]))?;
    let eps = 2.0 * params.eps_prime;
    let claimed = params.delta1 / (2.0 * params.t as f64);
    let n = trials as u64;
    let fwd = empirical_divergence(&big, &small, n, eps);
    let bwd = empirical_divergence(&small, &big, n, eps);
    let worst = if fwd.value - fwd.slack >= bwd.value - bwd.slack { fwd } else { bwd };
    let eps_hat = epsilon_at(&big, &small, n, claimed).max(epsilon_at(&small, &big, n, claimed));
    Ok(AuditResult {
        eps,
        claimed_delta: claimed,
        divergence: worst.value,
        slack: worst.slack,
        eps_hat,
        trials,
        holds: fwd.value <= claimed + fwd.slack && bwd.value <= claimed + bwd.slack,
    })
}

/// Same-ensemble audit, which has divergence 0 up to sampling error.
pub fn self_pair(experts: Vec<TabularPolicy>) -> NeighbourPair<TabularPolicy> {
    NeighbourPair {
        small: experts.clone(),
        large: experts,
        removed: usize::MAX,
    }
}
