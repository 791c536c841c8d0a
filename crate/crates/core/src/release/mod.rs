//! Stable-prefix release: prefix counts, the noisy threshold query and the
//! split of a demonstration corpus into public prefixes and private
//! remainders.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::io;
use crate::mdp::{segment_transitions, Policy, Prefix, State, Trajectory, Transition};
use crate::privacy::{check_release_budget, BudgetLedger, NoiseSource, RandomNoise, ReleaseParams};

/// `Σ_i Π_j π_i(a_j | s_j)` over the steps of `prefix`.
pub fn count_prefix<P: Policy>(experts: &[P], prefix: Prefix<'_>) -> f64 {
    experts
        .iter()
        .map(|e| prefix.steps().fold(1.0, |acc, (s, a)| acc * e.action_prob(s, a)))
        .sum()
}

/// Running prefix counts: element `k - 1` is the count of the length-`k` prefix.
pub fn prefix_counts<P: Policy>(experts: &[P], states: &[State], actions: &[usize]) -> Vec<f64> {
    let mut products = vec![1.0; experts.len()];
    let mut out = Vec::with_capacity(actions.len());
    for (s, &a) in states.iter().zip(actions) {
        for (p, e) in products.iter_mut().zip(experts) {
            *p *= e.action_prob(s, a);
        }
        out.push(products.iter().sum());
    }
    out
}

/// Noisy threshold test: `count + Lap(4/ε′) > θ̂`.
pub fn noisy_above<N: NoiseSource + ?Sized>(count: f64, theta_hat: f64, eps_prime: f64, noise: &mut N) -> bool {
    count + noise.laplace(4.0 / eps_prime) > theta_hat
}

/// `true` (stable) iff the noisy count of `prefix` exceeds `theta_hat`.
pub fn prefix_query<P: Policy, N: NoiseSource + ?Sized>(
    experts: &[P],
    prefix: Prefix<'_>,
    theta_hat: f64,
    eps_prime: f64,
    noise: &mut N,
) -> bool {
    noisy_above(count_prefix(experts, prefix), theta_hat, eps_prime, noise)
}

/// Draws `θ̂ = θ + (4/ε′) ln(1/δ′) + Lap(2/ε′)`.
pub fn draw_threshold<N: NoiseSource + ?Sized>(params: &ReleaseParams, noise: &mut N) -> f64 {
    params.theta + params.threshold_shift() + noise.laplace(params.threshold_scale())
}

/// Scans one trajectory with a fresh threshold and returns the released
/// prefix length: `L` if every query passes, `i - 1` at the first failure
/// `i` (so 0 means nothing is released).
pub fn scan<P: Policy, N: NoiseSource + ?Sized>(
    experts: &[P],
    states: &[State],
    actions: &[usize],
    params: &ReleaseParams,
    noise: &mut N,
) -> usize {
    let theta_hat = draw_threshold(params, noise);
    let mut products = vec![1.0; experts.len()];
    for (i, (s, &a)) in states.iter().zip(actions).enumerate() {
        for (p, e) in products.iter_mut().zip(experts) {
            *p *= e.action_prob(s, a);
        }
        let count: f64 = products.iter().sum();
        if !noisy_above(count, theta_hat, params.eps_prime, noise) {
            return i;
        }
    }
    actions.len()
}

/// A released public prefix. Carries no expert attribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableRecord {
    /// Position of the source trajectory in the shuffled order.
    pub source_id: usize,
    pub cut_index: usize,
    pub states: Vec<State>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// A private remainder: the suffix after the released prefix, or a whole
/// trajectory. `cut_index` is the step offset at which it starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnstableRecord {
    pub source_id: usize,
    pub cut_index: usize,
    pub states: Vec<State>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub expert_id: usize,
}

impl StableRecord {
    pub fn transitions(&self) -> Vec<Transition> {
        segment_transitions(&self.states, &self.actions, &self.rewards)
    }
}

impl UnstableRecord {
    pub fn transitions(&self) -> Vec<Transition> {
        segment_transitions(&self.states, &self.actions, &self.rewards)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReleaseHeader {
    pub params: Option<ReleaseParams>,
    pub composed: (f64, f64),
    pub consumed: (f64, f64),
    pub processed: usize,
    pub corpus: usize,
    pub stable_records: usize,
    pub unstable_records: usize,
    /// Released prefix length per processed trajectory, in shuffle order.
    pub cuts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReleasedData {
    pub header: ReleaseHeader,
    pub stable: Vec<StableRecord>,
    pub unstable: Vec<UnstableRecord>,
}

pub const STABLE_FILE: &str = "stable.jsonl";
pub const UNSTABLE_FILE: &str = "unstable.jsonl";
pub const RELEASE_HEADER: &str = "release.json";

impl ReleasedData {
    pub fn stable_transitions(&self) -> Vec<Transition> {
        self.stable.iter().flat_map(StableRecord::transitions).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_jsonl(&dir.join(STABLE_FILE), &self.stable)?;
        io::write_jsonl(&dir.join(UNSTABLE_FILE), &self.unstable)?;
        io::write_json(&dir.join(RELEASE_HEADER), &self.header)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            header: io::read_json(&dir.join(RELEASE_HEADER))?,
            stable: io::read_jsonl(&dir.join(STABLE_FILE))?,
            unstable: io::read_jsonl(&dir.join(UNSTABLE_FILE))?,
        })
    }

    /// Everything goes to the private side; used when the split gives the
    /// release no budget.
    pub fn all_private(trajectories: &[Trajectory]) -> Self {
        let unstable: Vec<UnstableRecord> = trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| whole(i, t))
            .collect();
        Self {
            header: ReleaseHeader {
                params: None,
                composed: (0.0, 0.0),
                consumed: (0.0, 0.0),
                processed: 0,
                corpus: trajectories.len(),
                stable_records: 0,
                unstable_records: unstable.len(),
                cuts: Vec::new(),
            },
            stable: Vec::new(),
            unstable,
        }
    }
}

fn whole(source_id: usize, t: &Trajectory) -> UnstableRecord {
    UnstableRecord {
        source_id,
        cut_index: 0,
        states: t.states.clone(),
        actions: t.actions.clone(),
        rewards: t.rewards.clone(),
        expert_id: t.expert_id,
    }
}

/// The release mechanism with an explicit noise source and without budget
/// checks. `shuffle` reorders the corpus; `noise` feeds every query.
pub fn release_with_noise<P: Policy, R: Rng + ?Sized, N: NoiseSource + ?Sized>(
    trajectories: &[Trajectory],
    experts: &[P],
    params: &ReleaseParams,
    shuffle: &mut R,
    noise: &mut N,
) -> Result<ReleasedData> {
    ensure!(
        params.t <= trajectories.len(),
        InvalidParameter,
        "T = {} exceeds the corpus size {}",
        params.t,
        trajectories.len()
    );
    ensure!(
        trajectories.iter().all(|t| t.horizon() == params.l),
        InvalidParameter,
        "every trajectory must have horizon {}",
        params.l
    );
    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    order.shuffle(shuffle);
    let mut stable = Vec::new();
    let mut unstable = Vec::new();
    let mut cuts = Vec::with_capacity(params.t);
    for (pos, &idx) in order.iter().enumerate() {
        let t = &trajectories[idx];
        if pos >= params.t {
            unstable.push(whole(pos, t));
            continue;
        }
        let k = scan(experts, &t.states, &t.actions, params, noise);
        cuts.push(k);
        if k == 0 {
            unstable.push(whole(pos, t));
            continue;
        }
        stable.push(StableRecord {
            source_id: pos,
            cut_index: k,
            states: t.states[..=k].to_vec(),
            actions: t.actions[..k].to_vec(),
            rewards: t.rewards[..k].to_vec(),
        });
        if k < params.l {
            unstable.push(UnstableRecord {
                source_id: pos,
                cut_index: k,
                states: t.states[k..].to_vec(),
                actions: t.actions[k..].to_vec(),
                rewards: t.rewards[k..].to_vec(),
                expert_id: t.expert_id,
            });
        }
    }
    Ok(ReleasedData {
        header: ReleaseHeader {
            params: Some(*params),
            composed: (0.0, 0.0),
            consumed: (0.0, 0.0),
            processed: cuts.len(),
            corpus: trajectories.len(),
            stable_records: stable.len(),
            unstable_records: unstable.len(),
            cuts,
        },
        stable,
        unstable,
    })
}

/// Runs the release with Laplace noise from `rng`, after checking that the
/// parameters compose within `(ε1, δ1)`, and charges the ledger.
pub fn data_release<P: Policy, R: Rng + ?Sized>(
    trajectories: &[Trajectory],
    experts: &[P],
    params: &ReleaseParams,
    rng: &mut R,
    ledger: &mut BudgetLedger,
) -> Result<ReleasedData> {
    let composed = check_release_budget(params)?;
    ensure!(
        params.eps1 <= ledger.eps1 && params.delta1 <= ledger.delta1,
        BudgetViolation,
        "release parameters ask for more than the ledger's release share"
    );
    let mut shuffle = crate::rng::seeded(rng.random());
    let mut noise = RandomNoise(rng);
    let mut out = release_with_noise(trajectories, experts, params, &mut shuffle, &mut noise)?;
    ledger.charge(
        "data_release",
        serde_json::to_value(params)?,
        params.eps1,
        params.delta1,
    )?;
    out.header.composed = composed;
    out.header.consumed = (params.eps1, params.delta1);
    Ok(out)
}

#[cfg(test)]
mod tests;
