use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::experts::TabularPolicy;
use crate::mdp::{Policy, State, TabularMdp};

/// A small tabular MDP plus a pool of candidate experts with every action
/// probability at least `p_min`.
#[derive(Clone, Debug)]
pub struct TinyInstance {
    pub mdp: TabularMdp,
    pub horizon: usize,
    pub p_min: f64,
    pub pool: Vec<TabularPolicy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TinySpec {
    pub states: usize,
    pub slip: f64,
    pub horizon: usize,
    pub p_min: f64,
    pub pool: usize,
    pub seed: u64,
}

impl Default for TinySpec {
    fn default() -> Self {
        Self {
            states: 3,
            slip: 0.2,
            horizon: 2,
            p_min: 0.45,
            pool: 8,
            seed: 2024,
        }
    }
}

impl TinyInstance {
    /// Two-action chain with `pool` random experts. Each expert's
    /// probability of action 0 is drawn uniformly from `[p_min, 1 - p_min]`.
    pub fn build(spec: &TinySpec) -> Result<Self> {
        ensure!(spec.p_min > 0.0 && spec.p_min < 0.5, InvalidParameter, "p_min must lie in (0, 1/2)");
        ensure!(spec.pool >= 2, InvalidParameter, "need at least two candidate experts");
        let mdp = TabularMdp::chain(spec.states, spec.slip)?;
        let mut r = crate::rng::stream(spec.seed, "tiny-pool", &[]);
        let pool = (0..spec.pool)
            .map(|_| {
                let rows = (0..spec.states)
                    .map(|_| {
                        let p0 = r.random_range(spec.p_min..=1.0 - spec.p_min);
                        vec![p0, 1.0 - p0]
                    })
                    .collect();
                TabularPolicy::new(rows)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mdp,
            horizon: spec.horizon,
            p_min: spec.p_min,
            pool,
        })
    }

    /// All `(states, actions)` prefixes of length `0..=horizon` (states has
    /// one more entry than actions).
    pub fn all_prefixes(&self) -> Vec<(Vec<State>, Vec<usize>)> {
        let (ns, na) = (self.mdp.n_states(), self.mdp.n_actions());
        let mut out = Vec::new();
        let mut frontier: Vec<(Vec<State>, Vec<usize>)> = (0..ns).map(|s| (vec![State::Cell(s)], vec![])).collect();
        for depth in 0..=self.horizon {
            out.extend(frontier.iter().cloned());
            if depth == self.horizon {
                break;
            }
            let mut next = Vec::new();
            for (states, actions) in &frontier {
                for a in 0..na {
                    for s in 0..ns {
                        let mut st = states.clone();
                        st.push(State::Cell(s));
                        let mut ac = actions.clone();
                        ac.push(a);
                        next.push((st, ac));
                    }
                }
            }
            frontier = next;
        }
        out
    }

    /// Exact probability of observing `(states, actions)` as a prefix when
    /// the data generator first picks a uniform expert from `experts`.
    pub fn event_probability<P: Policy>(&self, experts: &[P], states: &[State], actions: &[usize]) -> f64 {
        let s1 = states[0].cell().expect("tabular state");
        let mut dynamics = self.mdp.initial()[s1];
        for (j, &a) in actions.iter().enumerate() {
            let s = states[j].cell().expect("tabular state");
            dynamics *= self.mdp.prob(s, a, states[j + 1].cell());
        }
        let count = crate::release::count_prefix(experts, crate::mdp::Prefix::new(states, actions));
        dynamics * count / experts.len() as f64
    }
}

/// Two ensembles differing in exactly one expert: `small` is `large` with
/// the expert at `removed` taken out.
#[derive(Clone, Debug)]
pub struct NeighbourPair<P> {
    pub large: Vec<P>,
    pub small: Vec<P>,
    pub removed: usize,
}

impl<P: Clone> NeighbourPair<P> {
    pub fn remove(large: Vec<P>, removed: usize) -> Self {
        let mut small = large.clone();
        small.remove(removed);
        Self { large, small, removed }
    }
}

/// Random neighbour pair drawn from `pool`: the larger side has between
/// `2` and `max_size` distinct members.
pub fn random_pair<P: Clone, R: Rng + ?Sized>(pool: &[P], max_size: usize, rng: &mut R) -> NeighbourPair<P> {
    let hi = max_size.min(pool.len());
    let m = rng.random_range(2..=hi);
    let chosen: Vec<P> = sample(rng, pool.len(), m).into_iter().map(|i| pool[i].clone()).collect();
    let removed = rng.random_range(0..m);
    NeighbourPair::remove(chosen, removed)
}
