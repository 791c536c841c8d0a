use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvModel, Policy, State, PAD_ACTION};
use crate::error::{ensure, Result};

/// One `(s, a, r, s')` tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: State,
    pub a: usize,
    pub r: f64,
    pub s_next: State,
    pub terminal: bool,
}

/// A fixed-horizon episode: `L` actions and rewards, `L + 1` states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub expert_id: usize,
    pub states: Vec<State>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// Borrowed view of the first `k` steps of a trajectory (plus state `k + 1`).
#[derive(Clone, Copy, Debug)]
pub struct Prefix<'a> {
    pub states: &'a [State],
    pub actions: &'a [usize],
}

impl<'a> Prefix<'a> {
    pub fn new(states: &'a [State], actions: &'a [usize]) -> Self {
        debug_assert!(states.len() >= actions.len());
        Self { states, actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn steps(&self) -> impl Iterator<Item = (&'a State, usize)> + 'a {
        self.states.iter().zip(self.actions.iter().copied())
    }
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn trailing_state(&self) -> &State {
        self.states.last().expect("trajectory has a trailing state")
    }

    /// Steps `1..=k` and the state that follows them.
    pub fn prefix(&self, k: usize) -> Prefix<'_> {
        assert!(k <= self.horizon(), "prefix length {k} exceeds horizon {}", self.horizon());
        Prefix::new(&self.states[..=k], &self.actions[..k])
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        discounted(&self.rewards, gamma)
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Transitions that start outside the absorbing state.
    pub fn transitions(&self) -> Vec<Transition> {
        segment_transitions(&self.states, &self.actions, &self.rewards)
    }

    pub fn validate(&self, horizon: usize, action_count: usize) -> Result<()> {
        ensure!(
            self.actions.len() == horizon && self.rewards.len() == horizon && self.states.len() == horizon + 1,
            ContractViolation,
            "trajectory shape does not match horizon {horizon}"
        );
        ensure!(
            self.actions.iter().all(|&a| a < action_count),
            ContractViolation,
            "trajectory holds an out-of-range action"
        );
        Ok(())
    }
}

pub(crate) fn discounted(rewards: &[f64], gamma: f64) -> f64 {
    let mut g = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += g * r;
        g *= gamma;
    }
    total
}

pub(crate) fn segment_transitions(states: &[State], actions: &[usize], rewards: &[f64]) -> Vec<Transition> {
    (0..actions.len())
        .filter(|&t| !states[t].is_absorbing())
        .map(|t| Transition {
            s: states[t].clone(),
            a: actions[t],
            r: rewards[t],
            s_next: states[t + 1].clone(),
            terminal: states[t + 1].is_absorbing(),
        })
        .collect()
}

/// Rolls `policy` out for exactly `env.horizon()` steps, padding after termination.
pub fn rollout<P: Policy, R: Rng + ?Sized>(
    env: &EnvModel,
    policy: &P,
    expert_id: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    ensure!(
        policy.action_count() == env.action_count(),
        ContractViolation,
        "policy has {} actions, environment has {}",
        policy.action_count(),
        env.action_count()
    );
    let horizon = env.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut s = env.reset(rng);
    for _ in 0..horizon {
        if s.is_absorbing() {
            states.push(State::Absorbing);
            actions.push(PAD_ACTION);
            rewards.push(0.0);
            continue;
        }
        let a = policy.sample_action(&s, rng);
        let out = env.step(&s, a, rng)?;
        states.push(std::mem::replace(&mut s, out.next));
        actions.push(a);
        rewards.push(out.reward);
    }
    states.push(s);
    Ok(Trajectory {
        expert_id,
        states,
        actions,
        rewards,
    })
}
