//! Environments, trajectories and exact planning.
//!
//! Every episode is padded to a fixed horizon: once the environment
//! terminates, the remaining steps sit in [`State::Absorbing`] with action
//! [`PAD_ACTION`] and zero reward.

mod cartpole;
mod planning;
mod tabular;
mod trajectory;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cartpole::{BoxGrid, CartPole, NO_FORCE, PUSH_LEFT, PUSH_RIGHT};
pub(crate) use planning::argmax;
pub use planning::{expected_return, finite_horizon_values, value_iteration, QTable, MAX_SWEEPS};
pub use tabular::{Gridworld, TabularMdp, DOWN, LEFT, RIGHT, UP};
pub(crate) use trajectory::segment_transitions;
pub use trajectory::{rollout, Prefix, Trajectory, Transition};

use crate::error::{ensure, Error, Result};

/// Action recorded on padded steps.
pub const PAD_ACTION: usize = 0;

/// Named perturbation parameters, e.g. `slip` or `gravity`.
pub type Perturbation = BTreeMap<String, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum State {
    Cell(usize),
    Point([f64; 4]),
    /// Post-termination sink; serialized as `null`.
    Absorbing,
}

impl State {
    pub fn is_absorbing(&self) -> bool {
        matches!(self, State::Absorbing)
    }

    pub fn cell(&self) -> Option<usize> {
        match self {
            State::Cell(c) => Some(*c),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Dynamics {
    Tabular(TabularMdp),
    CartPole(CartPole),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Tabular,
    CartPole,
}

/// An MDP together with its discount and fixed data horizon.
#[derive(Clone, Debug)]
pub struct EnvModel {
    dynamics: Dynamics,
    gamma: f64,
    horizon: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: State,
    pub reward: f64,
    pub terminal: bool,
}

impl EnvModel {
    pub fn new(dynamics: Dynamics, gamma: f64, horizon: usize) -> Result<Self> {
        ensure!((0.0..=1.0).contains(&gamma), InvalidParameter, "gamma must lie in [0, 1], got {gamma}");
        ensure!(horizon >= 1, InvalidParameter, "horizon must be positive");
        Ok(Self {
            dynamics,
            gamma,
            horizon,
        })
    }

    pub fn tabular(mdp: TabularMdp, gamma: f64, horizon: usize) -> Result<Self> {
        Self::new(Dynamics::Tabular(mdp), gamma, horizon)
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn as_tabular(&self) -> Option<&TabularMdp> {
        match &self.dynamics {
            Dynamics::Tabular(m) => Some(m),
            Dynamics::CartPole(_) => None,
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self.dynamics {
            Dynamics::Tabular(_) => EnvKind::Tabular,
            Dynamics::CartPole(_) => EnvKind::CartPole,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Self::new(self.dynamics.clone(), self.gamma, horizon)
    }

    pub fn action_count(&self) -> usize {
        match &self.dynamics {
            Dynamics::Tabular(m) => m.n_actions(),
            Dynamics::CartPole(_) => CartPole::ACTIONS,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        match &self.dynamics {
            Dynamics::Tabular(m) => State::Cell(m.sample_initial(rng)),
            Dynamics::CartPole(c) => State::Point(c.reset(rng)),
        }
    }

    pub fn reset_seeded(&self, seed: u64) -> State {
        self.reset(&mut crate::rng::seeded(seed))
    }

    pub fn step<R: Rng + ?Sized>(&self, s: &State, a: usize, rng: &mut R) -> Result<StepOutcome> {
        ensure!(
            a < self.action_count(),
            ContractViolation,
            "action {a} out of range for {} actions",
            self.action_count()
        );
        match (&self.dynamics, s) {
            (_, State::Absorbing) => Ok(StepOutcome {
                next: State::Absorbing,
                reward: 0.0,
                terminal: true,
            }),
            (Dynamics::Tabular(m), State::Cell(c)) => {
                ensure!(*c < m.n_states(), ContractViolation, "state {c} out of range");
                let reward = m.reward(*c, a);
                if m.terminates(*c, a) {
                    Ok(StepOutcome {
                        next: State::Absorbing,
                        reward,
                        terminal: true,
                    })
                } else {
                    Ok(StepOutcome {
                        next: State::Cell(m.sample_next(*c, a, rng)),
                        reward,
                        terminal: false,
                    })
                }
            }
            (Dynamics::CartPole(cp), State::Point(p)) => {
                let (next, failed) = cp.integrate(*p, a);
                Ok(StepOutcome {
                    next: if failed { State::Absorbing } else { State::Point(next) },
                    reward: 1.0,
                    terminal: failed,
                })
            }
            _ => Err(Error::ContractViolation(format!("state {s:?} does not belong to this environment"))),
        }
    }

    /// Network input width for [`EnvModel::features`].
    pub fn feature_dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::Tabular(m) => m.n_states() + 1,
            Dynamics::CartPole(_) => 5,
        }
    }

    /// One-hot encoding for tabular states (plus an absorbing slot); scaled
    /// coordinates plus an absorbing flag for cart-pole.
    pub fn features(&self, s: &State) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim()];
        match (&self.dynamics, s) {
            (_, State::Absorbing) => *out.last_mut().unwrap() = 1.0,
            (Dynamics::Tabular(_), State::Cell(c)) => out[*c] = 1.0,
            (Dynamics::CartPole(cp), State::Point(p)) => {
                out[0] = p[0] / cp.x_limit;
                out[1] = p[1];
                out[2] = p[2] / cp.theta_limit;
                out[3] = p[3];
            }
            _ => {}
        }
        out
    }
}

/// Serializable environment description used in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    Gridworld {
        #[serde(default = "default_grid_size")]
        size: usize,
        #[serde(default = "default_slip")]
        slip: f64,
        #[serde(default)]
        step_reward: f64,
        #[serde(default = "default_grid_gamma")]
        gamma: f64,
        #[serde(default = "default_grid_horizon")]
        horizon: usize,
    },
    CartPole {
        #[serde(default = "default_gravity")]
        gravity: f64,
        #[serde(default = "default_force")]
        force_mag: f64,
        #[serde(default = "default_cart_mass")]
        cart_mass: f64,
        #[serde(default = "default_pole_gamma")]
        gamma: f64,
        #[serde(default = "default_pole_horizon")]
        horizon: usize,
    },
}

fn default_grid_size() -> usize {
    8
}
fn default_slip() -> f64 {
    0.1
}
fn default_grid_gamma() -> f64 {
    0.95
}
fn default_grid_horizon() -> usize {
    32
}
fn default_gravity() -> f64 {
    9.8
}
fn default_force() -> f64 {
    10.0
}
fn default_cart_mass() -> f64 {
    1.0
}
fn default_pole_gamma() -> f64 {
    0.99
}
fn default_pole_horizon() -> usize {
    200
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Gridworld {
            size: default_grid_size(),
            slip: default_slip(),
            step_reward: 0.0,
            gamma: default_grid_gamma(),
            horizon: default_grid_horizon(),
        }
    }
}

impl EnvSpec {
    pub fn horizon(&self) -> usize {
        match self {
            EnvSpec::Gridworld { horizon, .. } | EnvSpec::CartPole { horizon, .. } => *horizon,
        }
    }

    pub fn build(&self) -> Result<EnvModel> {
        match self {
            EnvSpec::Gridworld {
                size,
                slip,
                step_reward,
                gamma,
                horizon,
            } => {
                let grid = Gridworld {
                    size: *size,
                    slip: *slip,
                    step_reward: *step_reward,
                    ..Gridworld::default()
                };
                EnvModel::tabular(grid.build()?, *gamma, *horizon)
            }
            EnvSpec::CartPole {
                gravity,
                force_mag,
                cart_mass,
                gamma,
                horizon,
            } => {
                ensure!(
                    *gravity > 0.0 && *force_mag > 0.0 && *cart_mass > 0.0,
                    InvalidParameter,
                    "cart-pole parameters must be positive"
                );
                let cp = CartPole {
                    gravity: *gravity,
                    force_mag: *force_mag,
                    cart_mass: *cart_mass,
                    ..CartPole::default()
                };
                EnvModel::new(Dynamics::CartPole(cp), *gamma, *horizon)
            }
        }
    }

    /// Overrides named parameters. Unknown names are rejected.
    pub fn perturbed(&self, perturbation: &Perturbation) -> Result<EnvSpec> {
        let mut out = self.clone();
        for (name, value) in perturbation {
            let slot = match (&mut out, name.as_str()) {
                (EnvSpec::Gridworld { slip, .. }, "slip") => slip,
                (EnvSpec::Gridworld { step_reward, .. }, "step_reward") => step_reward,
                (EnvSpec::CartPole { gravity, .. }, "gravity") => gravity,
                (EnvSpec::CartPole { force_mag, .. }, "force_mag") => force_mag,
                (EnvSpec::CartPole { cart_mass, .. }, "cart_mass") => cart_mass,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown perturbation parameter `{name}` for this environment"
                    )))
                }
            };
            *slot = *value;
        }
        Ok(out)
    }
}

/// A stochastic policy over a discrete action set.
pub trait Policy {
    fn action_count(&self) -> usize;

    fn action_prob(&self, s: &State, a: usize) -> f64;

    fn sample_action<R: Rng + ?Sized>(&self, s: &State, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let n = self.action_count();
        for a in 0..n {
            acc += self.action_prob(s, a);
            if u < acc {
                return a;
            }
        }
        n - 1
    }
}

/// Deterministic policy from a per-cell action table; absorbing maps to [`PAD_ACTION`].
#[derive(Clone, Debug)]
pub struct TablePolicy {
    pub actions: Vec<usize>,
    pub n_actions: usize,
}

impl Policy for TablePolicy {
    fn action_count(&self) -> usize {
        self.n_actions
    }

    fn action_prob(&self, s: &State, a: usize) -> f64 {
        let chosen = s.cell().map_or(PAD_ACTION, |c| self.actions[c]);
        if a == chosen {
            1.0
        } else {
            0.0
        }
    }
}

/// Uniform random policy.
#[derive(Clone, Copy, Debug)]
pub struct UniformPolicy(pub usize);

impl Policy for UniformPolicy {
    fn action_count(&self) -> usize {
        self.0
    }

    fn action_prob(&self, _s: &State, _a: usize) -> f64 {
        1.0 / self.0 as f64
    }
}
