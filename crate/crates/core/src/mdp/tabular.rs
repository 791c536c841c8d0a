use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Finite MDP with explicit transition rows.
///
/// A `(state, action)` pair either has a transition row over the finite state
/// set, or is flagged terminal, in which case the episode moves to the
/// designated absorbing state (which lives outside the table).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Indexed by `s * n_actions + a`.
    transitions: Vec<Vec<(usize, f64)>>,
    rewards: Vec<f64>,
    terminal: Vec<bool>,
    initial: Vec<f64>,
}

const ROW_TOL: f64 = 1e-12;

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        rewards: Vec<f64>,
        terminal: Vec<bool>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        ensure!(n_states >= 1, InvalidParameter, "tabular MDP needs at least one state");
        ensure!(n_actions >= 2, InvalidParameter, "action space must have at least two actions, got {n_actions}");
        let pairs = n_states * n_actions;
        ensure!(
            transitions.len() == pairs && rewards.len() == pairs && terminal.len() == pairs,
            InvalidParameter,
            "expected {pairs} (state, action) rows"
        );
        ensure!(initial.len() == n_states, InvalidParameter, "initial distribution has wrong length");
        for (idx, row) in transitions.iter().enumerate() {
            if terminal[idx] {
                ensure!(row.is_empty(), InvalidParameter, "terminal pair {idx} must not carry a transition row");
                continue;
            }
            let mut total = 0.0;
            for &(next, p) in row {
                ensure!(next < n_states, InvalidParameter, "row {idx} points at unknown state {next}");
                ensure!(p >= 0.0, InvalidParameter, "row {idx} has negative probability");
                total += p;
            }
            ensure!((total - 1.0).abs() <= ROW_TOL, InvalidParameter, "row {idx} sums to {total}");
        }
        let mass: f64 = initial.iter().sum();
        ensure!(
            initial.iter().all(|p| *p >= 0.0) && (mass - 1.0).abs() <= ROW_TOL,
            InvalidParameter,
            "initial distribution sums to {mass}"
        );
        ensure!(rewards.iter().all(|r| r.is_finite()), InvalidParameter, "rewards must be finite");
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            terminal,
            initial,
        })
    }

    /// Two-action chain: action 0 moves left, action 1 moves right (clamped at
    /// the ends); with probability `slip` the move goes the other way. Acting
    /// in the last state pays 1, everything else pays 0. Starts in state 0.
    pub fn chain(n_states: usize, slip: f64) -> Result<Self> {
        ensure!((0.0..=1.0).contains(&slip), InvalidParameter, "slip must lie in [0, 1]");
        let mut transitions = Vec::with_capacity(n_states * 2);
        let mut rewards = Vec::with_capacity(n_states * 2);
        for s in 0..n_states {
            let left = s.saturating_sub(1);
            let right = (s + 1).min(n_states - 1);
            for a in 0..2 {
                let (want, other) = if a == 1 { (right, left) } else { (left, right) };
                transitions.push(merge_row(vec![(want, 1.0 - slip), (other, slip)]));
                rewards.push(if s + 1 == n_states { 1.0 } else { 0.0 });
            }
        }
        let mut initial = vec![0.0; n_states];
        initial[0] = 1.0;
        Self::new(n_states, 2, transitions, rewards, vec![false; n_states * 2], initial)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions + a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn terminates(&self, s: usize, a: usize) -> bool {
        self.terminal[s * self.n_actions + a]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// P(next | s, a); `None` stands for the absorbing state.
    pub fn prob(&self, s: usize, a: usize, next: Option<usize>) -> f64 {
        match (self.terminates(s, a), next) {
            (true, None) => 1.0,
            (true, Some(_)) | (false, None) => 0.0,
            (false, Some(n)) => self
                .row(s, a)
                .iter()
                .filter(|(t, _)| *t == n)
                .map(|(_, p)| p)
                .sum(),
        }
    }

    pub(crate) fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(self.initial.iter().copied().enumerate(), rng)
    }

    pub(crate) fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_index(self.row(s, a).iter().copied(), rng)
    }
}

fn sample_index<R: Rng + ?Sized>(items: impl Iterator<Item = (usize, f64)>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (idx, p) in items {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = idx;
        if u < acc {
            return idx;
        }
    }
    last
}

fn merge_row(entries: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let mut row: Vec<(usize, f64)> = Vec::new();
    for (s, p) in entries {
        if p == 0.0 {
            continue;
        }
        match row.iter_mut().find(|(t, _)| *t == s) {
            Some(slot) => slot.1 += p,
            None => row.push((s, p)),
        }
    }
    row.sort_by_key(|(s, _)| *s);
    row
}

/// Cliff-walk gridworld on a `size × size` board.
///
/// The agent starts in the bottom-left corner; the goal is the bottom-right
/// corner and the cells between them on the bottom row are a cliff. Acting in
/// the goal pays `goal_reward` and ends the episode; acting in a cliff cell
/// pays `cliff_reward` and ends it. Every other action pays `step_reward`.
/// Moves go in the intended direction with probability `1 - slip`, otherwise
/// in one of the three other directions uniformly. Moving off the board leaves
/// the agent in place.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gridworld {
    pub size: usize,
    pub slip: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub cliff_reward: f64,
}

impl Default for Gridworld {
    fn default() -> Self {
        Self {
            size: 8,
            slip: 0.1,
            step_reward: 0.0,
            goal_reward: 1.0,
            cliff_reward: -1.0,
        }
    }
}

pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

impl Gridworld {
    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.size + col
    }

    pub fn start(&self) -> usize {
        self.cell(self.size - 1, 0)
    }

    pub fn goal(&self) -> usize {
        self.cell(self.size - 1, self.size - 1)
    }

    pub fn is_cliff(&self, cell: usize) -> bool {
        let (row, col) = (cell / self.size, cell % self.size);
        row == self.size - 1 && col > 0 && col < self.size - 1
    }

    fn shift(&self, cell: usize, dir: usize) -> usize {
        let (row, col) = (cell / self.size, cell % self.size);
        let (r, c) = match dir {
            UP => (row.saturating_sub(1), col),
            RIGHT => (row, (col + 1).min(self.size - 1)),
            DOWN => ((row + 1).min(self.size - 1), col),
            _ => (row, col.saturating_sub(1)),
        };
        self.cell(r, c)
    }

    pub fn build(&self) -> Result<TabularMdp> {
        ensure!(self.size >= 3, InvalidParameter, "gridworld needs size >= 3");
        ensure!((0.0..=1.0).contains(&self.slip), InvalidParameter, "slip must lie in [0, 1], got {}", self.slip);
        let n = self.size * self.size;
        let mut transitions = Vec::with_capacity(n * 4);
        let mut rewards = Vec::with_capacity(n * 4);
        let mut terminal = Vec::with_capacity(n * 4);
        for cell in 0..n {
            let exit = if cell == self.goal() {
                Some(self.goal_reward)
            } else if self.is_cliff(cell) {
                Some(self.cliff_reward)
            } else {
                None
            };
            for a in 0..4 {
                match exit {
                    Some(r) => {
                        transitions.push(Vec::new());
                        rewards.push(r);
                        terminal.push(true);
                    }
                    None => {
                        let row = (0..4)
                            .map(|dir| {
                                let p = if dir == a { 1.0 - self.slip } else { self.slip / 3.0 };
                                (self.shift(cell, dir), p)
                            })
                            .collect();
                        transitions.push(merge_row(row));
                        rewards.push(self.step_reward);
                        terminal.push(false);
                    }
                }
            }
        }
        let mut initial = vec![0.0; n];
        initial[self.start()] = 1.0;
        TabularMdp::new(n, 4, transitions, rewards, terminal, initial)
    }
}
