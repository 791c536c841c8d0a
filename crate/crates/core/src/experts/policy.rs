use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::mdp::{argmax, BoxGrid, Policy, State};

/// Maps environment states onto rows of a policy table. The absorbing state
/// always gets the last row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StateIndexer {
    Tabular { n_states: usize },
    CartPoleBoxes { grid: BoxGrid },
}

impl StateIndexer {
    /// Number of rows, absorbing row included.
    pub fn rows(&self) -> usize {
        match self {
            StateIndexer::Tabular { n_states } => n_states + 1,
            StateIndexer::CartPoleBoxes { grid } => grid.len() + 1,
        }
    }

    pub fn index(&self, s: &State) -> usize {
        match (self, s) {
            (_, State::Absorbing) => self.rows() - 1,
            (StateIndexer::Tabular { n_states }, State::Cell(c)) => {
                assert!(c < n_states, "state {c} outside a {n_states}-state table");
                *c
            }
            (StateIndexer::CartPoleBoxes { grid }, State::Point(p)) => grid.index(p),
            (indexer, state) => panic!("state {state:?} is incompatible with indexer {indexer:?}"),
        }
    }
}

/// A two-level policy: the preferred action gets `1 - (|A| - 1) p_min`,
/// every other action gets exactly `p_min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlooredPolicy {
    pub expert_id: usize,
    pub n_actions: usize,
    pub p_min: f64,
    pub indexer: StateIndexer,
    /// Preferred action per indexer row.
    pub greedy: Vec<usize>,
}

pub(crate) fn check_p_min(p_min: f64, n_actions: usize) -> Result<()> {
    ensure!(n_actions >= 2, InvalidParameter, "need at least two actions, got {n_actions}");
    ensure!(
        p_min > 0.0 && p_min < 1.0 / n_actions as f64,
        InvalidParameter,
        "p_min must lie in (0, 1/{n_actions}), got {p_min}"
    );
    Ok(())
}

/// Floors a tabular preference table (one row of action scores per state).
/// The absorbing row prefers action 0. Ties go to the lowest action index.
pub fn floor_policy(preferences: &[Vec<f64>], p_min: f64, n_actions: usize) -> Result<FlooredPolicy> {
    check_p_min(p_min, n_actions)?;
    ensure!(
        preferences.iter().all(|row| row.len() == n_actions),
        InvalidParameter,
        "every preference row needs {n_actions} entries"
    );
    let greedy: Vec<usize> = preferences.iter().map(|row| argmax(row)).collect();
    FlooredPolicy::from_greedy(
        0,
        greedy,
        StateIndexer::Tabular {
            n_states: preferences.len(),
        },
        p_min,
        n_actions,
    )
}

impl FlooredPolicy {
    /// `greedy` may omit the absorbing row, in which case action 0 is appended.
    pub fn from_greedy(
        expert_id: usize,
        mut greedy: Vec<usize>,
        indexer: StateIndexer,
        p_min: f64,
        n_actions: usize,
    ) -> Result<Self> {
        check_p_min(p_min, n_actions)?;
        if greedy.len() + 1 == indexer.rows() {
            greedy.push(0);
        }
        ensure!(
            greedy.len() == indexer.rows(),
            InvalidParameter,
            "greedy table has {} rows, indexer expects {}",
            greedy.len(),
            indexer.rows()
        );
        ensure!(
            greedy.iter().all(|&a| a < n_actions),
            InvalidParameter,
            "greedy table holds an out-of-range action"
        );
        Ok(Self {
            expert_id,
            n_actions,
            p_min,
            indexer,
            greedy,
        })
    }

    pub fn top_prob(&self) -> f64 {
        1.0 - (self.n_actions - 1) as f64 * self.p_min
    }

    pub fn preferred(&self, s: &State) -> usize {
        self.greedy[self.indexer.index(s)]
    }

    pub fn distribution(&self, s: &State) -> Vec<f64> {
        (0..self.n_actions).map(|a| self.action_prob(s, a)).collect()
    }
}

impl Policy for FlooredPolicy {
    fn action_count(&self) -> usize {
        self.n_actions
    }

    fn action_prob(&self, s: &State, a: usize) -> f64 {
        assert!(a < self.n_actions, "action {a} out of range");
        if a == self.preferred(s) {
            self.top_prob()
        } else {
            self.p_min
        }
    }

    fn sample_action<R: Rng + ?Sized>(&self, s: &State, rng: &mut R) -> usize {
        let best = self.preferred(s);
        let u: f64 = rng.random();
        let top = self.top_prob();
        if u < top {
            return best;
        }
        // Remaining mass is split evenly among the other actions.
        let k = (((u - top) / self.p_min) as usize).min(self.n_actions - 2);
        if k >= best {
            k + 1
        } else {
            k
        }
    }
}

/// Arbitrary per-state action distributions, used for small hand-built
/// instances in the verification suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    /// One distribution per state plus a trailing absorbing row.
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(mut probs: Vec<Vec<f64>>) -> Result<Self> {
        ensure!(!probs.is_empty(), InvalidParameter, "policy needs at least one state");
        let n = probs[0].len();
        ensure!(n >= 2, InvalidParameter, "need at least two actions");
        for row in &probs {
            let total: f64 = row.iter().sum();
            ensure!(
                row.len() == n && row.iter().all(|p| *p >= 0.0) && (total - 1.0).abs() <= 1e-12,
                InvalidParameter,
                "policy rows must be distributions over {n} actions"
            );
        }
        let mut absorbing = vec![0.0; n];
        absorbing[0] = 1.0;
        probs.push(absorbing);
        Ok(Self { probs })
    }

    pub fn min_prob(&self) -> f64 {
        self.probs[..self.probs.len() - 1]
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

impl From<&FlooredPolicy> for TabularPolicy {
    fn from(p: &FlooredPolicy) -> Self {
        let probs = p
            .greedy
            .iter()
            .map(|&g| {
                (0..p.n_actions)
                    .map(|a| if a == g { p.top_prob() } else { p.p_min })
                    .collect()
            })
            .collect();
        Self { probs }
    }
}

impl Policy for TabularPolicy {
    fn action_count(&self) -> usize {
        self.probs[0].len()
    }

    fn action_prob(&self, s: &State, a: usize) -> f64 {
        let row = match s {
            State::Cell(c) => *c,
            State::Absorbing => self.probs.len() - 1,
            State::Point(_) => panic!("tabular policy queried with a continuous state"),
        };
        self.probs[row][a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_actions_floor_at_two_percent() {
        let p = floor_policy(&[vec![0.1, 0.9, 0.3, 0.2]], 0.02, 4).unwrap();
        let d = p.distribution(&State::Cell(0));
        assert_eq!(d[1], 1.0 - 3.0 * 0.02);
        assert!((d[1] - 0.94).abs() < 1e-15);
        assert_eq!([d[0], d[2], d[3]], [0.02; 3]);
        assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn p_min_must_stay_below_uniform() {
        assert!(floor_policy(&[vec![1.0, 0.0]], 0.5, 2).is_err());
        assert!(floor_policy(&[vec![1.0, 0.0]], 0.0, 2).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let p = floor_policy(&[vec![0.3; 3]], 0.1, 3).unwrap();
        assert!((p.action_prob(&State::Cell(0), 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn absorbing_row_prefers_action_zero() {
        let p = floor_policy(&[vec![0.0, 1.0]], 0.1, 2).unwrap();
        assert_eq!(p.preferred(&State::Absorbing), 0);
    }

    #[test]
    fn sampler_matches_probabilities() {
        let p = floor_policy(&[vec![0.0, 0.0, 1.0, 0.0]], 0.1, 4).unwrap();
        let mut rng = crate::rng::seeded(5);
        let n = 200_000;
        let mut hist = [0usize; 4];
        for _ in 0..n {
            hist[p.sample_action(&State::Cell(0), &mut rng)] += 1;
        }
        for (a, &h) in hist.iter().enumerate() {
            let want = p.action_prob(&State::Cell(0), a);
            let se = (want * (1.0 - want) / n as f64).sqrt();
            assert!((h as f64 / n as f64 - want).abs() < 5.0 * se, "action {a}");
        }
    }
}
