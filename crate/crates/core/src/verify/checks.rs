use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tiny::{NeighbourPair, TinyInstance};
use crate::error::{ensure, Result};
use crate::mdp::{Policy, Prefix, State};
use crate::privacy::{NoiseSource, ReleaseParams};
use crate::release::{count_prefix, draw_threshold, noisy_above, prefix_counts};

/// Float slack for the exact checks.
pub const EXACT_TOL: f64 = 1e-12;

/// Largest `|count(Π) − count(Π′)|` over the given prefixes.
pub fn check_count_sensitivity<P: Policy>(pair: &NeighbourPair<P>, prefixes: &[(Vec<State>, Vec<usize>)]) -> f64 {
    prefixes
        .iter()
        .map(|(s, a)| {
            let p = Prefix::new(s, a);
            (count_prefix(&pair.large, p) - count_prefix(&pair.small, p)).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest `|Δcount|` over every prefix of each trajectory, using running
/// products.
pub fn max_trajectory_sensitivity<P: Policy>(pair: &NeighbourPair<P>, paths: &[(Vec<State>, Vec<usize>)]) -> f64 {
    paths
        .iter()
        .flat_map(|(s, a)| {
            let big = prefix_counts(&pair.large, s, a);
            let small = prefix_counts(&pair.small, s, a);
            big.into_iter().zip(small).map(|(x, y)| (x - y).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioCheck {
    pub count: f64,
    pub ratio: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Event-probability ratio `Pr(E | Π) / Pr(E | Π′)` for the prefix, computed
/// exactly on the tiny MDP, with `Π` the side whose count is checked.
/// Returns `None` when `count(Π) < c_min` (no claim is made there).
pub fn check_event_ratio<P: Policy>(
    inst: &TinyInstance,
    pi: &[P],
    pi_prime: &[P],
    states: &[State],
    actions: &[usize],
    eps_prime: f64,
) -> Option<RatioCheck> {
    let count = count_prefix(pi, Prefix::new(states, actions));
    if count < crate::privacy::c_min(eps_prime) {
        return None;
    }
    let num = inst.event_probability(pi, states, actions);
    let den = inst.event_probability(pi_prime, states, actions);
    let bound = eps_prime.exp();
    let ratio = num / den;
    Some(RatioCheck {
        count,
        ratio,
        bound,
        holds: num <= bound * den * (1.0 + EXACT_TOL),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalseStable {
    pub count: f64,
    pub trials: usize,
    pub rate: f64,
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Runs the noisy threshold test `trials` times on a prefix whose count is
/// below `θ`, each time with a fresh threshold, and compares the stable
/// rate with `δ′` plus three binomial standard deviations.
pub fn estimate_false_stable_rate<N: NoiseSource + ?Sized>(
    count: f64,
    params: &ReleaseParams,
    trials: usize,
    noise: &mut N,
) -> Result<FalseStable> {
    ensure!(count < params.theta, InvalidParameter, "count {count} is not below theta {}", params.theta);
    ensure!(trials >= 1, InvalidParameter, "need at least one trial");
    let hits = (0..trials)
        .filter(|_| {
            let theta_hat = draw_threshold(params, noise);
            noisy_above(count, theta_hat, params.eps_prime, noise)
        })
        .count();
    let d = params.delta_prime;
    let slack = 3.0 * (d * (1.0 - d) / trials as f64).sqrt();
    let rate = hits as f64 / trials as f64;
    Ok(FalseStable {
        count,
        trials,
        rate,
        bound: d,
        slack,
        holds: rate <= d + slack,
    })
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `Pr[Lap(b) > t]`.
fn laplace_sf(t: f64, b: f64) -> f64 {
    if t >= 0.0 {
        0.5 * (-t / b).exp()
    } else {
        1.0 - 0.5 * (t / b).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailQuadrature {
    pub eps_prime: f64,
    pub delta_prime: f64,
    /// `δ′ · ½∫ e^{−vε′/4} (ε′/4) e^{−|v|ε′/2} dv`, the bound's integral.
    pub bound_integral: f64,
    /// The same integral in closed form, `2δ′/3`.
    pub closed_form: f64,
    /// Exact false-stable probability at `count = θ`, by quadrature.
    pub exact_at_theta: f64,
    pub holds: bool,
}

/// Numerically integrates the Laplace tail argument for one `(ε′, δ′)`.
pub fn tail_quadrature(eps_prime: f64, delta_prime: f64) -> TailQuadrature {
    let b_query = 4.0 / eps_prime;
    let b_thresh = 2.0 / eps_prime;
    let shift = b_query * (1.0 / delta_prime).ln();
    let density = |v: f64| (-v.abs() / b_thresh).exp() / (2.0 * b_thresh);
    let reach = 80.0 * b_thresh;
    let n = 20_000;
    let bound_integrand = |v: f64| 0.5 * (-v / b_query).exp() * density(v);
    let bound = simpson(bound_integrand, -reach, 0.0, n) + simpson(bound_integrand, 0.0, reach, n);
    let exact_integrand = |v: f64| laplace_sf(shift + v, b_query) * density(v);
    let left = (-shift).min(0.0);
    let exact = simpson(exact_integrand, -reach - shift, left, n)
        + simpson(exact_integrand, left, 0.0, n)
        + simpson(exact_integrand, 0.0, reach, n);
    let bound_integral = delta_prime * bound;
    TailQuadrature {
        eps_prime,
        delta_prime,
        bound_integral,
        closed_form: 2.0 * delta_prime / 3.0,
        exact_at_theta: exact,
        holds: bound_integral < delta_prime && exact < delta_prime,
    }
}

/// Random prefixes of a tiny instance, used for ratio sweeps.
pub fn random_prefix<R: Rng + ?Sized>(inst: &TinyInstance, rng: &mut R) -> (Vec<State>, Vec<usize>) {
    let k = rng.random_range(1..=inst.horizon);
    let ns = inst.mdp.n_states();
    let states = (0..=k).map(|_| State::Cell(rng.random_range(0..ns))).collect();
    let actions = (0..k).map(|_| rng.random_range(0..inst.mdp.n_actions())).collect();
    (states, actions)
}
