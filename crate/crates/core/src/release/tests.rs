use super::*;
use crate::experts::{FlooredPolicy, StateIndexer, TabularPolicy};
use crate::mdp::{EnvModel, TablePolicy, TabularMdp};
use crate::privacy::{derive_release_params, laplace, SplitRule, ZeroNoise};
use crate::rng;

fn two_state_policy(rows: [[f64; 2]; 2]) -> TabularPolicy {
    TabularPolicy::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

#[test]
fn empty_prefix_counts_every_expert() {
    let experts = vec![two_state_policy([[0.5, 0.5], [0.5, 0.5]]); 7];
    let states = [State::Cell(0)];
    assert_eq!(count_prefix(&experts, Prefix::new(&states, &[])), 7.0);
}

#[test]
fn deterministic_expert_counts_one() {
    let experts = vec![two_state_policy([[1.0, 0.0], [0.0, 1.0]])];
    let states = [State::Cell(0), State::Cell(1), State::Cell(0)];
    assert_eq!(count_prefix(&experts, Prefix::new(&states, &[0, 1])), 1.0);
}

#[test]
fn two_experts_by_enumeration() {
    let experts = vec![
        two_state_policy([[0.5, 0.5], [0.5, 0.5]]),
        two_state_policy([[0.2, 0.8], [0.7, 0.3]]),
    ];
    let states = [State::Cell(0), State::Cell(1), State::Cell(1)];
    let c = count_prefix(&experts, Prefix::new(&states, &[0, 1]));
    assert!((c - 0.31).abs() < 1e-15);
    let running = prefix_counts(&experts, &states, &[0, 1]);
    assert_eq!(running[1], c);
}

#[test]
fn zero_noise_queries() {
    let mut z = ZeroNoise;
    assert!(noisy_above(10.0, 5.0, 1.0, &mut z));
    assert!(!noisy_above(2.0, 5.0, 1.0, &mut z));
}

#[test]
fn query_tail_probability() {
    let mut rng = rng::seeded(21);
    let n = 100_000;
    let mut noise = RandomNoise(&mut rng);
    let hits = (0..n).filter(|_| noisy_above(1.0, 5.0, 1.0, &mut noise)).count();
    let want = 0.5 * (-1.0f64).exp();
    assert!((hits as f64 / n as f64 - want).abs() < 0.004, "{}", hits as f64 / n as f64);
}

fn chain_corpus(m: usize, per: usize, horizon: usize) -> (Vec<FlooredPolicy>, Vec<Trajectory>) {
    let mdp = TabularMdp::chain(6, 0.0).unwrap();
    let env = EnvModel::tabular(mdp, 0.9, horizon).unwrap();
    let greedy = vec![1; 6];
    let experts: Vec<FlooredPolicy> = (0..m)
        .map(|i| {
            FlooredPolicy::from_greedy(i, greedy.clone(), StateIndexer::Tabular { n_states: 6 }, 0.02, 2).unwrap()
        })
        .collect();
    let walker = TablePolicy {
        actions: greedy,
        n_actions: 2,
    };
    let mut trajectories = Vec::new();
    for i in 0..m {
        for j in 0..per {
            let mut r = rng::stream(5, "t", &[i as u64, j as u64]);
            trajectories.push(crate::mdp::rollout(&env, &walker, i, &mut r).unwrap());
        }
    }
    (experts, trajectories)
}

#[test]
fn nothing_processed_when_t_is_zero() {
    let (experts, data) = chain_corpus(3, 2, 4);
    let mut params = derive_release_params(1.0, 0.1, 1, 4, 0.02).unwrap();
    params.t = 0;
    let out = release_with_noise(&data, &experts, &params, &mut rng::seeded(1), &mut ZeroNoise).unwrap();
    assert!(out.stable.is_empty());
    assert_eq!(out.unstable.len(), data.len());
    assert!(out.unstable.iter().all(|u| u.cut_index == 0 && u.actions.len() == 4));
}

#[test]
fn greedy_paths_are_fully_stable_without_noise() {
    let (experts, data) = chain_corpus(300, 1, 4);
    let params = derive_release_params(10.0, 0.1, 5, 4, 0.02).unwrap();
    let count = 300.0 * 0.98f64.powi(4);
    assert!(count > params.theta + params.threshold_shift());
    let out = release_with_noise(&data, &experts, &params, &mut rng::seeded(2), &mut ZeroNoise).unwrap();
    assert_eq!(out.header.cuts, vec![4; 5]);
    assert_eq!(out.stable.len(), 5);
    assert!(out.stable.iter().all(|s| s.actions == vec![1; 4] && s.states.len() == 5));
    assert_eq!(out.unstable.len(), 295);
}

#[test]
fn corpus_shorter_than_t_is_rejected() {
    let (experts, data) = chain_corpus(2, 1, 3);
    let params = derive_release_params(1.0, 0.1, 3, 3, 0.02).unwrap();
    assert!(release_with_noise(&data, &experts, &params, &mut rng::seeded(1), &mut ZeroNoise).is_err());
}

#[test]
fn ledger_entry_is_data_independent() {
    let split = SplitRule::Default.split(10.0, 0.01).unwrap();
    let params = derive_release_params(split.eps1, split.delta1, 4, 4, 0.02).unwrap();
    for seed in 0..3 {
        let (experts, data) = chain_corpus(5 + seed, 2, 4);
        let mut ledger = BudgetLedger::new(split);
        let out = data_release(&data, &experts, &params, &mut rng::seeded(seed as u64), &mut ledger).unwrap();
        assert_eq!(ledger.consumed(), (split.eps1, split.delta1));
        assert_eq!(out.header.consumed, (split.eps1, split.delta1));
    }
}

/// Independent re-implementation of the scan for a two-step horizon:
/// explicit per-expert products, uniform distinct pair of sources, Laplace
/// noise as a difference of exponentials.
fn brute_force_cuts(
    experts: &[TabularPolicy],
    data: &[Trajectory],
    eps_prime: f64,
    threshold: f64,
    r: &mut impl Rng,
) -> (usize, usize) {
    let lap = |b: f64, r: &mut dyn rand::RngCore| {
        let u1: f64 = 1.0 - r.random::<f64>();
        let u2: f64 = 1.0 - r.random::<f64>();
        b * (u2.ln() - u1.ln())
    };
    let first = r.random_range(0..data.len());
    let mut second = r.random_range(0..data.len() - 1);
    if second >= first {
        second += 1;
    }
    let mut cuts = [0usize; 2];
    for (slot, idx) in [first, second].into_iter().enumerate() {
        let t = &data[idx];
        let theta_hat = threshold + lap(2.0 / eps_prime, r);
        let mut cut = 2;
        for k in 1..=2 {
            let mut count = 0.0;
            for e in experts {
                let mut p = 1.0;
                for j in 0..k {
                    let s = t.states[j].cell().unwrap();
                    p *= e.probs[s][t.actions[j]];
                }
                count += p;
            }
            if count + lap(4.0 / eps_prime, r) <= theta_hat {
                cut = k - 1;
                break;
            }
        }
        cuts[slot] = cut;
    }
    (cuts[0], cuts[1])
}

#[test]
fn tiny_release_matches_brute_force() {
    let experts = vec![
        two_state_policy([[0.7, 0.3], [0.4, 0.6]]),
        two_state_policy([[0.3, 0.7], [0.6, 0.4]]),
        two_state_policy([[0.7, 0.3], [0.7, 0.3]]),
        two_state_policy([[0.3, 0.7], [0.3, 0.7]]),
    ];
    let mdp = TabularMdp::chain(2, 0.25).unwrap();
    let env = EnvModel::tabular(mdp, 0.9, 2).unwrap();
    let data: Vec<Trajectory> = experts
        .iter()
        .enumerate()
        .map(|(i, e)| crate::mdp::rollout(&env, e, i, &mut rng::stream(3, "tiny", &[i as u64])).unwrap())
        .collect();
    let params = ReleaseParams {
        eps1: 1.0,
        delta1: 0.5,
        eps_prime: 2.0,
        delta_prime: 0.5,
        c_min: crate::privacy::c_min(2.0),
        theta: 1.0,
        t: 2,
        l: 2,
        p_min: 0.3,
    };
    let n = 100_000;
    let mut ours = [[0usize; 3]; 3];
    let mut oracle = [[0usize; 3]; 3];
    let mut r = rng::seeded(77);
    let mut o = rng::seeded(78);
    for _ in 0..n {
        let mut shuffle = rng::seeded(r.random());
        let out = release_with_noise(&data, &experts, &params, &mut shuffle, &mut RandomNoise(&mut r)).unwrap();
        ours[out.header.cuts[0]][out.header.cuts[1]] += 1;
        let (a, b) = brute_force_cuts(&experts, &data, params.eps_prime, params.theta + params.threshold_shift(), &mut o);
        oracle[a][b] += 1;
    }
    let tv: f64 = (0..3)
        .flat_map(|a| (0..3).map(move |b| (a, b)))
        .map(|(a, b)| (ours[a][b] as f64 - oracle[a][b] as f64).abs() / n as f64)
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.01, "total variation {tv}: {ours:?} vs {oracle:?}");
    // The histogram must not collapse onto a single cell.
    assert!(ours.iter().flatten().filter(|&&c| c > n / 50).count() >= 3);
}

#[test]
fn laplace_helper_is_symmetric() {
    let mut r = rng::seeded(4);
    let pos = (0..50_000).filter(|_| laplace(1.0, &mut r) > 0.0).count();
    assert!((pos as f64 / 50_000.0 - 0.5).abs() < 0.01);
}
