use expertdp::mdp::{expected_return, value_iteration, EnvModel, State, TablePolicy, TabularMdp};
use expertdp::privacy::{
    advanced_composition, calibrate_noise, check_release_budget, derive_release_params, dpsgd_epsilon, BudgetLedger,
    SplitRule,
};
use expertdp::rl::{cql_example, evaluate, selective_train, ExpertPools, FeatTransition, QNet, TrainConfig, TrainHooks};
use expertdp::rng;
use rand::Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn release_parameters_for_a_many_trajectory_release() {
    let p = derive_release_params(10.0, 1.0 / 3000.0, 25, 32, 0.02).unwrap();
    let expected = 10.0 / (32.0f64 * 25.0 * 6000.0f64.ln()).sqrt();
    assert!(close(p.eps_prime, expected, 1e-12));
    assert!(close(p.eps_prime, 0.11988, 5e-5), "eps' = {}", p.eps_prime);
    let (eps, delta) = check_release_budget(&p).unwrap();
    // Composition of 25 steps at (2ε', δ1/50) with slack δ1/2.
    let first = 2.0 * p.eps_prime * (2.0 * 25.0 * 6000.0f64.ln()).sqrt();
    let second = 25.0 * 2.0 * p.eps_prime * ((2.0 * p.eps_prime).exp() - 1.0);
    assert!(close(eps, first + second, 1e-9));
    assert!(close(eps, 6.62, 0.01), "composed epsilon {eps}");
    assert!(eps <= 10.0);
    assert!(close(delta, 1.0 / 3000.0, 1e-15));
}

#[test]
fn desk_release_fits_inside_its_share() {
    let split = SplitRule::Default.split(10.0, 1.0 / 300.0).unwrap();
    let p = derive_release_params(split.eps1, split.delta1, 1, 32, 0.02).unwrap();
    let (eps, delta) = check_release_budget(&p).unwrap();
    assert!(eps <= split.eps1 && delta <= split.delta1 * (1.0 + 1e-12));
    assert!(close(p.theta, 123.3, 0.1), "theta {}", p.theta);
    let (e1, d1) = advanced_composition(1, 2.0 * p.eps_prime, split.delta1 / 2.0, split.delta1 / 2.0);
    assert_eq!((e1, d1), (eps, delta));
}

#[test]
fn single_full_batch_gaussian_step_matches_the_classical_bound() {
    let delta: f64 = 1e-5;
    let sigma = (2.0 * (1.25 / delta).ln()).sqrt();
    let eps = dpsgd_epsilon(sigma, 1.0, 1, delta).unwrap();
    assert!(eps <= 1.25, "accountant gives {eps}");
    assert!(eps > 0.5);
}

/// Integer-order Rényi bound of the Poisson-subsampled Gaussian by direct
/// binomial expansion, converted with the improved RDP-to-DP rule.
fn integer_order_epsilon(sigma: f64, q: f64, steps: usize, delta: f64) -> f64 {
    let log_comb = |n: usize, k: usize| -> f64 { (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum() };
    (2..=256usize)
        .map(|a| {
            let terms: Vec<f64> = (0..=a)
                .map(|k| {
                    let kf = k as f64;
                    log_comb(a, k) + (a - k) as f64 * (-q).ln_1p() + kf * q.ln() + (kf * kf - kf) / (2.0 * sigma * sigma)
                })
                .collect();
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_a = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
            let af = a as f64;
            steps as f64 * log_a / (af - 1.0) + ((af - 1.0) / af).ln() - (delta.ln() + af.ln()) / (af - 1.0)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn accountant_agrees_with_integer_order_expansion() {
    let q = 0.8 * 256.0 / 3000.0;
    let delta = 1.0 / 30000.0;
    for sigma in [5.0, 11.34, 20.0, 60.0] {
        let ours = dpsgd_epsilon(sigma, q, 10_000, delta).unwrap();
        let oracle = integer_order_epsilon(sigma, q, 10_000, delta);
        // Fractional orders may only tighten the integer-order bound.
        assert!(ours <= oracle + 1e-9 && ours >= oracle - 0.05, "sigma {sigma}: {ours} vs {oracle}");
    }
}

#[test]
fn calibrated_noise_at_scale() {
    let q = 0.8 * 256.0 / 3000.0;
    let delta = 1.0 / 30000.0;
    let sigma = calibrate_noise(2.5, delta, q, 10_000).unwrap();
    assert!(dpsgd_epsilon(sigma, q, 10_000, delta).unwrap() <= 2.5);
    assert!(integer_order_epsilon(sigma * 0.98, q, 10_000, delta) > 2.5);
    assert!((10.0..=13.0).contains(&sigma), "sigma {sigma}");
    let e = dpsgd_epsilon(60.0, q, 10_000, delta).unwrap();
    assert!(e.is_finite() && e < 2.5);
}

fn chain_setup(m: usize) -> (EnvModel, Vec<FeatTransition>, ExpertPools) {
    let env = EnvModel::tabular(TabularMdp::chain(4, 0.1).unwrap(), 0.9, 8).unwrap();
    let mut r = rng::seeded(11);
    let mut sample = || {
        let s = r.random_range(0..4usize);
        let a = r.random_range(0..2usize);
        FeatTransition {
            x: env.features(&State::Cell(s)),
            a,
            r: if s == 3 { 1.0 } else { 0.0 },
            x_next: env.features(&State::Cell((s + 1).min(3))),
            terminal: false,
        }
    };
    let stable: Vec<_> = (0..40).map(|_| sample()).collect();
    let pools = ExpertPools::new(m, (0..m).flat_map(|e| [(e, sample()), (e, sample())]).collect::<Vec<_>>()).unwrap();
    (env, stable, pools)
}

fn small_cfg(p: f64, steps: usize) -> TrainConfig {
    TrainConfig {
        p,
        steps,
        batch: 4,
        hidden: 4,
        eval_interval: steps,
        curve_episodes: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn public_only_training_spends_nothing_from_the_training_share() {
    let (env, stable, pools) = chain_setup(20);
    let mut ledger = BudgetLedger::new(SplitRule::Default.split(4.0, 1e-3).unwrap());
    let out = selective_train(&env, &stable, &pools, &small_cfg(0.0, 300), &mut ledger, 3, 8, TrainHooks::default()).unwrap();
    assert_eq!(out.stats.private_steps, 0);
    assert!(out.accountant.is_none());
    assert_eq!(ledger.consumed(), (0.0, 0.0));
    assert!(out.curve.iter().all(|r| r.eps_consumed == 0.0));
}

#[test]
fn private_branch_is_taken_at_the_configured_rate() {
    let (env, stable, pools) = chain_setup(40);
    let mut ledger = BudgetLedger::new(SplitRule::Default.split(40.0, 1e-3).unwrap());
    let steps = 10_000;
    let out = selective_train(&env, &stable, &pools, &small_cfg(0.2, steps), &mut ledger, 5, 8, TrainHooks::default()).unwrap();
    let freq = out.stats.private_steps as f64 / steps as f64;
    assert!(close(freq, 0.2, 0.012), "private fraction {freq}");
    assert_eq!(out.stats.private_steps + out.stats.public_steps, steps);
    let acc = out.accountant.unwrap();
    assert_eq!(acc.steps, out.stats.private_steps);
    assert!(close(acc.q, 4.0 / 40.0, 1e-15));
}

#[test]
fn always_private_training_is_plain_dpsgd() {
    let (env, _, pools) = chain_setup(20);
    let mut ledger = BudgetLedger::new(SplitRule::DpsgdOnly.split(8.0, 1e-3).unwrap());
    let out = selective_train(&env, &[], &pools, &small_cfg(1.0, 200), &mut ledger, 9, 8, TrainHooks::default()).unwrap();
    assert_eq!(out.stats.public_steps, 0);
    assert_eq!(out.stats.private_steps, 200);
    let acc = out.accountant.unwrap();
    assert_eq!(acc.steps, 200);
    assert!(acc.eps_actual <= 8.0);
    let (e, _) = ledger.consumed();
    assert_eq!(e, 8.0);
    assert!(out.curve.last().unwrap().eps_consumed <= 8.0 * (1.0 + 1e-9));
}

#[test]
fn cql_gradient_matches_finite_differences() {
    let env = EnvModel::tabular(TabularMdp::chain(3, 0.0).unwrap(), 0.9, 5).unwrap();
    let mut r = rng::seeded(4);
    let dims = [env.feature_dim(), 5, 5, 2];
    let net = QNet::init(dims, &mut r);
    let target = QNet::init(dims, &mut r);
    let t = FeatTransition {
        x: vec![0.3, -0.7, 1.1, 0.4],
        a: 1,
        r: 0.5,
        x_next: env.features(&State::Cell(2)),
        terminal: false,
    };
    let (_, grad) = cql_example(&net, &target, &t, 0.7, 0.9);
    let h = 1e-6;
    for (i, g) in grad.iter().enumerate() {
        let mut up = net.clone();
        up.params[i] += h;
        let mut down = net.clone();
        down.params[i] -= h;
        let fd = (cql_example(&up, &target, &t, 0.7, 0.9).0 - cql_example(&down, &target, &t, 0.7, 0.9).0) / (2.0 * h);
        assert!(close(*g, fd, 1e-6 * (1.0 + fd.abs())), "param {i}: {g} vs {fd}");
    }
}

/// Network whose first two layers copy a one-hot input and whose output layer
/// holds a Q table, so the greedy action is the table's greedy action.
fn table_net(q: &[Vec<f64>], features: usize) -> QNet {
    let na = q[0].len();
    let dims = [features, features, features, na];
    let mut net = QNet::zeros(dims);
    let w = features * features;
    let b = features;
    for i in 0..features {
        net.params[i * features + i] = 1.0;
        net.params[w + b + i * features + i] = 1.0;
    }
    let w3 = 2 * (w + b);
    for a in 0..na {
        for (s, row) in q.iter().enumerate() {
            net.params[w3 + a * features + s] = row[a];
        }
    }
    net
}

#[test]
fn greedy_evaluation_matches_exact_return_on_a_deterministic_chain() {
    let n = 6;
    let horizon = 12;
    let mdp = TabularMdp::chain(n, 0.0).unwrap();
    let table = value_iteration(&mdp, 0.95, 1e-10).unwrap();
    let policy = TablePolicy {
        actions: table.greedy(),
        n_actions: 2,
    };
    let exact = expected_return(&mdp, &policy, 1.0, horizon);
    assert_eq!(exact, (horizon - (n - 1)) as f64);

    let env = EnvModel::tabular(mdp, 0.95, horizon).unwrap();
    let rows: Vec<Vec<f64>> = (0..n).map(|s| table.row(s).to_vec()).collect();
    let net = table_net(&rows, env.feature_dim());
    let report = evaluate(&net, &env, 3, 17).unwrap();
    assert!(report.returns.iter().all(|&r| close(r, exact, 1e-12)), "{:?}", report.returns);
}
