use super::audit::{empirical_divergence, epsilon_at, self_pair, OutputSpace};
use super::*;
use crate::experts::TabularPolicy;
use crate::mdp::State;
use crate::privacy::{c_min, RandomNoise, ReleaseParams};

fn policy(rows: &[[f64; 2]]) -> TabularPolicy {
    TabularPolicy::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

fn cells(v: &[usize]) -> Vec<State> {
    v.iter().map(|&c| State::Cell(c)).collect()
}

#[test]
fn deterministic_expert_off_prefix_changes_nothing() {
    let soft = policy(&[[0.5, 0.5], [0.5, 0.5]]);
    let hard = policy(&[[1.0, 0.0], [1.0, 0.0]]);
    let pair = NeighbourPair::remove(vec![soft.clone(), soft, hard], 2);
    let prefixes = vec![(cells(&[0, 1]), vec![1])];
    assert_eq!(check_count_sensitivity(&pair, &prefixes), 0.0);
}

#[test]
fn deterministic_expert_on_prefix_moves_count_by_its_product() {
    let soft = policy(&[[0.3, 0.7], [0.6, 0.4]]);
    let hard = policy(&[[0.0, 1.0], [1.0, 0.0]]);
    let pair = NeighbourPair::remove(vec![soft, hard], 1);
    let prefixes = vec![(cells(&[0, 1, 0]), vec![1, 0])];
    assert!((check_count_sensitivity(&pair, &prefixes) - 1.0).abs() < 1e-15);
}

#[test]
fn tiny_instance_pairs_have_unit_sensitivity() {
    let inst = TinyInstance::build(&TinySpec::default()).unwrap();
    let prefixes = inst.all_prefixes();
    // 3 + 3·6 + 3·36 prefixes of lengths 0, 1 and 2.
    assert_eq!(prefixes.len(), 3 + 18 + 108);
    let mut r = crate::rng::seeded(11);
    for _ in 0..100 {
        let pair = random_pair(&inst.pool, 8, &mut r);
        assert!(check_count_sensitivity(&pair, &prefixes) <= 1.0 + 1e-12);
    }
}

#[test]
fn event_probabilities_sum_to_one_per_length() {
    let inst = TinyInstance::build(&TinySpec::default()).unwrap();
    for len in 0..=inst.horizon {
        let total: f64 = inst
            .all_prefixes()
            .iter()
            .filter(|(_, a)| a.len() == len)
            .map(|(s, a)| inst.event_probability(&inst.pool, s, a))
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "length {len}: {total}");
    }
}

#[test]
fn ratio_bound_is_tight_at_c_min() {
    for eps in [0.1, 0.5, 1.0, 3.0] {
        let c = c_min(eps);
        assert!((c / (c - 1.0) - f64::exp(eps)).abs() < 1e-12 * f64::exp(eps));
    }
}

#[test]
fn ratio_skips_counts_below_c_min() {
    let inst = TinyInstance::build(&TinySpec::default()).unwrap();
    let pair = NeighbourPair::remove(inst.pool[..2].to_vec(), 0);
    let states = cells(&[0, 1, 2]);
    // Two experts at p <= 0.55 give a count of at most 0.605 < c_min(1).
    assert!(check_event_ratio(&inst, &pair.large, &pair.small, &states, &[1, 1], 1.0).is_none());
}

#[test]
fn ratio_holds_when_the_count_clears_c_min() {
    let inst = TinyInstance::build(&TinySpec::default()).unwrap();
    let pair = NeighbourPair::remove(inst.pool.clone(), 3);
    let states = cells(&[0, 1]);
    let c = check_event_ratio(&inst, &pair.large, &pair.small, &states, &[1], 1.0).unwrap();
    assert!(c.holds);
    assert!(c.ratio <= c.count / (c.count - 1.0) + 1e-12);
}

fn tail_params(eps_prime: f64, delta_prime: f64, p_min: f64) -> ReleaseParams {
    suite::TailConfig {
        eps_prime,
        delta_prime,
        p_min,
        ..Default::default()
    }
    .params()
}

#[test]
fn false_stable_rate_just_below_theta() {
    let p = tail_params(0.5, 0.01, 0.02);
    let mut r = crate::rng::seeded(5);
    let est = estimate_false_stable_rate(p.theta - 1e-6, &p, 100_000, &mut RandomNoise(&mut r)).unwrap();
    assert!(est.rate < 0.013, "rate {}", est.rate);
    assert!(est.holds);
}

#[test]
fn false_stable_rate_at_zero_count() {
    let p = tail_params(0.5, 0.01, 0.02);
    let mut r = crate::rng::seeded(6);
    let est = estimate_false_stable_rate(0.0, &p, 100_000, &mut RandomNoise(&mut r)).unwrap();
    assert!(est.rate <= est.bound);
}

#[test]
fn false_stable_rejects_counts_at_theta() {
    let p = tail_params(0.5, 0.01, 0.02);
    let mut r = crate::rng::seeded(7);
    assert!(estimate_false_stable_rate(p.theta, &p, 10, &mut RandomNoise(&mut r)).is_err());
}

#[test]
fn quadrature_matches_two_thirds() {
    for (e, d) in [(0.5, 0.01), (1.5, 0.125), (0.05, 1e-6)] {
        let q = tail_quadrature(e, d);
        assert!((q.bound_integral - q.closed_form).abs() < 1e-9 * d, "{q:?}");
        assert!(q.exact_at_theta < d && q.holds);
    }
}

#[test]
fn quadrature_exact_tail_agrees_with_simulation() {
    let q = tail_quadrature(1.0, 0.2);
    let p = tail_params(1.0, 0.2, 0.5);
    let mut r = crate::rng::seeded(8);
    let n = 400_000;
    let est = estimate_false_stable_rate(p.theta - 1e-12, &p, n, &mut RandomNoise(&mut r)).unwrap();
    let sd = (q.exact_at_theta * (1.0 - q.exact_at_theta) / n as f64).sqrt();
    assert!((est.rate - q.exact_at_theta).abs() < 4.0 * sd, "{} vs {}", est.rate, q.exact_at_theta);
}

#[test]
fn output_space_keys_are_a_bijection() {
    let inst = TinyInstance::build(&TinySpec::default()).unwrap();
    let space = OutputSpace::new(3, 2, 2);
    let mut seen = vec![false; space.len()];
    seen[0] = true;
    for (s, a) in inst.all_prefixes().into_iter().filter(|(_, a)| !a.is_empty()) {
        let k = space.key(&s, &a, a.len());
        assert!(!seen[k]);
        seen[k] = true;
    }
    assert!(seen.iter().all(|&b| b));
}

#[test]
fn hockey_stick_edge_cases() {
    let p = [0.2, 0.3, 0.5];
    assert_eq!(hockey_stick(&p, &p, 0.0), 0.0);
    assert_eq!(hockey_stick(&p, &[0.5, 0.3, 0.2], f64::INFINITY), 0.0);
    assert!((hockey_stick(&[1.0, 0.0], &[0.5, 0.5], 0.0) - 0.5).abs() < 1e-15);
    let d = empirical_divergence(&[10, 0], &[10, 0], 10, 1.0);
    assert_eq!(d.value, 0.0);
    assert!((epsilon_at(&[6, 4], &[4, 6], 10, 0.0) - 1.5f64.ln()).abs() < 1e-12);
}

#[test]
fn self_pair_audit_has_zero_divergence() {
    let inst = TinyInstance::build(&TinySpec::default()).unwrap();
    let cfg = VerifyConfig::default();
    let params = cfg.audit_params().unwrap();
    let pair = self_pair(inst.pool[..4].to_vec());
    let res = empirical_dp_audit(&inst, &pair, &params, 100_000, 3).unwrap();
    assert_eq!(res.divergence, 0.0);
    assert!(res.holds);
}

#[test]
fn audit_refuses_large_instances() {
    let inst = TinyInstance::build(&TinySpec::default()).unwrap();
    let params = VerifyConfig::default().audit_params().unwrap();
    let pair = NeighbourPair::remove(inst.pool.clone(), 0);
    assert!(empirical_dp_audit(&inst, &pair, &params, 10, 0).is_err());
}

#[test]
fn audit_histograms_are_seeded_and_non_trivial() {
    let inst = TinyInstance::build(&TinySpec::default()).unwrap();
    let params = VerifyConfig::default().audit_params().unwrap();
    let experts = inst.pool[..5].to_vec();
    let a = audit::release_histogram(&inst, &experts, &params, 200_000, 1).unwrap();
    let b = audit::release_histogram(&inst, &experts, &params, 200_000, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().sum::<u64>(), 200_000);
    assert!(a[0] < 200_000, "some prefix must be released");
}

#[test]
fn report_round_trips_through_json() {
    let report = SuiteReport {
        seed: 1,
        checks: vec![CheckReport {
            name: "x".into(),
            claimed: 1.0,
            empirical: 0.5,
            slack: 0.0,
            trials: 3,
            verdict: Verdict::Consistent,
            details: Default::default(),
        }],
        passed: true,
    };
    let text = serde_json::to_string(&report).unwrap();
    assert_eq!(serde_json::from_str::<SuiteReport>(&text).unwrap(), report);
}
