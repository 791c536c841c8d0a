use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::audit::empirical_dp_audit;
use super::checks::{
    check_count_sensitivity, check_event_ratio, estimate_false_stable_rate, max_trajectory_sensitivity,
    random_prefix, tail_quadrature, EXACT_TOL,
};
use super::tiny::{random_pair, TinyInstance, TinySpec};
use crate::error::Result;
use crate::experts::{generate_dataset, generate_ensemble, Axis, EnsembleConfig, ExpertEnsemble};
use crate::mdp::EnvSpec;
use crate::privacy::{c_min, derive_release_params, BudgetLedger, BudgetSplit, RandomNoise, ReleaseParams};
use crate::rl::{featurize, selective_train, ExpertPools, SigmaSpec, TrainConfig, TrainHooks};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// An exact check held.
    Pass,
    /// A statistical check is consistent with the claimed bound.
    Consistent,
    Fail,
}

impl Verdict {
    pub fn ok(self) -> bool {
        self != Verdict::Fail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub claimed: f64,
    pub empirical: f64,
    pub slack: f64,
    pub trials: usize,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl CheckReport {
    fn exact(name: &str, claimed: f64, empirical: f64, trials: usize, holds: bool) -> Self {
        Self {
            name: name.into(),
            claimed,
            empirical,
            slack: EXACT_TOL,
            trials,
            verdict: if holds { Verdict::Pass } else { Verdict::Fail },
            details: BTreeMap::new(),
        }
    }

    fn statistical(name: &str, claimed: f64, empirical: f64, slack: f64, trials: usize, holds: bool) -> Self {
        Self {
            name: name.into(),
            claimed,
            empirical,
            slack,
            trials,
            verdict: if holds { Verdict::Consistent } else { Verdict::Fail },
            details: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.into(), value);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub checks: Vec<CheckReport>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.verdict.ok())
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Small gridworld ensemble used by the sensitivity and DP-SGD checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridCheck {
    pub env: EnvSpec,
    pub ensemble: EnsembleConfig,
    pub per_expert: usize,
    pub pairs: usize,
}

impl Default for GridCheck {
    fn default() -> Self {
        let mut grid = BTreeMap::new();
        grid.insert(
            "slip".to_string(),
            Axis {
                min: 0.05,
                max: 0.3,
                count: 5,
            },
        );
        grid.insert(
            "step_reward".to_string(),
            Axis {
                min: -0.04,
                max: 0.0,
                count: 3,
            },
        );
        Self {
            env: EnvSpec::default(),
            ensemble: EnsembleConfig {
                grid,
                per_setting: 2,
                p_min: crate::experts::default_p_min(),
                tie_break: Default::default(),
            },
            per_expert: 2,
            pairs: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityCheck {
    pub tiny_pairs: usize,
    pub max_experts: usize,
}

impl Default for SensitivityCheck {
    fn default() -> Self {
        Self {
            tiny_pairs: 100,
            max_experts: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatioConfig {
    pub draws: usize,
    pub eps_prime: f64,
    pub max_experts: usize,
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self {
            draws: 1000,
            eps_prime: 1.0,
            max_experts: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailConfig {
    pub trials: usize,
    pub eps_prime: f64,
    pub delta_prime: f64,
    pub p_min: f64,
    /// Gap below `θ` at which the near-threshold count sits.
    pub gap: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            eps_prime: 0.5,
            delta_prime: 0.01,
            p_min: 0.02,
            gap: 1e-6,
        }
    }
}

impl TailConfig {
    pub fn params(&self) -> ReleaseParams {
        let c = c_min(self.eps_prime);
        ReleaseParams {
            eps1: f64::NAN,
            delta1: f64::NAN,
            eps_prime: self.eps_prime,
            delta_prime: self.delta_prime,
            c_min: c,
            theta: c / self.p_min,
            t: 1,
            l: 1,
            p_min: self.p_min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub eps1: f64,
    pub delta1: f64,
    pub pairs: usize,
    pub trials: usize,
    pub max_experts: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            eps1: 20.0,
            delta1: 0.5,
            pairs: 20,
            trials: 1_000_000,
            max_experts: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpsgdCheck {
    pub steps: usize,
    pub batch: usize,
    pub clip: f64,
    pub eps: f64,
    pub delta: f64,
    /// Fault injection: skip per-example clipping.
    pub disable_clip: bool,
}

impl Default for DpsgdCheck {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 8,
            clip: 1.0,
            eps: 8.0,
            delta: 1e-5,
            disable_clip: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub tiny: TinySpec,
    pub grid: GridCheck,
    pub sensitivity: SensitivityCheck,
    pub ratio: RatioConfig,
    pub tail: TailConfig,
    pub audit: AuditConfig,
    pub dpsgd: DpsgdCheck,
    /// Extra `(ε′, δ′)` pairs for the tail quadrature.
    pub quadrature: Vec<(f64, f64)>,
}

impl VerifyConfig {
    pub fn audit_params(&self) -> Result<ReleaseParams> {
        derive_release_params(self.audit.eps1, self.audit.delta1, 1, self.tiny.horizon, self.tiny.p_min)
    }
}

/// Ensemble and demonstrations for the gridworld checks.
pub fn grid_ensemble(cfg: &GridCheck, seed: u64) -> Result<(ExpertEnsemble, crate::experts::ExpertDataset)> {
    let ensemble = generate_ensemble(&cfg.env, &cfg.ensemble, rng::derive_seed(seed, "verify-ensemble", &[]))?;
    let env = cfg.env.build()?;
    let data = generate_dataset(&ensemble, &env, cfg.per_expert, rng::derive_seed(seed, "verify-dataset", &[]))?;
    Ok((ensemble, data))
}

pub fn sensitivity_reports(
    cfg: &VerifyConfig,
    tiny: &TinyInstance,
    grid: &(ExpertEnsemble, crate::experts::ExpertDataset),
    seed: u64,
) -> Vec<CheckReport> {
    let prefixes = tiny.all_prefixes();
    let mut r = rng::stream(seed, "verify-sensitivity", &[0]);
    let tiny_max = (0..cfg.sensitivity.tiny_pairs)
        .map(|_| {
            let pair = random_pair(&tiny.pool, cfg.sensitivity.max_experts, &mut r);
            check_count_sensitivity(&pair, &prefixes)
        })
        .fold(0.0, f64::max);

    let (ensemble, data) = grid;
    let paths: Vec<_> = data
        .trajectories
        .iter()
        .map(|t| (t.states.clone(), t.actions.clone()))
        .collect();
    let mut r = rng::stream(seed, "verify-sensitivity", &[1]);
    let grid_max = (0..cfg.grid.pairs)
        .map(|_| {
            let pair = random_pair(&ensemble.experts, ensemble.len(), &mut r);
            max_trajectory_sensitivity(&pair, &paths)
        })
        .fold(0.0, f64::max);
    vec![
        CheckReport::exact("count_sensitivity_tiny", 1.0, tiny_max, cfg.sensitivity.tiny_pairs, tiny_max <= 1.0 + EXACT_TOL)
            .with("prefixes", prefixes.len() as f64),
        CheckReport::exact("count_sensitivity_gridworld", 1.0, grid_max, cfg.grid.pairs, grid_max <= 1.0 + EXACT_TOL)
            .with("trajectories", paths.len() as f64),
    ]
}

pub fn ratio_report(cfg: &VerifyConfig, tiny: &TinyInstance, seed: u64) -> CheckReport {
    let mut r = rng::stream(seed, "verify-ratio", &[]);
    let eps = cfg.ratio.eps_prime;
    let (mut checked, mut attempts, mut violations) = (0usize, 0usize, 0usize);
    let mut worst: f64 = 0.0;
    while checked < cfg.ratio.draws && attempts < 1000 * cfg.ratio.draws.max(1) {
        attempts += 1;
        let pair = random_pair(&tiny.pool, cfg.ratio.max_experts, &mut r);
        let (states, actions) = random_prefix(tiny, &mut r);
        let flip = r.random::<bool>();
        let (a, b) = if flip { (&pair.small, &pair.large) } else { (&pair.large, &pair.small) };
        if let Some(c) = check_event_ratio(tiny, a, b, &states, &actions, eps) {
            checked += 1;
            worst = worst.max(c.ratio);
            if !c.holds {
                violations += 1;
            }
        }
    }
    let bound = eps.exp();
    CheckReport::exact(
        "event_ratio",
        bound,
        worst,
        checked,
        violations == 0 && checked == cfg.ratio.draws,
    )
    .with("violations", violations as f64)
    .with("attempts", attempts as f64)
}

pub fn tail_reports(cfg: &VerifyConfig, extra: &[(f64, f64)], seed: u64) -> Result<Vec<CheckReport>> {
    let params = cfg.tail.params();
    let mut out = Vec::new();
    for (i, (label, count)) in [("false_stable_near_theta", params.theta - cfg.tail.gap), ("false_stable_zero_count", 0.0)]
        .into_iter()
        .enumerate()
    {
        let mut r = rng::stream(seed, "verify-tail", &[i as u64]);
        let est = estimate_false_stable_rate(count, &params, cfg.tail.trials, &mut RandomNoise(&mut r))?;
        out.push(
            CheckReport::statistical(label, est.bound, est.rate, est.slack, est.trials, est.holds).with("count", count),
        );
    }
    let mut pairs = vec![(cfg.tail.eps_prime, cfg.tail.delta_prime)];
    let audit = cfg.audit_params()?;
    pairs.push((audit.eps_prime, audit.delta_prime));
    pairs.extend(cfg.quadrature.iter().copied());
    pairs.extend(extra.iter().copied());
    let quads: Vec<_> = pairs.iter().map(|&(e, d)| tail_quadrature(e, d)).collect();
    let worst = quads
        .iter()
        .map(|q| q.bound_integral.max(q.exact_at_theta) / q.delta_prime)
        .fold(0.0, f64::max);
    out.push(
        CheckReport::exact("tail_quadrature", 1.0, worst, quads.len(), quads.iter().all(|q| q.holds))
            .with("pairs", quads.len() as f64),
    );
    Ok(out)
}

pub fn audit_report(cfg: &VerifyConfig, tiny: &TinyInstance, seed: u64) -> Result<CheckReport> {
    let params = cfg.audit_params()?;
    let mut r = rng::stream(seed, "verify-audit-pairs", &[]);
    let mut worst = None::<super::audit::AuditResult>;
    let mut all = true;
    for i in 0..cfg.audit.pairs {
        let pair = random_pair(&tiny.pool, cfg.audit.max_experts, &mut r);
        let res = empirical_dp_audit(tiny, &pair, &params, cfg.audit.trials, rng::derive_seed(seed, "audit", &[i as u64]))?;
        all &= res.holds;
        if worst.is_none_or(|w| res.divergence - res.slack > w.divergence - w.slack) {
            worst = Some(res);
        }
    }
    Ok(match worst {
        Some(w) => CheckReport::statistical("release_audit", w.claimed_delta, w.divergence, w.slack, w.trials, all)
            .with("eps", w.eps)
            .with("eps_hat", w.eps_hat)
            .with("pairs", cfg.audit.pairs as f64),
        None => CheckReport::statistical("release_audit", params.delta1 / 2.0, 0.0, 0.0, 0, true),
    })
}

pub fn dpsgd_reports(
    cfg: &VerifyConfig,
    grid: &(ExpertEnsemble, crate::experts::ExpertDataset),
    seed: u64,
) -> Result<Vec<CheckReport>> {
    let (ensemble, data) = grid;
    let env = cfg.grid.env.build()?;
    let pools = ExpertPools::new(
        ensemble.len(),
        data.trajectories
            .iter()
            .flat_map(|t| t.transitions().into_iter().map(move |tr| (t.expert_id, tr)))
            .map(|(e, tr)| (e, featurize(&env, &tr))),
    )?;
    let train = TrainConfig {
        steps: cfg.dpsgd.steps,
        batch: cfg.dpsgd.batch,
        clip: cfg.dpsgd.clip,
        sigma: SigmaSpec::default(),
        p: 1.0,
        hidden: 16,
        eval_interval: cfg.dpsgd.steps.max(1),
        curve_episodes: 1,
        ..TrainConfig::default()
    };
    let mut ledger = BudgetLedger::new(BudgetSplit {
        eps1: 0.0,
        delta1: 0.0,
        eps2: cfg.dpsgd.eps,
        delta2: cfg.dpsgd.delta,
    });
    let hooks = TrainHooks {
        disable_clip: cfg.dpsgd.disable_clip,
        record_private: true,
    };
    let out = selective_train(&env, &[], &pools, &train, &mut ledger, rng::derive_seed(seed, "verify-dpsgd", &[]), 1, hooks)?;
    let max_norm = out.private_log.iter().map(|l| l.max_clipped_norm).fold(0.0, f64::max);
    let dup = out
        .private_log
        .iter()
        .filter(|l| {
            let mut ids = l.expert_ids.clone();
            ids.sort_unstable();
            ids.windows(2).any(|w| w[0] == w[1])
        })
        .count();
    let n = out.private_log.len();
    Ok(vec![
        CheckReport::exact("dpsgd_clip_norm", cfg.dpsgd.clip, max_norm, n, max_norm <= cfg.dpsgd.clip + 1e-9),
        CheckReport::exact("dpsgd_distinct_experts", 0.0, dup as f64, n, dup == 0),
    ])
}

/// Runs every check. `extra_quadrature` adds `(ε′, δ′)` pairs, typically
/// those derived from the run configs being shipped.
pub fn run_suite(cfg: &VerifyConfig, extra_quadrature: &[(f64, f64)], seed: u64) -> Result<SuiteReport> {
    let tiny = TinyInstance::build(&cfg.tiny)?;
    let grid = grid_ensemble(&cfg.grid, seed)?;
    let mut checks = sensitivity_reports(cfg, &tiny, &grid, seed);
    checks.push(ratio_report(cfg, &tiny, seed));
    checks.extend(tail_reports(cfg, extra_quadrature, seed)?);
    checks.push(audit_report(cfg, &tiny, seed)?);
    checks.extend(dpsgd_reports(cfg, &grid, seed)?);
    let passed = checks.iter().all(|c| c.verdict.ok());
    Ok(SuiteReport { seed, checks, passed })
}
