use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cql::{cql_example, mean_grad, FeatTransition};
use super::dpsgd::{dpsgd_step, sample_expert_batch, ExpertPools};
use super::net::{sgd_step, QNet};
use crate::error::{ensure, Error, Result};
use crate::mdp::EnvModel;
use crate::privacy::{calibrate_noise, dpsgd_epsilon, BudgetLedger, RandomNoise, RdpCurve};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutoTag {
    Auto,
}

/// Noise multiplier: a fixed value or `"auto"` (calibrated to `(ε2, δ2)`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Fixed(f64),
    Auto(AutoTag),
}

impl Default for SigmaSpec {
    fn default() -> Self {
        SigmaSpec::Auto(AutoTag::Auto)
    }
}

/// Which DP-SGD steps the accountant composes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Accounting {
    /// The schedule of private steps is drawn up front from public
    /// randomness; compose exactly the realized private steps at rate `b/m`.
    #[default]
    PrivateSteps,
    /// Compose all `N` steps at rate `p·b/m`.
    AllSteps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub clip: f64,
    pub sigma: SigmaSpec,
    /// Probability that a step takes the private branch.
    pub p: f64,
    pub cql_alpha: f64,
    /// Defaults to the environment's discount.
    pub gamma: Option<f64>,
    pub target_refresh: usize,
    pub hidden: usize,
    pub eval_interval: usize,
    pub curve_episodes: usize,
    pub accounting: Accounting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            batch: 32,
            steps: 20_000,
            clip: 1.0,
            sigma: SigmaSpec::default(),
            p: 0.2,
            cql_alpha: 1.0,
            gamma: None,
            target_refresh: 200,
            hidden: 64,
            eval_interval: 1000,
            curve_episodes: 5,
            accounting: Accounting::PrivateSteps,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.p), Config, "p must lie in [0, 1], got {}", self.p);
        ensure!(self.clip > 0.0, Config, "clip norm must be positive");
        ensure!(self.lr >= 0.0 && self.lr.is_finite(), Config, "learning rate must be finite and non-negative");
        ensure!(self.batch >= 1, Config, "batch size must be positive");
        ensure!(self.hidden >= 1, Config, "hidden width must be positive");
        ensure!(self.target_refresh >= 1, Config, "target refresh interval must be positive");
        ensure!(self.eval_interval >= 1, Config, "evaluation interval must be positive");
        ensure!(self.cql_alpha >= 0.0, Config, "cql alpha must be non-negative");
        if let SigmaSpec::Fixed(s) = self.sigma {
            ensure!(s >= 0.0 && s.is_finite(), Config, "sigma must be non-negative");
        }
        Ok(())
    }
}

/// Instrumentation for verification runs.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainHooks {
    /// Skip per-example clipping (fault injection).
    pub disable_clip: bool,
    /// Keep a log entry for every private step.
    pub record_private: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivateStepLog {
    pub step: usize,
    pub expert_ids: Vec<usize>,
    pub max_clipped_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    /// Mean public-branch loss since the previous row; empty if none ran.
    pub loss: Option<f64>,
    pub eval_return: f64,
    pub eps_consumed: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub private_steps: usize,
    pub public_steps: usize,
    pub empty_private_batches: usize,
    pub max_clipped_norm: f64,
    pub duplicate_expert_batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accountant {
    pub sigma: f64,
    pub q: f64,
    pub steps: usize,
    pub delta: f64,
    pub eps_actual: f64,
    pub accounting: Accounting,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: QNet,
    pub curve: Vec<CurveRow>,
    pub stats: TrainStats,
    pub accountant: Option<Accountant>,
    pub private_log: Vec<PrivateStepLog>,
}

fn plan_accountant(
    cfg: &TrainConfig,
    private_steps: usize,
    m: usize,
    eps2: f64,
    delta2: f64,
) -> Result<Accountant> {
    ensure!(
        eps2 > 0.0 && delta2 > 0.0,
        Config,
        "the private branch needs a positive training budget, got ({eps2}, {delta2})"
    );
    let base_q = cfg.batch as f64 / m as f64;
    let (q, steps) = match cfg.accounting {
        Accounting::PrivateSteps => (base_q, private_steps),
        Accounting::AllSteps => (cfg.p * base_q, cfg.steps),
    };
    let sigma = match cfg.sigma {
        SigmaSpec::Auto(_) => calibrate_noise(eps2, delta2, q, steps)?,
        SigmaSpec::Fixed(s) => s,
    };
    let eps_actual = if sigma > 0.0 {
        dpsgd_epsilon(sigma, q, steps, delta2)?
    } else {
        f64::INFINITY
    };
    if eps_actual > eps2 * (1.0 + 1e-12) {
        return Err(Error::BudgetViolation(format!(
            "sigma {sigma} over {steps} steps at q = {q:.5} gives epsilon {eps_actual:.4} > {eps2}"
        )));
    }
    Ok(Accountant {
        sigma,
        q,
        steps,
        delta: delta2,
        eps_actual,
        accounting: cfg.accounting,
    })
}

/// Selective training: each step is private with probability `p` (expert
/// batches, clipped noisy update) and public otherwise (uniform batch of
/// stable transitions, plain SGD). The private branch charges `(ε2, δ2)`
/// to the ledger once, before any data is touched.
#[allow(clippy::too_many_arguments)]
pub fn selective_train(
    env: &EnvModel,
    stable: &[FeatTransition],
    private: &ExpertPools,
    cfg: &TrainConfig,
    ledger: &mut BudgetLedger,
    seed: u64,
    eval_max_len: usize,
    hooks: TrainHooks,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let gamma = cfg.gamma.unwrap_or(env.gamma());
    let mut schedule_rng = rng::stream(seed, "train-schedule", &[]);
    let schedule: Vec<bool> = (0..cfg.steps).map(|_| schedule_rng.random::<f64>() < cfg.p).collect();
    let private_steps = schedule.iter().filter(|&&b| b).count();
    let public_steps = cfg.steps - private_steps;
    ensure!(
        public_steps == 0 || !stable.is_empty(),
        Config,
        "public steps are scheduled but the stable set is empty"
    );
    let accountant = if private_steps > 0 {
        ensure!(!private.is_empty(), Config, "p > 0 but there are no private transitions");
        ensure!(
            cfg.batch <= private.experts(),
            Config,
            "batch size {} exceeds the ensemble size {}",
            cfg.batch,
            private.experts()
        );
        let acc = plan_accountant(cfg, private_steps, private.experts(), ledger.eps2, ledger.delta2)?;
        ledger.charge(
            "selective_dpsgd",
            serde_json::json!({
                "sigma": acc.sigma,
                "q": acc.q,
                "steps": acc.steps,
                "accounting": acc.accounting,
                "eps_actual": acc.eps_actual,
                "clip": cfg.clip,
                "batch": cfg.batch,
                "p": cfg.p,
                "total_steps": cfg.steps,
            }),
            ledger.eps2,
            ledger.delta2,
        )?;
        Some(acc)
    } else {
        None
    };
    let curve_acc = accountant.as_ref().map(|a| RdpCurve::new(a.sigma, a.q));

    let dims = [env.feature_dim(), cfg.hidden, cfg.hidden, env.action_count()];
    let mut net = QNet::init(dims, &mut rng::stream(seed, "train-init", &[]));
    let mut target = net.clone();
    let mut batch_rng = rng::stream(seed, "train-batch", &[]);
    let mut noise_rng = rng::stream(seed, "train-noise", &[]);
    let mut stats = TrainStats::default();
    let mut log = Vec::new();
    let mut curve = Vec::with_capacity(cfg.steps / cfg.eval_interval + 2);
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    let eval_env = env.with_horizon(eval_max_len)?;
    let record = |step: usize, net: &QNet, private_done: usize, loss: Option<f64>| -> Result<CurveRow> {
        let eval = evaluate(net, &eval_env, cfg.curve_episodes.max(1), rng::derive_seed(seed, "train-eval", &[step as u64]))?;
        let eps = match (&curve_acc, &accountant) {
            (Some(c), Some(a)) => match a.accounting {
                Accounting::PrivateSteps => c.epsilon(private_done, a.delta),
                Accounting::AllSteps => c.epsilon(step, a.delta),
            },
            _ => 0.0,
        };
        Ok(CurveRow {
            step,
            loss,
            eval_return: eval.mean,
            eps_consumed: eps,
        })
    };
    curve.push(record(0, &net, 0, None)?);

    for (step, &is_private) in schedule.iter().enumerate() {
        if is_private {
            let acc = accountant.as_ref().expect("accountant exists when private steps are scheduled");
            let batch = sample_expert_batch(private, cfg.batch, &mut batch_rng)?.unwrap_or_default();
            let ids: Vec<usize> = batch.iter().map(|(e, _)| *e).collect();
            if ids.windows(2).any(|w| w[0] >= w[1]) {
                stats.duplicate_expert_batches += 1;
            }
            debug_assert!(ids.windows(2).all(|w| w[0] < w[1]), "expert appears twice in a batch");
            if batch.is_empty() {
                stats.empty_private_batches += 1;
            }
            let grads: Vec<Vec<f64>> = batch
                .iter()
                .map(|(_, t)| cql_example(&net, &target, t, cfg.cql_alpha, gamma).1)
                .collect();
            let s = dpsgd_step(
                &mut net,
                grads,
                cfg.clip,
                acc.sigma,
                cfg.lr,
                cfg.batch as f64,
                &mut RandomNoise(&mut noise_rng),
                !hooks.disable_clip,
            );
            if !hooks.disable_clip {
                debug_assert!(s.max_clipped_norm <= cfg.clip + 1e-9);
            }
            stats.max_clipped_norm = stats.max_clipped_norm.max(s.max_clipped_norm);
            stats.private_steps += 1;
            if hooks.record_private {
                log.push(PrivateStepLog {
                    step,
                    expert_ids: ids,
                    max_clipped_norm: s.max_clipped_norm,
                });
            }
        } else {
            let batch: Vec<&FeatTransition> = (0..cfg.batch)
                .map(|_| &stable[batch_rng.random_range(0..stable.len())])
                .collect();
            let mut grads = Vec::with_capacity(batch.len());
            for t in &batch {
                let (l, g) = cql_example(&net, &target, t, cfg.cql_alpha, gamma);
                loss_sum += l;
                loss_n += 1;
                grads.push(g);
            }
            sgd_step(&mut net, &mean_grad(&grads), cfg.lr);
            stats.public_steps += 1;
        }
        let done = step + 1;
        if done % cfg.target_refresh == 0 {
            target = net.clone();
        }
        if done % cfg.eval_interval == 0 || done == cfg.steps {
            let loss = (loss_n > 0).then(|| loss_sum / loss_n as f64);
            curve.push(record(done, &net, stats.private_steps, loss)?);
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    ensure!(net.is_finite(), ContractViolation, "training diverged to non-finite parameters");
    Ok(TrainOutcome {
        net,
        curve,
        stats,
        accountant,
        private_log: log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub episodes: usize,
}

impl EvalReport {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let ci95 = if returns.len() > 1 {
            let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        } else {
            0.0
        };
        Self {
            episodes: returns.len(),
            returns,
            mean,
            ci95,
        }
    }
}

pub const DEFAULT_EVAL_EPISODES: usize = 10;

/// Greedy action of `net` at `x`, ties to the lowest index.
pub fn greedy_action(net: &QNet, x: &[f64]) -> usize {
    crate::mdp::argmax(&net.forward(x))
}

/// Undiscounted returns of the greedy policy over `episodes` episodes of at
/// most `env.horizon()` steps.
pub fn evaluate(net: &QNet, env: &EnvModel, episodes: usize, seed: u64) -> Result<EvalReport> {
    ensure!(episodes >= 1, InvalidParameter, "need at least one evaluation episode");
    ensure!(
        net.input_dim() == env.feature_dim() && net.output_dim() == env.action_count(),
        ContractViolation,
        "network shape does not fit the environment"
    );
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut r = rng::stream(seed, "eval", &[ep as u64]);
        let mut s = env.reset(&mut r);
        let mut total = 0.0;
        for _ in 0..env.horizon() {
            if s.is_absorbing() {
                break;
            }
            let a = greedy_action(net, &env.features(&s));
            let out = env.step(&s, a, &mut r)?;
            total += out.reward;
            s = out.next;
        }
        returns.push(total);
    }
    Ok(EvalReport::from_returns(returns))
}
