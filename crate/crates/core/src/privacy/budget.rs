use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Relative slack used when comparing composed budgets against targets.
const BUDGET_RTOL: f64 = 1e-12;

/// Per-iteration parameters of the stable-prefix release.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReleaseParams {
    pub eps1: f64,
    pub delta1: f64,
    pub eps_prime: f64,
    pub delta_prime: f64,
    pub c_min: f64,
    pub theta: f64,
    /// Number of trajectories scanned.
    pub t: usize,
    /// Horizon.
    pub l: usize,
    pub p_min: f64,
}

impl ReleaseParams {
    /// Shift added to `theta` before the per-trajectory Laplace draw.
    pub fn threshold_shift(&self) -> f64 {
        4.0 / self.eps_prime * (1.0 / self.delta_prime).ln()
    }

    pub fn query_scale(&self) -> f64 {
        4.0 / self.eps_prime
    }

    pub fn threshold_scale(&self) -> f64 {
        2.0 / self.eps_prime
    }
}

/// `c_min = e^ε / (e^ε - 1)`, evaluated stably for small ε.
pub fn c_min(eps_prime: f64) -> f64 {
    1.0 / (-(-eps_prime).exp_m1())
}

pub fn derive_release_params(eps1: f64, delta1: f64, t: usize, l: usize, p_min: f64) -> Result<ReleaseParams> {
    ensure!(eps1 > 0.0 && eps1.is_finite(), InvalidParameter, "eps1 must be positive, got {eps1}");
    ensure!(
        delta1 > 0.0 && delta1 < 1.0,
        InvalidParameter,
        "delta1 must lie in (0, 1), got {delta1}"
    );
    ensure!(t >= 1, InvalidParameter, "T must be at least 1");
    ensure!(l >= 1, InvalidParameter, "L must be at least 1");
    ensure!(p_min > 0.0 && p_min < 1.0, InvalidParameter, "p_min must lie in (0, 1), got {p_min}");
    let eps_prime = eps1 / (32.0 * t as f64 * (2.0 / delta1).ln()).sqrt();
    let delta_prime = delta1 / (2.0 * t as f64 * l as f64);
    let c = c_min(eps_prime);
    Ok(ReleaseParams {
        eps1,
        delta1,
        eps_prime,
        delta_prime,
        c_min: c,
        theta: c / p_min,
        t,
        l,
        p_min,
    })
}

/// Advanced composition of `k` `(eps_step, delta_step)` mechanisms with
/// slack `delta_slack`.
pub fn advanced_composition(k: usize, eps_step: f64, delta_step: f64, delta_slack: f64) -> (f64, f64) {
    let k = k as f64;
    let eps = eps_step * (2.0 * k * (1.0 / delta_slack).ln()).sqrt() + k * eps_step * eps_step.exp_m1();
    (eps, k * delta_step + delta_slack)
}

/// Composes `T` per-iteration `(2ε′, δ1/2T)` guarantees with slack `δ1/2`
/// and checks the result fits in `(ε1, δ1)`.
pub fn check_release_budget(p: &ReleaseParams) -> Result<(f64, f64)> {
    ensure!(p.t >= 1, InvalidParameter, "T must be at least 1");
    let t = p.t as f64;
    let (eps, delta) = advanced_composition(p.t, 2.0 * p.eps_prime, p.delta1 / (2.0 * t), p.delta1 / 2.0);
    if eps > p.eps1 * (1.0 + BUDGET_RTOL) || delta > p.delta1 * (1.0 + BUDGET_RTOL) || !eps.is_finite() {
        return Err(Error::BudgetViolation(format!(
            "release composes to ({eps:.6}, {delta:.3e}), exceeding ({}, {:.3e})",
            p.eps1, p.delta1
        )));
    }
    Ok((eps, delta))
}

/// How the total budget is divided between release and training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SplitRule {
    /// `ε1 = 3ε/4`, `δ1 = 9δ/10`.
    #[default]
    Default,
    /// Everything to the release; training must be public-only.
    ReleaseOnly,
    /// Everything to DP-SGD; no release.
    DpsgdOnly,
    Fractions { eps1: f64, delta1: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSplit {
    pub eps1: f64,
    pub delta1: f64,
    pub eps2: f64,
    pub delta2: f64,
}

impl BudgetSplit {
    pub fn eps(&self) -> f64 {
        self.eps1 + self.eps2
    }

    pub fn delta(&self) -> f64 {
        self.delta1 + self.delta2
    }
}

impl SplitRule {
    pub fn split(&self, eps: f64, delta: f64) -> Result<BudgetSplit> {
        ensure!(eps > 0.0 && eps.is_finite(), InvalidParameter, "epsilon must be positive, got {eps}");
        ensure!(delta > 0.0 && delta < 1.0, InvalidParameter, "delta must lie in (0, 1), got {delta}");
        let (fe, fd) = match *self {
            SplitRule::Default => (0.75, 0.9),
            SplitRule::ReleaseOnly => (1.0, 1.0),
            SplitRule::DpsgdOnly => (0.0, 0.0),
            SplitRule::Fractions { eps1, delta1 } => {
                ensure!(
                    (0.0..=1.0).contains(&eps1) && (0.0..=1.0).contains(&delta1),
                    InvalidParameter,
                    "split fractions must lie in [0, 1]"
                );
                (eps1, delta1)
            }
        };
        let (eps1, delta1) = (fe * eps, fd * delta);
        let split = BudgetSplit {
            eps1,
            delta1,
            eps2: eps - eps1,
            delta2: delta - delta1,
        };
        ensure!(
            split.eps() == eps && split.delta() == delta,
            InvalidParameter,
            "split of ({eps}, {delta}) does not add up exactly; choose other fractions"
        );
        Ok(split)
    }
}
