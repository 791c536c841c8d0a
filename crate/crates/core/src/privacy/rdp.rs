//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Fractional orders 1.25..=64 in quarter steps, then integers up to 256.
pub fn orders() -> Vec<f64> {
    let mut out: Vec<f64> = (5..=256).map(|i| i as f64 * 0.25).collect();
    out.extend((65..=256).map(f64::from));
    out
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn log_binom(n: f64, k: f64) -> f64 {
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

/// `ln erfc(x)` without underflow for large `x`.
fn log_erfc(x: f64) -> f64 {
    if x < 25.0 {
        return libm::erfc(x).ln();
    }
    // Asymptotic expansion erfc(x) ~ e^{-x²}/(x√π) (1 - 1/(2x²) + 3/(4x⁴)).
    let r = 1.0 / (x * x);
    -x * x - (x * std::f64::consts::PI.sqrt()).ln() + (1.0 - 0.5 * r + 0.75 * r * r).ln()
}

fn log_a_int(q: f64, sigma: f64, alpha: u32) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let a = f64::from(alpha);
    let mut acc = f64::NEG_INFINITY;
    for i in 0..=alpha {
        let i = f64::from(i);
        let term = log_binom(a, i) + i * lq + (a - i) * l1q + (i * i - i) / (2.0 * sigma * sigma);
        acc = log_add(acc, term);
    }
    acc
}

fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let s2 = std::f64::consts::SQRT_2 * sigma;
    let (mut a0, mut a1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut last0, mut last1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..100_000u32 {
        let i = f64::from(i);
        let j = alpha - i;
        let coef = log_binom(alpha, i);
        let s0 = coef + i * lq + j * l1q + (i * i - i) / (2.0 * sigma * sigma) + (0.5f64).ln()
            + log_erfc((i - z0) / s2);
        let s1 = coef + j * lq + i * l1q + (j * j - j) / (2.0 * sigma * sigma) + (0.5f64).ln()
            + log_erfc((z0 - j) / s2);
        a0 = log_add(a0, s0);
        a1 = log_add(a1, s1);
        let total = log_add(a0, a1);
        if s0 < last0 && s1 < last1 && s0.max(s1) < total - 30.0 {
            return total;
        }
        last0 = s0;
        last1 = s1;
    }
    f64::INFINITY
}

/// RDP of one step of the subsampled Gaussian at order `alpha`.
pub fn rdp_step(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    if q == 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let log_a = if alpha.fract() == 0.0 {
        log_a_int(q, sigma, alpha as u32)
    } else {
        log_a_frac(q, sigma, alpha)
    };
    log_a / (alpha - 1.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conversion {
    /// `ε = ρ + ln((α-1)/α) - (ln δ + ln α)/(α-1)`, never looser than classic.
    #[default]
    Improved,
    /// `ε = ρ + ln(1/δ)/(α-1)`.
    Classic,
}

/// Converts a composed RDP curve to ε at `delta`, minimised over orders.
pub fn rdp_to_epsilon(orders: &[f64], rdp: &[f64], delta: f64, conversion: Conversion) -> f64 {
    orders
        .iter()
        .zip(rdp)
        .map(|(&a, &r)| {
            let classic = r + (1.0 / delta).ln() / (a - 1.0);
            match conversion {
                Conversion::Classic => classic,
                Conversion::Improved => {
                    let improved = r + ((a - 1.0) / a).ln() - (delta.ln() + a.ln()) / (a - 1.0);
                    improved.min(classic)
                }
            }
        })
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// ε after `steps` compositions of the subsampled Gaussian with noise
/// multiplier `sigma` and sampling rate `q`. Returns `f64::INFINITY` when
/// no order gives a finite bound.
pub fn dpsgd_epsilon(sigma: f64, q: f64, steps: usize, delta: f64) -> Result<f64> {
    dpsgd_epsilon_with(sigma, q, steps, delta, Conversion::Improved)
}

pub fn dpsgd_epsilon_with(sigma: f64, q: f64, steps: usize, delta: f64, conversion: Conversion) -> Result<f64> {
    ensure!(sigma > 0.0 && sigma.is_finite(), InvalidParameter, "sigma must be positive, got {sigma}");
    ensure!(q > 0.0 && q <= 1.0, InvalidParameter, "q must lie in (0, 1], got {q}");
    ensure!(delta > 0.0 && delta < 1.0, InvalidParameter, "delta must lie in (0, 1), got {delta}");
    if steps == 0 {
        return Ok(0.0);
    }
    let orders = orders();
    let rdp: Vec<f64> = orders.iter().map(|&a| steps as f64 * rdp_step(q, sigma, a)).collect();
    Ok(rdp_to_epsilon(&orders, &rdp, delta, conversion))
}

/// Per-step RDP of one `(sigma, q)` pair, reusable across step counts.
#[derive(Clone, Debug)]
pub struct RdpCurve {
    orders: Vec<f64>,
    per_step: Vec<f64>,
}

impl RdpCurve {
    pub fn new(sigma: f64, q: f64) -> Self {
        let orders = orders();
        let per_step = orders.iter().map(|&a| rdp_step(q, sigma, a)).collect();
        Self { orders, per_step }
    }

    pub fn epsilon(&self, steps: usize, delta: f64) -> f64 {
        if steps == 0 {
            return 0.0;
        }
        let rdp: Vec<f64> = self.per_step.iter().map(|r| steps as f64 * r).collect();
        rdp_to_epsilon(&self.orders, &rdp, delta, Conversion::Improved)
    }
}

pub const SIGMA_RANGE: (f64, f64) = (0.5, 512.0);

/// Smallest noise multiplier in [`SIGMA_RANGE`] (to bisection precision)
/// whose ε does not exceed `eps`.
pub fn calibrate_noise(eps: f64, delta: f64, q: f64, steps: usize) -> Result<f64> {
    ensure!(eps > 0.0, InvalidParameter, "target epsilon must be positive");
    let (lo, hi) = SIGMA_RANGE;
    let f = |s: f64| dpsgd_epsilon(s, q, steps, delta);
    if f(hi)? > eps {
        return Err(Error::Calibration(format!(
            "even sigma = {hi} exceeds epsilon {eps} (q = {q}, steps = {steps})"
        )));
    }
    if f(lo)? <= eps {
        return Ok(lo);
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid)? <= eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
