use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};

/// Laplace draw with scale `b` by inverse CDF. The lone uniform value that
/// would map to infinity is redrawn.
pub fn sample_laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> Result<f64> {
    ensure!(b > 0.0 && b.is_finite(), InvalidParameter, "Laplace scale must be positive and finite, got {b}");
    Ok(laplace(b, rng))
}

pub(crate) fn laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        if u > -0.5 {
            return -b * u.signum() * (-2.0 * u.abs()).ln_1p();
        }
    }
}

/// Centred normal draw with standard deviation `sigma`; exactly zero when
/// `sigma == 0`.
pub fn sample_gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Result<f64> {
    ensure!(sigma >= 0.0 && sigma.is_finite(), InvalidParameter, "sigma must be non-negative, got {sigma}");
    Ok(gaussian(sigma, rng))
}

pub(crate) fn gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

/// Where mechanisms get their noise from.
pub trait NoiseSource {
    fn laplace(&mut self, b: f64) -> f64;
    fn gaussian(&mut self, sigma: f64) -> f64;
    /// True only for the test-only [`ZeroNoise`] source.
    fn is_zero(&self) -> bool {
        false
    }
}

/// Noise drawn from a random stream.
pub struct RandomNoise<'a, R: Rng + ?Sized>(pub &'a mut R);

impl<R: Rng + ?Sized> NoiseSource for RandomNoise<'_, R> {
    fn laplace(&mut self, b: f64) -> f64 {
        laplace(b, self.0)
    }

    fn gaussian(&mut self, sigma: f64) -> f64 {
        gaussian(sigma, self.0)
    }
}

/// Replaces every draw with zero. Only compiled for tests or with the
/// `zero-noise` feature, and refused by every code path that writes a
/// budget ledger.
#[cfg(any(test, feature = "zero-noise"))]
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

#[cfg(any(test, feature = "zero-noise"))]
impl NoiseSource for ZeroNoise {
    fn laplace(&mut self, _b: f64) -> f64 {
        0.0
    }

    fn gaussian(&mut self, _sigma: f64) -> f64 {
        0.0
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}
