use rand::Rng;

use super::cql::FeatTransition;
use super::net::QNet;
use crate::error::{ensure, Result};
use crate::privacy::NoiseSource;

/// Private transitions grouped by the expert that generated them.
#[derive(Clone, Debug, Default)]
pub struct ExpertPools {
    pools: Vec<Vec<FeatTransition>>,
}

impl ExpertPools {
    /// `m` is the ensemble size; every expert gets a (possibly empty) pool.
    pub fn new(m: usize, items: impl IntoIterator<Item = (usize, FeatTransition)>) -> Result<Self> {
        let mut pools = vec![Vec::new(); m];
        for (expert, t) in items {
            ensure!(expert < m, InvalidParameter, "expert {expert} outside an ensemble of {m}");
            pools[expert].push(t);
        }
        Ok(Self { pools })
    }

    pub fn experts(&self) -> usize {
        self.pools.len()
    }

    pub fn transitions(&self) -> usize {
        self.pools.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions() == 0
    }

    pub fn pool(&self, expert: usize) -> &[FeatTransition] {
        &self.pools[expert]
    }
}

/// Poisson expert sampling: each expert joins with probability `b/m` and,
/// if it holds private data, contributes one uniformly chosen transition.
/// Returns `None` when nobody contributes.
pub fn sample_expert_batch<'a, R: Rng + ?Sized>(
    pools: &'a ExpertPools,
    b: usize,
    rng: &mut R,
) -> Result<Option<Vec<(usize, &'a FeatTransition)>>> {
    let m = pools.experts();
    ensure!(!pools.is_empty(), ContractViolation, "no private transitions to sample from");
    ensure!(b >= 1 && b <= m, InvalidParameter, "batch size {b} must lie in [1, {m}]");
    let rate = b as f64 / m as f64;
    let mut batch = Vec::new();
    for expert in 0..m {
        if rng.random::<f64>() < rate {
            let pool = pools.pool(expert);
            if !pool.is_empty() {
                batch.push((expert, &pool[rng.random_range(0..pool.len())]));
            }
        }
    }
    Ok((!batch.is_empty()).then_some(batch))
}

pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scales `g` by `min(1, c / ‖g‖)` in place and returns the new norm.
pub fn clip_gradient(g: &mut [f64], c: f64) -> f64 {
    let norm = l2_norm(g);
    if norm > c {
        let s = c / norm;
        g.iter_mut().for_each(|v| *v *= s);
        return l2_norm(g);
    }
    norm
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DpStepStats {
    pub examples: usize,
    pub max_clipped_norm: f64,
}

/// One noisy update: clip each per-example gradient to `clip`, add
/// `N(0, σ²C²)` per coordinate to the sum, divide by `denominator`, step.
/// With `enforce_clip == false` clipping is skipped (fault injection only).
#[allow(clippy::too_many_arguments)]
pub fn dpsgd_step<N: NoiseSource + ?Sized>(
    net: &mut QNet,
    mut grads: Vec<Vec<f64>>,
    clip: f64,
    sigma: f64,
    eta: f64,
    denominator: f64,
    noise: &mut N,
    enforce_clip: bool,
) -> DpStepStats {
    assert!(clip > 0.0 && denominator > 0.0);
    let mut sum = vec![0.0; net.params.len()];
    let mut max_norm: f64 = 0.0;
    for g in &mut grads {
        let norm = if enforce_clip { clip_gradient(g, clip) } else { l2_norm(g) };
        max_norm = max_norm.max(norm);
        for (s, v) in sum.iter_mut().zip(g.iter()) {
            *s += v;
        }
    }
    for (p, s) in net.params.iter_mut().zip(&sum) {
        *p -= eta * (s + noise.gaussian(sigma * clip)) / denominator;
    }
    DpStepStats {
        examples: grads.len(),
        max_clipped_norm: max_norm,
    }
}
