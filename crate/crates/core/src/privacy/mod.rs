//! Noise mechanisms, budget arithmetic and accounting.

mod budget;
mod ledger;
mod noise;
mod rdp;

pub use budget::{
    advanced_composition, c_min, check_release_budget, derive_release_params, BudgetSplit, ReleaseParams, SplitRule,
};
pub use ledger::{BudgetLedger, LedgerEntry};
#[cfg(any(test, feature = "zero-noise"))]
pub use noise::ZeroNoise;
pub use noise::{normal_cdf, sample_gaussian, sample_laplace, NoiseSource, RandomNoise};
#[cfg(test)]
pub(crate) use noise::laplace;
pub use rdp::{
    calibrate_noise, dpsgd_epsilon, dpsgd_epsilon_with, orders, rdp_step, rdp_to_epsilon, Conversion, RdpCurve, SIGMA_RANGE,
};
