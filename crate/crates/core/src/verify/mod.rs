//! Executable privacy checks: exact count sensitivity and event ratios on
//! tiny MDPs, Monte-Carlo and quadrature checks of the threshold tail, an
//! empirical hockey-stick audit of the release, and DP-SGD batch mechanics.

pub mod audit;
pub mod checks;
pub mod suite;
pub mod tiny;

pub use audit::{empirical_divergence, empirical_dp_audit, hockey_stick, AuditResult, OutputSpace};
pub use checks::{
    check_count_sensitivity, check_event_ratio, estimate_false_stable_rate, tail_quadrature, FalseStable, RatioCheck,
    TailQuadrature,
};
pub use suite::{run_suite, CheckReport, SuiteReport, Verdict, VerifyConfig};
pub use tiny::{random_pair, NeighbourPair, TinyInstance, TinySpec};

#[cfg(test)]
mod tests;
