//! Expert-level differentially private offline reinforcement learning.
//!
//! The crate covers the whole pipeline: small MDPs and exact planners
//! ([`mdp`]), floored expert ensembles and their demonstration data
//! ([`experts`]), noise mechanisms and budget accounting ([`privacy`]), the
//! stable-prefix release mechanism ([`release`]), conservative Q-learning with
//! selective expert-level DP-SGD ([`rl`]), executable privacy checks
//! ([`verify`]) and the experiment driver behind the `expertdp` binary
//! ([`harness`]).

pub mod error;
pub mod experts;
pub mod harness;
pub mod io;
pub mod mdp;
pub mod privacy;
pub mod release;
pub mod rl;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
