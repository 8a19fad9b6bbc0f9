//! Hindsight observable MDPs at desk scale.
//!
//! A HOMDP is a finite-horizon POMDP whose latent states are revealed to the
//! learner after each training episode. This crate provides exact
//! history-tree planning and evaluation, the HOP-B (count-based bonuses) and
//! HOP-V (version spaces) learners, the binary-tree lower-bound instance
//! family, and a harness that measures regret with exact policy values.

pub mod error;
pub mod model;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod planner;
pub mod io;
pub mod runlog;
pub mod hopb;
pub mod hopv;
pub mod hard;
pub mod harness;

pub use error::{HomdpError, Result};
pub use hard::{build_hard_instance, HardInstanceSpec, HardSidecar, PackingSet};
pub use harness::{pac_readout, run_algorithm, run_sweep, scaling_experiment, PacHit, SweepConfig};
pub use hopb::{run_hopb, run_hopb_mle, BonusParams, HopbState, InitScheme};
pub use hopv::{run_hopv, HopvState, ModelClass, VersionSpace};
pub use model::{
    canonical_history_key, validate_emissions, validate_model, validate_transitions, EmissionTable,
    Environment, HistoryKey, HomdpModel, LatentTrajectory, LearnerView, ObservedHistory, Pomdp,
    RewardTable, TransitionTable, Violation,
};
pub use planner::{eval_policy_enum, pop_plan, Belief, Budget, PlanResult};
pub use policy::{ActionDist, HistoryPolicy, TablePolicy, UniformPolicy};
pub use rng::RngStream;
pub use runlog::{Algorithm, RunConfig, RunLog, RunRow};
pub use sim::EpisodeRecord;
