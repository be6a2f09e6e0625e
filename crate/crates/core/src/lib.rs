//! Online dispatching of stochastic jobs to servers under long-term
//! constraints, with rewards learned by optimistic indices.
//!
//! Each slot a random number of jobs of every type arrives. The POND rule
//! sends each type to the server with the largest `V·r̂ − Σ_k W·Q` weight,
//! where `r̂` is a UCB or MOSS index and `Q` are virtual queues tracking
//! every constraint family (capacity, fairness, resource, or custom).
//!
//! ```
//! use pond::dispatch::{run_pond_trial, PondParams};
//! use pond::instance::{ConstraintParams, ConstraintKind, Dist, InstanceSpec};
//! use pond::learners::Learner;
//! use pond::matrix::Matrix;
//!
//! let spec = InstanceSpec {
//!     arrivals: vec![Dist::Bernoulli(0.5)],
//!     rewards: Matrix::from_rows(vec![vec![Dist::Bernoulli(0.9), Dist::Bernoulli(0.1)]]).unwrap(),
//!     constraints: vec![ConstraintParams {
//!         kind: Some(ConstraintKind::Capacity),
//!         service: Some(vec![Dist::Deterministic(0.3), Dist::Deterministic(0.3)]),
//!         ..Default::default()
//!     }],
//!     c_lambda: 1.0,
//!     c_u: 1.0,
//! };
//! let inst = spec.build().unwrap();
//! let params = PondParams { v: 20.0, epsilon: 0.0, learner: Learner::Ucb };
//! let record = run_pond_trial(&inst, params, 400, 7).unwrap();
//! assert_eq!(record.slots.len(), 400);
//! ```
//!
//! The guide in `book/` walks through every module; its code blocks run as
//! doc-tests of this crate.

pub mod baselines;
pub mod dispatch;
pub mod fluid_lp;
pub mod harness;
pub mod instance;
pub mod learners;
pub mod matrix;
pub mod metrics;
mod simplex;
pub mod stochastic;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/randomness.md")]
    struct Randomness;
    #[doc = include_str!("../../../book/src/learners.md")]
    struct Learners;
    #[doc = include_str!("../../../book/src/dispatch.md")]
    struct Dispatch;
    #[doc = include_str!("../../../book/src/fluid-lp.md")]
    struct FluidLp;
    #[doc = include_str!("../../../book/src/baselines.md")]
    struct Baselines;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
    #[doc = include_str!("../../../book/src/replay.md")]
    struct Replay;
}
