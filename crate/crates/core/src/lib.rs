//! Cooperative communication as entropy-regularized optimal transport.
//!
//! A teacher and a learner share common ground: a consistency matrix over
//! data and hypotheses plus priors on both sides. Optimal communication
//! plans are Sinkhorn limits of kernels built from that ground; shallower
//! models (pragmatic speaker/listener, Bayesian teaching, argmax planning)
//! are truncations of the same scaling loop. This crate provides:
//!
//! * [`scaling`]: the (r, c)-Sinkhorn engine, linear and log domain, with
//!   dual potentials and optional feasible-support trimming;
//! * [`planning`]: cost matrices and plan constructors, from the full EOT
//!   plan down to one-step and argmax approximations;
//! * [`metrics`]: the Cooperative Index, diagonal/cross-ratio analysis,
//!   information measures, and plan distances;
//! * [`gradients`]: analytic derivatives of the Sinkhorn-limit map against
//!   a finite-difference oracle, plus one-step linear repair of plans;
//! * [`experiments`]: seeded, thread-count-independent Monte-Carlo studies
//!   of robustness under common-ground perturbations;
//! * [`scenarios`]: the worked apple/quantifier scenes and the sensitivity
//!   examples.

pub mod assignment;
pub mod divergence;
pub mod error;
pub mod experiments;
pub mod feasibility;
pub mod gradients;
pub mod matrix;
pub mod metrics;
pub mod planning;
pub mod scaling;
pub mod scenarios;

pub use error::{Error, Result};
pub use matrix::{Dense, MarginalVector, NonnegMatrix, RealMatrix};
pub use planning::{CommonGround, Plan, PlanKind};
pub use scaling::{
    sinkhorn, sinkhorn_log, sinkhorn_log_warm, Domain, LogKernel, SinkhornOptions, SinkhornResult,
};
