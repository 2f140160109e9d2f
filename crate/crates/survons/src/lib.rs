//! Online second-order convex optimization for right-censored survival data
//! under the exponential hazard model.
//!
//! The crate is organized around the online protocol: a [`cohort`] produces
//! per-interval loss contexts, [`likelihood`] evaluates the interval negative
//! log-likelihood with exact gradient and Hessian, [`concavity`] estimates the
//! adaptive curvature constants driving the learning rate, [`optim`] hosts the
//! learners (OGD, ONS, and the BOA-aggregated adaptive variant), [`bounds`]
//! evaluates the closed-form regret bound curves, and [`bench`] runs the
//! replicated simulation experiments behind the CLI.

pub mod bench;
pub mod bounds;
pub mod cohort;
pub mod concavity;
pub mod error;
pub mod likelihood;
pub mod optim;
pub mod rng;

pub use error::{Result, SurvError};
