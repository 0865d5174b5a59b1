//! Sparse covers and learners for sums of independent integer-valued random
//! variables with unbounded support.
//!
//! The crate is layered around a brute-force oracle: [`pmf_core`] does exact
//! finite-window pmf arithmetic with certified tail bounds, and everything
//! above it — the exponential-family engine ([`expfam`]), the polyhedral
//! projection machinery ([`geometry`]), cover construction ([`covers`]),
//! closed-form approximation bounds ([`approx`]) and the tournament-based
//! learners ([`learning`]) — is validated against that oracle at desk scale.

// Validation guards are written `!(x > 0.0)` on purpose: NaN must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod catalog;
pub mod config;
pub mod covers;
pub mod expfam;
pub mod geometry;
pub mod learning;
pub mod pmf_core;
pub mod rng;

pub use config::Constants;
pub use expfam::{ExpFamilySpec, ParamVector};
pub use pmf_core::{PMFTable, SIIRVSpec};
pub use rng::SplitRng;
