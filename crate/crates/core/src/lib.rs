//! Flow and injection estimation for transmission grids that are only
//! sparsely observed by phasor measurement units.
//!
//! The crate covers the whole chain: parsing matrix-format case files,
//! solving AC power flow, synthesizing correlated load scenarios and noisy
//! PMU phasors, PMU-only linear state estimation, a from-scratch MLP with
//! Adam, and the estimators compared on top of it (linear regression,
//! direct/indirect DNNs and the constrained, binned DNN that enforces
//! `injections = A * flows` by construction).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod eval;
pub mod lse;
pub mod measurement;
pub mod netmodel;
pub mod nn;
pub mod par;
pub mod placement;
pub mod powerflow;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
pub use netmodel::{Grid, NetworkModel};
