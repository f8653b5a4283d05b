//! Simulation and analysis of heavy-tailed bursts in regime-switching linear
//! networks with sum-of-exponentials memory, and their mitigation by a
//! hysteretic mode controller.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod controller;
pub mod estimators;
pub mod experiment;
pub mod integrator;
pub mod linalg;
pub mod model;
pub mod regime;
pub mod rng;
pub mod soe_kernel;
pub mod tailfit;
