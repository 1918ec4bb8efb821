//! Learning pipeline for DC optimal power flow on desk-scale systems.
//!
//! The crate provides, bottom to top:
//! - [`grid`]: system data model, quadratic generation costs, the embedded
//!   IEEE 30-bus case;
//! - [`ptdf`]: DC power flow diagnostics;
//! - [`oracle`]: exact economic-dispatch ground truth with first-order
//!   optimality certification;
//! - [`projection`]: soft (differentiable) and hard (iterative) constraint
//!   projection;
//! - [`autodiff`] / [`optim`]: the reverse-mode engine and optimizers the
//!   networks train with;
//! - [`gnn`]: the physics-informed graph network (stage 1);
//! - [`cfm`]: the flow-matching refiner (stage 2);
//! - [`dataset`]: oracle-labelled sample generation and persistence.

pub mod autodiff;
pub mod cfm;
pub mod dataset;
pub mod gnn;
pub mod grid;
pub mod linalg;
pub mod optim;
pub mod oracle;
pub mod projection;
pub mod ptdf;

pub use grid::{build_case30, cost, marginal_cost, DispatchVector, LoadVector, PowerSystem};
