//! Distributed optimization for double-integrator agents under nonconvex
//! velocity constraints and convex position constraints.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod objectives;
pub mod output;
pub mod report;
pub mod scenario;
pub mod topology;

pub use geometry::Vector;
