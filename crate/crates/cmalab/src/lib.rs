//! Numerical laboratory for the complex Monge-Ampere equation det(u_{i jbar}) = f
//! on near-ball domains of C^n, n in {1, 2}: Dirichlet solves, section chains
//! with pluriharmonic shifts, engulfing and covering checks, convex envelopes
//! and the dyadic bad-set decay behind interior W^{2,p} bounds.

pub mod badset;
pub mod covering;
pub mod engulfing;
pub mod error;
pub mod expr;
pub mod grid;
pub mod linalg;
pub mod pipeline;
pub mod sections;
pub mod solver;
pub mod w2p;

pub use error::{Error, Result};
