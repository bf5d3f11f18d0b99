//! Kinetic Langevin dynamics, their mean-field and unconfined variants, and
//! the coupling and metric machinery used to measure contraction and
//! propagation of chaos.

pub mod constants;
pub mod coupling;
pub mod dynamics;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod transport;
