//! Learning Hamiltonians together with affine Lie-algebra symmetries from
//! vector-field snapshots, plus the tooling to generate data and check the
//! learned models with symplectic rollouts and Noether quantities.

pub mod datagen;
pub mod dense;
pub mod diffnet;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod integrators;
pub mod pipeline;
pub mod rng;
pub mod systems;
pub mod training;

pub use error::{Error, ErrorClass, Result};
