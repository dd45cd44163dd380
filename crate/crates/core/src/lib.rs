//! Grey-box evaluation of feature interaction attribution methods.
//!
//! Small sequence classifiers are trained to perfection on formal languages
//! whose dependency structure is known by construction; interaction methods
//! are then scored by how highly they rank the grammar's dependency pairs.

pub mod arr;
pub mod classifier;
pub mod diff;
pub mod error;
pub mod grammar;
pub mod interactions;
pub mod oracle;
pub mod removal;
pub mod rng;

pub use error::{Error, Result};
