//! Independent reference implementations used to cross-check the fast paths:
//! finite differences for derivatives, literal subset sums for the Shapley
//! indices, and a plain Riemann-sum integrated gradients.

mod finite;
mod net;
mod shapley;

pub use finite::{central_cross_hessian, central_gradient};
pub use net::RandomNet;
pub use shapley::{integrated_gradients, sii_bruteforce, stii_bruteforce, stii_over_orderings};
