//! Primal-dual distributed resource allocation under Byzantine uplink attacks.
//!
//! The crate is organised as the problem substrate ([`problem`]), the robust
//! mean estimator ([`robust`]), the attack model ([`attack`]), the solvers
//! ([`solvers`]), the round driver ([`sim`]), instance generators
//! ([`problems`]) and the ground-truth oracle with bound checks
//! ([`metrics`]).

pub mod attack;
pub mod error;
pub mod metrics;
pub mod par;
pub mod problem;
pub mod problems;
pub mod report;
pub mod robust;
pub mod sim;
pub mod solvers;
pub mod vecops;

pub use error::{PdraError, Result};
pub use par::Exec;
