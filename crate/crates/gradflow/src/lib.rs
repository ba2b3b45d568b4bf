//! Generalized gradient systems with cosh-type dissipation and numerical
//! checks of their evolutionary limits.

pub mod checks;
pub mod error;
pub mod numerics;
pub mod oracle;
pub mod gradsys;
pub mod markov;
pub mod membrane;
pub mod potentials;
pub mod reaction;
pub mod three_state;

pub use error::{Error, Result};
