//! Soft actor-critic, continuous-control environments and adversarial
//! reset training built on top of them.

pub mod arl;
pub mod disentangle;
pub mod env;
pub mod error;
pub mod eval;
pub mod maze;
pub mod nn;
pub mod sac;

pub use error::{Error, Result};
