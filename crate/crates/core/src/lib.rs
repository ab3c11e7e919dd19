//! Graph and text fusion classification for multi-dialect Arabic
//! commonsense validation.

// Negated float comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod expander;
pub mod graph;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
